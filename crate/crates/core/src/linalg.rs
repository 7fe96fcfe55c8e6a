//! Small dense linear-algebra and order-statistic helpers shared by the
//! projection, regression and metric modules.

use nalgebra::{DMatrix, DVector};

/// Thin SVD with singular values sorted in nonincreasing order.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

/// Thin SVD with singular values sorted in nonincreasing order.
///
/// Uses the bidiagonal solver when its factors pass a reconstruction and
/// orthogonality check. Otherwise, which happens for some rank-deficient
/// input, falls back to Householder QR plus one-sided Jacobi on R.
pub fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    gram_svd(m).or_else(|| fast_svd(m)).unwrap_or_else(|| jacobi_svd(m))
}

/// SVD from the eigendecomposition of the smaller Gram matrix. Loses
/// accuracy in small singular directions, so callers must verify it.
fn gram_svd(m: &DMatrix<f64>) -> Option<ThinSvd> {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 || !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let tall = r >= c;
    let gram = if tall { m.tr_mul(m) } else { m * m.transpose() };
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let singular_values = DVector::from_iterator(k, order.iter().map(|&j| eig.eigenvalues[j].max(0.0).sqrt()));
    let smax = singular_values[0];
    // small directions carry error of order eps·smax²/s; leave them to the exact solvers
    if !(smax > 0.0) || singular_values[k - 1] < 1e-4 * smax {
        return None;
    }
    let basis = eig.eigenvectors.select_columns(order.iter());
    let other = if tall { m * &basis } else { m.tr_mul(&basis) };
    let mut other = other;
    for (j, mut col) in other.column_iter_mut().enumerate() {
        col /= singular_values[j];
    }
    let (u, v_t) = if tall { (other, basis.transpose()) } else { (basis, other.transpose()) };
    verified(m, ThinSvd { u, singular_values, v_t })
}

/// Keep a factorization only if it reconstructs `m` with orthonormal factors.
fn verified(m: &DMatrix<f64>, s: ThinSvd) -> Option<ThinSvd> {
    let (r, c) = m.shape();
    let k = r.min(c);
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-10 * (r.max(c) as f64).sqrt();
    let eye = DMatrix::<f64>::identity(k, k);
    let recon = (&s.u * DMatrix::from_diagonal(&s.singular_values) * &s.v_t - m).norm() / scale;
    let ortho_u = (s.u.tr_mul(&s.u) - &eye).amax();
    let ortho_v = (&s.v_t * s.v_t.transpose() - &eye).amax();
    (recon < tol && ortho_u < tol && ortho_v < tol).then_some(s)
}

fn fast_svd(m: &DMatrix<f64>) -> Option<ThinSvd> {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 || !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = m.clone().try_svd(true, true, f64::EPSILON, 0)?;
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let u = u.select_columns(order.iter());
    let v_t = v_t.select_rows(order.iter());
    let singular_values = DVector::from_iterator(k, order.iter().map(|&j| svd.singular_values[j]));
    verified(m, ThinSvd { u, singular_values, v_t })
}

/// Householder QR followed by one-sided Jacobi rotations on R.
fn jacobi_svd(m: &DMatrix<f64>) -> ThinSvd {
    if m.nrows() < m.ncols() {
        let t = jacobi_svd(&m.transpose());
        return ThinSvd {
            u: t.v_t.transpose(),
            singular_values: t.singular_values,
            v_t: t.u.transpose(),
        };
    }
    let n = m.ncols();
    if n == 0 {
        return ThinSvd {
            u: DMatrix::zeros(m.nrows(), 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, 0),
        };
    }
    let qr = m.clone().qr();
    let (q, r) = qr.unpack();
    let (w, v) = jacobi_orthogonalize(r);

    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let smax = norms[order[0]];
    let mut singular_values = DVector::zeros(n);
    let mut u_r = DMatrix::zeros(n, n);
    let mut v_sorted = DMatrix::zeros(n, n);
    let mut filled = 0;
    for (k, &j) in order.iter().enumerate() {
        singular_values[k] = norms[j];
        v_sorted.set_column(k, &v.column(j));
        if norms[j] > smax * f64::EPSILON * n as f64 && norms[j] > 0.0 {
            let col = w.column(j) / norms[j];
            u_r.set_column(k, &col);
            filled = k + 1;
        }
    }
    // complete the left basis for numerically null directions
    for k in filled..n {
        singular_values[k] = singular_values[k].min(smax * f64::EPSILON * n as f64);
        let mut best = DVector::zeros(n);
        for e in 0..n {
            let mut cand = DVector::zeros(n);
            cand[e] = 1.0;
            for _ in 0..2 {
                for i in 0..k {
                    let d = u_r.column(i).dot(&cand);
                    cand.axpy(-d, &u_r.column(i), 1.0);
                }
            }
            if cand.norm() > best.norm() {
                best = cand;
            }
            if best.norm() > 0.5 {
                break;
            }
        }
        let nb = best.norm();
        u_r.set_column(k, &(best / nb));
    }
    ThinSvd {
        u: q * u_r,
        singular_values,
        v_t: v_sorted.transpose(),
    }
}

/// Rotate column pairs of `a` until all are mutually orthogonal.
/// Returns the rotated matrix `a V` and the accumulated rotation `V`.
fn jacobi_orthogonalize(mut a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = f64::EPSILON * (a.nrows() as f64).sqrt();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let cp = a.column(p);
                    let cq = a.column(q);
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    (a, v)
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let rows = m.nrows();
    for i in 0..rows {
        let x = m[(i, p)];
        let y = m[(i, q)];
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// Numerical rank from a sorted singular-value vector.
pub fn numerical_rank(singular_values: &DVector<f64>, rows: usize, cols: usize) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * (rows.max(cols) as f64) * f64::EPSILON * 10.0;
    singular_values.iter().filter(|&&s| s > tol).count()
}

/// Column-pivoted Householder QR truncated at the numerical rank.
///
/// `basis` is an orthonormal basis (n × r) for the span of the `kept`
/// columns, which span the same space as the full input. Columns whose
/// pivot falls below `rel_tol × |R₀₀|` are reported in `dropped`.
pub struct PivotedQr {
    pub basis: DMatrix<f64>,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl PivotedQr {
    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// `y − Q Qᵀ y` for every column of `y`.
    pub fn residualize(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        if self.basis.ncols() == 0 {
            return y.clone();
        }
        let coef = self.basis.tr_mul(y);
        y - &self.basis * coef
    }
}

pub fn pivoted_qr(a: &DMatrix<f64>, rel_tol: f64) -> PivotedQr {
    let (n, m) = a.shape();
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut reflectors: Vec<DVector<f64>> = Vec::new();
    let mut first_pivot = 0.0;

    for k in 0..n.min(m) {
        // remaining column norms over rows k..n
        let (best, best_norm) = (k..m)
            .map(|j| (j, work.view((k, j), (n - k, 1)).norm()))
            .fold((k, -1.0), |acc, (j, nrm)| if nrm > acc.1 { (j, nrm) } else { acc });
        if k == 0 {
            first_pivot = best_norm;
        }
        if best_norm <= rel_tol * first_pivot || best_norm == 0.0 {
            break;
        }
        work.swap_columns(k, best);
        perm.swap(k, best);

        let x = work.view((k, k), (n - k, 1)).clone_owned();
        let alpha = if x[0] >= 0.0 { -best_norm } else { best_norm };
        let mut v = DVector::from_iterator(n - k, x.iter().cloned());
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm > 0.0 {
            v /= vnorm;
            for j in k..m {
                let mut view = work.view_mut((k, j), (n - k, 1));
                let mut col = view.column_mut(0);
                let d = v.dot(&col);
                col.axpy(-2.0 * d, &v, 1.0);
            }
        }
        let mut full = DVector::zeros(n);
        full.rows_mut(k, n - k).copy_from(&v);
        reflectors.push(full);
    }

    let r = reflectors.len();
    let mut basis = DMatrix::zeros(n, r);
    for i in 0..r {
        basis[(i, i)] = 1.0;
    }
    for v in reflectors.iter().rev() {
        for j in 0..r {
            let mut col = basis.column_mut(j);
            let d = v.dot(&col);
            col.axpy(-2.0 * d, v, 1.0);
        }
    }
    let mut kept = perm[..r].to_vec();
    let mut dropped = perm[r..].to_vec();
    kept.sort_unstable();
    dropped.sort_unstable();
    PivotedQr {
        basis,
        kept,
        dropped,
    }
}

/// Median of a slice (average of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Type-7 (linear interpolation) quantile of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Largest principal angle (radians) between the column spaces of two
/// matrices with orthonormal columns and equal column counts.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // sine form; acos of the cosines loses precision near zero angle
    let proj = b - a * a.tr_mul(b);
    thin_svd(&proj)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .min(1.0)
        .asin()
}
