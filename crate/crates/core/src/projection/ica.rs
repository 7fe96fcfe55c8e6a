//! Spatial FastICA in the PCA-whitened Q-dimensional subspace.
//!
//! The top Q right singular vectors are centered and whitened across
//! locations, then unmixed with a symmetric fixed-point iteration using the
//! `log cosh` contrast (`g = tanh`). Spatial maps are the unmixed sources and
//! timecourses are the matching columns of the mixing matrix, so that
//! `timecourses · spatial_maps` reproduces the rank-Q PCA reconstruction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ProjectionDiagnostics, ProjectionMethod, ProjectionResult};
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, thin_svd, ThinSvd};

#[derive(Clone, Copy, Debug)]
pub struct IcaConfig {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the best unconverged restart instead of failing.
    pub accept_unconverged: bool,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            tol: 1e-6,
            max_iter: 500,
            accept_unconverged: false,
        }
    }
}

/// `M^{-1/2}` and `M^{1/2}` of a symmetric positive-definite matrix.
fn sym_sqrt_pair(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.max();
    if !(eig.eigenvalues.min() > top * 1e-12) {
        return Err(Error::Degenerate("whitening covariance is singular".into()));
    }
    let v = &eig.eigenvectors;
    let inv = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e.sqrt())) * v.transpose();
    let sqrt = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
    Ok((inv, sqrt))
}

/// `(W Wᵀ)^{-1/2} W`
fn symmetric_decorrelate(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (inv, _) = sym_sqrt_pair(&(w * w.transpose()))?;
    Ok(inv * w)
}

struct Unmixing {
    w: DMatrix<f64>,
    iterations: usize,
    last_change: f64,
    converged: bool,
}

fn fastica(x: &DMatrix<f64>, mut w: DMatrix<f64>, config: &IcaConfig) -> Result<Unmixing> {
    let (q, n) = x.shape();
    let nf = n as f64;
    let mut last_change = f64::INFINITY;
    for it in 0..config.max_iter {
        let mut g = &w * x;
        let mut dg = DVector::zeros(q);
        for i in 0..q {
            let mut acc = 0.0;
            for v in g.row_mut(i).iter_mut() {
                let t = v.tanh();
                *v = t;
                acc += 1.0 - t * t;
            }
            dg[i] = acc / nf;
        }
        let update = (g * x.transpose()) / nf - DMatrix::from_diagonal(&dg) * &w;
        let w_new = match symmetric_decorrelate(&update) {
            Ok(w_new) => w_new,
            Err(_) => {
                // rank-deficient update: this restart cannot continue
                log::warn!("FastICA update became singular at iteration {}", it + 1);
                return Ok(Unmixing {
                    w,
                    iterations: it + 1,
                    last_change: f64::INFINITY,
                    converged: false,
                });
            }
        };
        // rows are unit vectors; convergence when every row keeps its direction
        last_change = (&w_new * w.transpose())
            .diagonal()
            .iter()
            .map(|d| (d.abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = w_new;
        if last_change < config.tol {
            return Ok(Unmixing {
                w,
                iterations: it + 1,
                last_change,
                converged: true,
            });
        }
    }
    Ok(Unmixing {
        w,
        iterations: config.max_iter,
        last_change,
        converged: false,
    })
}

pub fn ica_project(data: &DMatrix<f64>, q: usize, seed: u64) -> Result<ProjectionResult> {
    ica_project_with(data, q, seed, &IcaConfig::default())
}

pub fn ica_project_with(data: &DMatrix<f64>, q: usize, seed: u64, config: &IcaConfig) -> Result<ProjectionResult> {
    ica_from_svd(&thin_svd(data), data.nrows(), data.ncols(), q, seed, config)
}

/// [`ica_project_with`] from a precomputed SVD of the same data.
pub fn ica_from_svd(
    svd: &ThinSvd,
    rows: usize,
    cols: usize,
    q: usize,
    seed: u64,
    config: &IcaConfig,
) -> Result<ProjectionResult> {
    if config.restarts == 0 || config.max_iter == 0 || !(config.tol > 0.0) {
        return Err(Error::invalid("ICA needs at least one restart, one iteration and a positive tolerance"));
    }
    let rank = numerical_rank(&svd.singular_values, rows, cols);
    if q < 1 || q > rank {
        return Err(Error::invalid(format!("requested {q} components but data rank is {rank}")));
    }
    let v = cols;
    if v <= q {
        return Err(Error::invalid(format!("spatial ICA needs more than {q} locations, got {v}")));
    }
    let vt = svd.v_t.rows(0, q).clone_owned();
    let means = DVector::from_fn(q, |i, _| vt.row(i).mean());
    let mut centered = vt.clone();
    for (i, mut row) in centered.row_iter_mut().enumerate() {
        row.add_scalar_mut(-means[i]);
    }
    let cov = &centered * centered.transpose() / v as f64;
    let (k, k_inv) = sym_sqrt_pair(&cov)?;
    let xw = &k * &centered;

    let mut best: Option<Unmixing> = None;
    let mut accepted = None;
    for r in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let w0 = DMatrix::from_fn(q, q, |_, _| StandardNormal.sample(&mut rng));
        let fit = fastica(&xw, symmetric_decorrelate(&w0)?, config)?;
        if fit.converged {
            accepted = Some(fit);
            break;
        }
        log::warn!("FastICA restart {} did not converge (change {:.3e})", r + 1, fit.last_change);
        if best.as_ref().is_none_or(|b| fit.last_change < b.last_change) {
            best = Some(fit);
        }
    }
    let fit = match accepted {
        Some(f) => f,
        None => {
            let b = best.expect("at least one restart ran");
            if config.accept_unconverged {
                log::warn!("FastICA kept best unconverged restart (change {:.3e})", b.last_change);
                b
            } else {
                return Err(Error::IcaNotConverged {
                restarts: config.restarts,
                iterations: b.iterations,
                best_change: b.last_change,
                });
            }
        }
    };

    // Y_q = U_q Σ_q Vt_q = (U_q Σ_q K⁻¹ Wᵀ)(W K Vt_q)
    let scale = DMatrix::from_diagonal(&svd.singular_values.rows(0, q).clone_owned());
    let mixing = svd.u.columns(0, q) * scale * k_inv * fit.w.transpose();
    let maps = &fit.w * &k * &vt;

    let variances: Vec<f64> = mixing.column_iter().map(|c| c.variance()).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    let timecourses = mixing.select_columns(order.iter());
    let spatial_maps = maps.select_rows(order.iter());

    ProjectionResult::assemble(
        ProjectionMethod::Ica,
        timecourses,
        spatial_maps,
        None,
        Some(seed),
        ProjectionDiagnostics {
            converged: fit.converged,
            iterations: vec![fit.iterations],
            objective_trace: Vec::new(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pearson;
    use crate::projection::pca_project;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    /// Laplace-distributed values on disjoint blocks of locations.
    fn sparse_sources(rng: &mut ChaCha8Rng, q: usize, v: usize) -> DMatrix<f64> {
        let exp = rand_distr::Exp1;
        let block = v / q;
        DMatrix::from_fn(q, v, |i, j| {
            if j / block == i {
                let e: f64 = exp.sample(rng);
                if rand::Rng::random::<bool>(rng) {
                    e
                } else {
                    -e
                }
            } else {
                0.0
            }
        })
    }

    #[test]
    fn two_planted_sources_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (t, v) = (120, 2000);
        let s = sparse_sources(&mut rng, 2, v);
        let a = randn(&mut rng, t, 2);
        let y = &a * &s + randn(&mut rng, t, v) * 0.05;
        let p = ica_project(&y, 2, 1).unwrap();
        for k in 0..2 {
            let best = (0..2)
                .map(|j| pearson(p.spatial_maps.row(k).transpose().as_slice(), s.row(j).transpose().as_slice()).unwrap().abs())
                .fold(0.0, f64::max);
            assert!(best > 0.95, "component {k}: {best}");
        }
    }

    #[test]
    fn single_component_is_first_pc() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y = randn(&mut rng, 50, 40);
        let ica = ica_project(&y, 1, 3).unwrap();
        let pca = pca_project(&y, 1).unwrap();
        let a = ica.timecourses.column(0).normalize();
        let b = pca.timecourses.column(0).normalize();
        assert!((a.dot(&b).abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn reconstruction_matches_rank_q_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y = randn(&mut rng, 60, 90);
        let ica = ica_project(&y, 4, 5).unwrap();
        let pca = pca_project(&y, 4).unwrap();
        let a = &ica.timecourses * &ica.spatial_maps;
        let b = &pca.timecourses * &pca.spatial_maps;
        assert!((a - &b).norm() < 1e-8 * b.norm());
    }

    #[test]
    fn disjoint_sources_give_a_signed_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (t, v, q) = (80, 30_000, 3);
        let s = sparse_sources(&mut rng, q, v);
        let a = randn(&mut rng, t, q);
        let p = ica_project(&(&a * &s), q, 2).unwrap();
        // recovered maps expressed in the planted source basis
        let gain = &p.spatial_maps * s.transpose() * (&s * s.transpose()).try_inverse().unwrap();
        let mut used = vec![false; q];
        for i in 0..q {
            let row = gain.row(i);
            let (j, peak) = row.iter().enumerate().fold((0, 0.0f64), |b, (j, &g)| if g.abs() > b.1.abs() { (j, g) } else { b });
            assert!(!used[j], "{gain}");
            used[j] = true;
            for (k, g) in row.iter().enumerate() {
                if k != j {
                    assert!((g / peak).abs() < 1e-3, "{gain}");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let y = randn(&mut rng, 40, 300);
        let a = ica_project(&y, 3, 9).unwrap();
        let b = ica_project(&y, 3, 9).unwrap();
        assert_eq!(a.timecourses, b.timecourses);
        assert_eq!(a.spatial_maps, b.spatial_maps);
        assert_eq!(a.seed, Some(9));
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let y = randn(&mut rng, 40, 300);
        let cfg = IcaConfig {
            restarts: 2,
            tol: 1e-15,
            max_iter: 2,
            accept_unconverged: false,
        };
        assert!(matches!(ica_project_with(&y, 3, 1, &cfg), Err(Error::IcaNotConverged { restarts: 2, .. })));
        let kept = ica_project_with(&y, 3, 1, &IcaConfig { accept_unconverged: true, ..cfg }).unwrap();
        assert!(!kept.diagnostics.converged);
    }
}
