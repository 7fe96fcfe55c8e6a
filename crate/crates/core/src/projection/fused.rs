//! FusedPCA: rank-one deflation where each temporal factor carries a
//! first-difference (total-variation) penalty.
//!
//! For each component the alternating minimization of
//!
//! ```text
//! f(u, v) = −uᵀXv + ½uᵀu + κ‖Du‖₁   subject to ‖v‖ ≤ 1
//! ```
//!
//! starts from the leading right singular vector of the deflated matrix,
//! solves the u-step exactly with [`tv_denoise`](super::tv_denoise) and the
//! v-step in closed form. Both steps are exact block minimizers, so `f`
//! never increases.

use nalgebra::{DMatrix, DVector};

use super::tv::{total_variation, tv_denoise};
use super::{ProjectionDiagnostics, ProjectionMethod, ProjectionResult};
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, thin_svd};

#[derive(Clone, Copy, Debug)]
pub struct FusedPcaConfig {
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FusedPcaConfig {
    fn default() -> Self {
        Self {
            kappa: 0.0,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

fn objective(x: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>, kappa: f64) -> f64 {
    -u.dot(&(x * v)) + 0.5 * u.norm_squared() + kappa * total_variation(u.as_slice())
}

struct RankOne {
    u: DVector<f64>,
    v: DVector<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn fit_rank_one(x: &DMatrix<f64>, kappa: f64, tol: f64, max_iter: usize) -> Result<RankOne> {
    let svd = thin_svd(x);
    if numerical_rank(&svd.singular_values, x.nrows(), x.ncols()) == 0 {
        return Err(Error::Degenerate("deflated matrix has rank 0".into()));
    }
    let mut v: DVector<f64> = svd.v_t.row(0).transpose();
    let mut u = DVector::zeros(x.nrows());
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..max_iter {
        iterations = it + 1;
        let target = x * &v;
        let u_new = DVector::from_vec(tv_denoise(target.as_slice(), kappa));
        trace.push(objective(x, &u_new, &v, kappa));

        let w = x.tr_mul(&u_new);
        let wn = w.norm();
        if wn == 0.0 {
            // u collapsed onto the null space of Xᵀ; nothing left to fit
            log::warn!("FusedPCA temporal factor collapsed at iteration {iterations}");
            u = u_new;
            break;
        }
        let v_new = w / wn;
        trace.push(objective(x, &u_new, &v_new, kappa));

        let du = (&u_new - &u).norm() / u_new.norm().max(f64::MIN_POSITIVE);
        let dv = (&v_new - &v).norm();
        u = u_new;
        v = v_new;
        if it > 0 && du.max(dv) < tol {
            converged = true;
            break;
        }
    }
    Ok(RankOne {
        u,
        v,
        iterations,
        converged,
        trace,
    })
}

pub fn fusedpca_project(data: &DMatrix<f64>, q: usize, config: &FusedPcaConfig) -> Result<ProjectionResult> {
    if !(config.kappa >= 0.0) {
        return Err(Error::invalid(format!("kappa must be nonnegative, got {}", config.kappa)));
    }
    if q < 1 || q > data.nrows().min(data.ncols()) {
        return Err(Error::invalid(format!("cannot extract {q} components from a {:?} matrix", data.shape())));
    }
    let mut x = data.clone();
    let mut timecourses = DMatrix::zeros(data.nrows(), q);
    let mut maps = DMatrix::zeros(q, data.ncols());
    let mut lambdas = Vec::with_capacity(q);
    let mut diagnostics = ProjectionDiagnostics {
        converged: true,
        ..Default::default()
    };

    for k in 0..q {
        let fit = fit_rank_one(&x, config.kappa, config.tol, config.max_iter)?;
        if !fit.converged {
            log::warn!(
                "FusedPCA component {} hit {} iterations without converging",
                k + 1,
                config.max_iter
            );
            diagnostics.converged = false;
        }
        let un = fit.u.norm();
        if un == 0.0 {
            return Err(Error::Degenerate(format!("FusedPCA component {} is identically zero", k + 1)));
        }
        // unit-norm temporal factor so λ is the rank-one scale
        let u = &fit.u / un;
        let lambda = u.dot(&(&x * &fit.v));
        x -= lambda * &u * fit.v.transpose();
        timecourses.set_column(k, &u);
        maps.set_row(k, &(lambda * fit.v.transpose()));
        lambdas.push(lambda);
        diagnostics.iterations.push(fit.iterations);
        diagnostics.objective_trace.push(fit.trace);
    }

    ProjectionResult::assemble(ProjectionMethod::FusedPca, timecourses, maps, Some(lambdas), None, diagnostics)
}
