//! Two-pass scrubbing flow.
//!
//! Pass 1 regresses the nuisance design (without spikes) out of the scan and
//! computes the scrubbing metric on those residuals, or on the realignment
//! parameters for FD-type metrics. Pass 2 regresses the original scan on the
//! same design plus one spike column per flagged volume.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{standardize_matrix, RealignmentParams, ScanMatrix};
use crate::error::{Error, Result};
use crate::linalg::thin_svd;
use crate::nuisance::{build_design, regress, DenoiseSpec, DesignMatrix};
use crate::projection::{
    fusedpca_project, ica_from_svd, kurtosis_null_p99, pca_from_svd, select_artifact_components,
    select_dimension_from_svd, DimensionCriterion, FusedPcaConfig, IcaConfig, KurtosisNull, ProjectionMethod, ProjectionResult,
    DEFAULT_NULL_REPS,
};
use crate::scrub::{
    dvars_dual, fd_decision, leverage, threshold_leverage, DvarsConfig, MotionConfig, ScrubDecision,
    DEFAULT_LEVERAGE_MULTIPLE,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub method: ProjectionMethod,
    pub criterion: DimensionCriterion,
    pub leverage_multiple: f64,
    pub seed: u64,
    pub null_reps: usize,
    pub kappa: f64,
    pub fused_tol: f64,
    pub fused_max_iter: usize,
    pub ica_restarts: usize,
    pub ica_tol: f64,
    pub ica_max_iter: usize,
    /// Fail on ICA non-convergence instead of keeping the best restart.
    pub strict: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        let fused = FusedPcaConfig::default();
        let ica = IcaConfig::default();
        Self {
            method: ProjectionMethod::Ica,
            criterion: DimensionCriterion::default(),
            leverage_multiple: DEFAULT_LEVERAGE_MULTIPLE,
            seed: 0,
            null_reps: DEFAULT_NULL_REPS,
            kappa: fused.kappa,
            fused_tol: fused.tol,
            fused_max_iter: fused.max_iter,
            ica_restarts: ica.restarts,
            ica_tol: ica.tol,
            ica_max_iter: ica.max_iter,
            strict: false,
        }
    }
}

impl ProjectionConfig {
    pub fn with_method(method: ProjectionMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    fn ica(&self) -> IcaConfig {
        IcaConfig {
            restarts: self.ica_restarts,
            tol: self.ica_tol,
            max_iter: self.ica_max_iter,
            accept_unconverged: !self.strict,
        }
    }

    fn fused(&self) -> FusedPcaConfig {
        FusedPcaConfig {
            kappa: self.kappa,
            tol: self.fused_tol,
            max_iter: self.fused_max_iter,
        }
    }
}

/// How volumes are scored and flagged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScrubRule {
    Projection(ProjectionConfig),
    Motion(MotionConfig),
    Dvars(DvarsConfig),
}

impl ScrubRule {
    pub fn needs_rps(&self) -> bool {
        matches!(self, ScrubRule::Motion(_))
    }
}

/// Kurtosis nulls are costly below the asymptotic cutoff and depend only on
/// `(T, reps, seed)`.
pub fn cached_kurtosis_null(n_volumes: usize, reps: usize, seed: u64) -> Result<KurtosisNull> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize, u64), KurtosisNull>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (n_volumes, reps, seed);
    if let Some(hit) = cache.lock().expect("null cache poisoned").get(&key) {
        return Ok(hit.clone());
    }
    let null = kurtosis_null_p99(n_volumes, reps, seed)?;
    cache.lock().expect("null cache poisoned").insert(key, null.clone());
    Ok(null)
}

#[derive(Clone, Debug)]
pub struct ProjectionScrub {
    pub decision: ScrubDecision,
    pub projection: ProjectionResult,
    pub null: KurtosisNull,
}

/// Robust-standardize, project, select high-kurtosis components and threshold their leverage.
pub fn projection_scrub(data: &DMatrix<f64>, config: &ProjectionConfig) -> Result<ProjectionScrub> {
    let standardized = standardize_matrix(data)?;
    let y = standardized.values();
    let (rows, cols) = y.shape();
    let svd = thin_svd(y);
    let q = select_dimension_from_svd(&svd, rows, cols, &config.criterion)?;
    let projection = match config.method {
        ProjectionMethod::Pca => pca_from_svd(&svd, rows, cols, q)?,
        ProjectionMethod::Ica => ica_from_svd(&svd, rows, cols, q, config.seed, &config.ica())?,
        ProjectionMethod::FusedPca => fusedpca_project(y, q, &config.fused())?,
    };
    let null = cached_kurtosis_null(data.nrows(), config.null_reps, config.seed)?;
    let projection = select_artifact_components(projection, &null)?;
    let decision = threshold_leverage(&leverage(&projection), config.leverage_multiple)?;
    Ok(ProjectionScrub {
        decision,
        projection,
        null,
    })
}

/// Scrubbing metric for a rule. `data` is the pass-1 residual matrix.
pub fn compute_scrub(
    data: &DMatrix<f64>,
    rps: Option<&RealignmentParams>,
    rule: &ScrubRule,
) -> Result<(ScrubDecision, Option<ProjectionScrub>)> {
    match rule {
        ScrubRule::Projection(cfg) => {
            let out = projection_scrub(data, cfg)?;
            Ok((out.decision.clone(), Some(out)))
        }
        ScrubRule::Motion(cfg) => {
            let rp = rps.ok_or_else(|| Error::invalid("FD-type scrubbing needs realignment parameters"))?;
            if rp.n_volumes() != data.nrows() {
                return Err(Error::shape(format!(
                    "realignment parameters have {} volumes but the scan has {}",
                    rp.n_volumes(),
                    data.nrows()
                )));
            }
            Ok((fd_decision(rp, cfg)?, None))
        }
        ScrubRule::Dvars(cfg) => Ok((dvars_dual(data, cfg)?, None)),
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub preliminary: ScanMatrix,
    pub residuals: ScanMatrix,
    pub decision: ScrubDecision,
    pub design: DesignMatrix,
    pub projection: Option<ProjectionScrub>,
}

impl PipelineOutput {
    /// Final residuals with flagged volumes removed.
    pub fn censored(&self) -> DMatrix<f64> {
        let kept: Vec<usize> = (0..self.decision.flags.len()).filter(|&t| !self.decision.flags[t]).collect();
        self.residuals.values().select_rows(kept.iter())
    }
}

pub fn preliminary_then_final(scan: &ScanMatrix, spec: &DenoiseSpec, rule: &ScrubRule) -> Result<PipelineOutput> {
    let t = scan.n_volumes();
    let rps = spec.rps.as_ref();
    if let Some(rp) = rps {
        rp.check_matches(scan)?;
    }
    let base = build_design(spec, t, None)?;
    let preliminary = regress(scan, &base)?;
    let (decision, projection) = compute_scrub(preliminary.values(), rps, rule)?;
    let (residuals, design) = if decision.n_flagged() == 0 {
        (preliminary.clone(), base)
    } else {
        let design = build_design(spec, t, Some(&decision.flags))?;
        (regress(scan, &design)?, design)
    };
    Ok(PipelineOutput {
        preliminary,
        residuals,
        decision,
        design,
        projection,
    })
}
