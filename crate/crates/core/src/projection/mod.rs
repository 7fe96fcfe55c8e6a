//! Projection of a standardized scan onto a small number of latent
//! directions, and kurtosis-based selection of the artifactual ones.
//!
//! Three projection methods share one result type:
//!
//! * [`pca_project`]: truncated SVD, timecourses are left singular vectors;
//! * [`ica_project`]: spatial FastICA in the PCA-whitened subspace,
//!   timecourses are columns of the mixing matrix;
//! * [`fusedpca_project`]: deflated rank-one decomposition with a
//!   total-variation penalty on each timecourse.
//!
//! Every component is sign-normalized so that the largest-magnitude entry
//! of its timecourse is positive.

mod fused;
mod ica;
mod kurtosis;
mod pca;
mod tv;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, thin_svd, ThinSvd};

pub use fused::{fusedpca_project, FusedPcaConfig};
pub use ica::{ica_from_svd, ica_project, ica_project_with, IcaConfig};
pub use kurtosis::{
    detrend_components, kurtosis, kurtosis_asymptotic_threshold, kurtosis_monte_carlo,
    kurtosis_normal_threshold, kurtosis_null_p99, select_artifact_components, KurtosisNull,
    NullSource, ASYMPTOTIC_MIN_T, DEFAULT_NULL_REPS,
};
pub use pca::{pca_from_svd, pca_project};

pub use tv::tv_denoise;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    Ica,
    #[serde(rename = "fusedpca")]
    FusedPca,
}

impl std::fmt::Display for ProjectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProjectionMethod::Pca => "pca",
            ProjectionMethod::Ica => "ica",
            ProjectionMethod::FusedPca => "fusedpca",
        })
    }
}

impl std::str::FromStr for ProjectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Self::Pca),
            "ica" => Ok(Self::Ica),
            "fusedpca" | "fused-pca" | "fused_pca" => Ok(Self::FusedPca),
            other => Err(Error::invalid(format!("unknown projection method {other:?}"))),
        }
    }
}

/// Convergence bookkeeping for iterative projections.
#[derive(Clone, Debug, Default)]
pub struct ProjectionDiagnostics {
    pub converged: bool,
    /// Iterations used per component (FusedPCA) or by the accepted run (ICA).
    pub iterations: Vec<usize>,
    /// FusedPCA objective after every half-step, per component.
    pub objective_trace: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub method: ProjectionMethod,
    /// T × Q component timecourses.
    pub timecourses: DMatrix<f64>,
    /// Q × V spatial maps.
    pub spatial_maps: DMatrix<f64>,
    /// Per-component scale (singular values for PCA, λ for FusedPCA).
    pub singular_values: Option<Vec<f64>>,
    /// Excess kurtosis of each timecourse.
    pub kurtosis: Vec<f64>,
    /// Zero-based indices of components flagged as artifactual.
    pub selected: Vec<usize>,
    pub seed: Option<u64>,
    pub diagnostics: ProjectionDiagnostics,
}

/// JSON sidecar written next to a projection's matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSidecar {
    pub method: ProjectionMethod,
    #[serde(rename = "Q")]
    pub q: usize,
    pub kurtosis: Vec<f64>,
    pub selected: Vec<usize>,
    pub seed: Option<u64>,
}

impl ProjectionResult {
    pub(crate) fn assemble(
        method: ProjectionMethod,
        mut timecourses: DMatrix<f64>,
        mut spatial_maps: DMatrix<f64>,
        singular_values: Option<Vec<f64>>,
        seed: Option<u64>,
        diagnostics: ProjectionDiagnostics,
    ) -> Result<Self> {
        normalize_signs(&mut timecourses, &mut spatial_maps);
        // a constant timecourse carries no outliers
        let kurtosis = timecourses
            .column_iter()
            .map(|c| match kurtosis(c.as_slice()) {
                Err(Error::Degenerate(_)) => Ok(0.0),
                other => other,
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method,
            timecourses,
            spatial_maps,
            singular_values,
            kurtosis,
            selected: Vec::new(),
            seed,
            diagnostics,
        })
    }

    pub fn n_components(&self) -> usize {
        self.timecourses.ncols()
    }

    pub fn n_volumes(&self) -> usize {
        self.timecourses.nrows()
    }

    /// T × |selected| matrix of the flagged timecourses.
    pub fn selected_timecourses(&self) -> DMatrix<f64> {
        self.timecourses.select_columns(self.selected.iter())
    }

    pub fn sidecar(&self) -> ProjectionSidecar {
        ProjectionSidecar {
            method: self.method,
            q: self.n_components(),
            kurtosis: self.kurtosis.clone(),
            selected: self.selected.clone(),
            seed: self.seed,
        }
    }
}

/// Flip each component so its largest-magnitude timecourse entry is positive.
fn normalize_signs(timecourses: &mut DMatrix<f64>, maps: &mut DMatrix<f64>) {
    for q in 0..timecourses.ncols() {
        let col = timecourses.column(q);
        let peak = col.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if peak < 0.0 {
            timecourses.column_mut(q).neg_mut();
            maps.row_mut(q).neg_mut();
        }
    }
}

/// Rule for choosing the embedding dimension Q from the singular spectrum.
///
/// Implement this to plug in a likelihood-based estimator.
pub trait DimensionSelector {
    /// `singular_values` are sorted nonincreasing; `rank` counts the numerically nonzero ones.
    fn choose(&self, singular_values: &[f64], rank: usize) -> Result<usize>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionCriterion {
    /// Smallest Q whose cumulative squared singular values reach this fraction.
    VarianceFraction(f64),
    Fixed(usize),
}

impl Default for DimensionCriterion {
    fn default() -> Self {
        DimensionCriterion::VarianceFraction(0.5)
    }
}

impl DimensionSelector for DimensionCriterion {
    fn choose(&self, singular_values: &[f64], rank: usize) -> Result<usize> {
        if rank == 0 {
            return Err(Error::Degenerate("scan has rank 0".into()));
        }
        match *self {
            DimensionCriterion::VarianceFraction(f) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::invalid(format!("variance fraction must be in (0,1), got {f}")));
                }
                let total: f64 = singular_values.iter().map(|s| s * s).sum();
                let mut acc = 0.0;
                for (i, s) in singular_values.iter().enumerate() {
                    acc += s * s;
                    if acc >= f * total {
                        return Ok((i + 1).min(rank));
                    }
                }
                Ok(rank)
            }
            DimensionCriterion::Fixed(q) => {
                if q < 1 || q > rank {
                    return Err(Error::invalid(format!("fixed dimension {q} outside 1..={rank}")));
                }
                Ok(q)
            }
        }
    }
}

pub fn select_dimension(data: &DMatrix<f64>, criterion: &impl DimensionSelector) -> Result<usize> {
    select_dimension_from_svd(&thin_svd(data), data.nrows(), data.ncols(), criterion)
}

/// [`select_dimension`] from a precomputed SVD of the same data.
pub fn select_dimension_from_svd(
    svd: &ThinSvd,
    rows: usize,
    cols: usize,
    criterion: &impl DimensionSelector,
) -> Result<usize> {
    let rank = numerical_rank(&svd.singular_values, rows, cols);
    criterion.choose(svd.singular_values.as_slice(), rank)
}
