use nalgebra::DMatrix;

use super::{ScrubDecision, ScrubMethod, ThresholdSpec};
use crate::error::{Error, Result};
use crate::linalg::{median, pivoted_qr};
use crate::projection::ProjectionResult;

pub const DEFAULT_LEVERAGE_MULTIPLE: f64 = 3.0;
const RANK_TOL: f64 = 1e-10;

/// Diagonal of the orthogonal projector onto the column space of `x`.
///
/// Dependent columns are dropped by pivoted QR, so the trace equals the
/// numerical rank.
pub fn hat_diagonal(x: &DMatrix<f64>) -> Vec<f64> {
    if x.ncols() == 0 {
        return vec![0.0; x.nrows()];
    }
    let qr = pivoted_qr(x, RANK_TOL);
    if !qr.dropped.is_empty() {
        log::warn!("dropped {} linearly dependent columns before computing leverage", qr.dropped.len());
    }
    qr.basis.row_iter().map(|r| r.norm_squared().min(1.0)).collect()
}

/// Leverage of each volume over the selected component timecourses.
pub fn leverage(proj: &ProjectionResult) -> Vec<f64> {
    hat_diagonal(&proj.selected_timecourses())
}

/// Flag volumes whose leverage exceeds `multiple ×` the median leverage.
pub fn threshold_leverage(lev: &[f64], multiple: f64) -> Result<ScrubDecision> {
    if !(multiple > 0.0 && multiple.is_finite()) {
        return Err(Error::invalid(format!("leverage multiple must be positive, got {multiple}")));
    }
    let med = if lev.is_empty() { 0.0 } else { median(lev) };
    let flags = if med > 0.0 {
        lev.iter().map(|&l| l > multiple * med).collect()
    } else {
        vec![false; lev.len()]
    };
    Ok(ScrubDecision {
        method: ScrubMethod::Leverage,
        threshold_spec: ThresholdSpec::MultipleOfMedian { multiple },
        median_metric: med,
        metric: lev.to_vec(),
        metric_secondary: None,
        flags,
    })
}
