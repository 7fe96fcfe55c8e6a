use nalgebra::DMatrix;

use super::{ProjectionDiagnostics, ProjectionMethod, ProjectionResult};
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, thin_svd, ThinSvd};

/// Rank-Q PCA: unit-norm left singular vectors as timecourses and
/// singular-value-scaled right singular vectors as spatial maps.
pub fn pca_project(data: &DMatrix<f64>, q: usize) -> Result<ProjectionResult> {
    let svd = thin_svd(data);
    pca_from_svd(&svd, data.nrows(), data.ncols(), q)
}

/// [`pca_project`] from a precomputed SVD of the same data.
pub fn pca_from_svd(svd: &ThinSvd, rows: usize, cols: usize, q: usize) -> Result<ProjectionResult> {
    let rank = numerical_rank(&svd.singular_values, rows, cols);
    if q < 1 || q > rank {
        return Err(Error::invalid(format!("requested {q} components but data rank is {rank}")));
    }
    let timecourses = svd.u.columns(0, q).clone_owned();
    let mut maps = svd.v_t.rows(0, q).clone_owned();
    let sv: Vec<f64> = svd.singular_values.iter().take(q).cloned().collect();
    for (i, s) in sv.iter().enumerate() {
        maps.row_mut(i).scale_mut(*s);
    }
    ProjectionResult::assemble(
        ProjectionMethod::Pca,
        timecourses,
        maps,
        Some(sv),
        None,
        ProjectionDiagnostics {
            converged: true,
            ..Default::default()
        },
    )
}
