//! Time-by-location matrices, realignment parameters, DCT bases and
//! robust standardization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::median;

/// Normal-consistency constant for the median absolute deviation.
pub const MAD_TO_SD: f64 = 1.4826;

/// Columns whose robust scale falls below this are dropped.
pub const MIN_SCALE: f64 = 1e-12;

/// Opaque identifiers attached to one acquisition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunLabels {
    pub subject: String,
    pub session: String,
    pub run: String,
}

impl RunLabels {
    pub fn new(subject: impl Into<String>, session: impl Into<String>, run: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            session: session.into(),
            run: run.into(),
        }
    }
}

/// A T × V data matrix: rows are volumes, columns are locations.
#[derive(Clone, Debug)]
pub struct ScanMatrix {
    values: DMatrix<f64>,
    tr_seconds: f64,
    pub labels: RunLabels,
}

impl ScanMatrix {
    pub fn new(values: DMatrix<f64>, tr_seconds: f64) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::invalid(format!(
                "scan needs at least 2 volumes, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 1 {
            return Err(Error::invalid("scan has no locations"));
        }
        if !(tr_seconds.is_finite() && tr_seconds > 0.0) {
            return Err(Error::invalid(format!("sampling interval must be positive, got {tr_seconds}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::invalid(format!("non-finite value at volume {r}, location {c}")));
        }
        Ok(Self {
            values,
            tr_seconds,
            labels: RunLabels::default(),
        })
    }

    pub fn with_labels(mut self, labels: RunLabels) -> Self {
        self.labels = labels;
        self
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }

    pub fn n_volumes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.values.ncols()
    }

    /// Same shape and labels, new values (used for residuals).
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::shape(format!(
                "replacement values {:?} do not match scan {:?}",
                values.shape(),
                self.values.shape()
            )));
        }
        Ok(Self::new(values, self.tr_seconds)?.with_labels(self.labels.clone()))
    }
}

/// Rigid-body realignment trace: T × 6, translations (mm) then rotations (rad).
#[derive(Clone, Debug)]
pub struct RealignmentParams {
    values: DMatrix<f64>,
    tr_seconds: f64,
}

impl RealignmentParams {
    pub const N_PARAMS: usize = 6;

    pub fn new(values: DMatrix<f64>, tr_seconds: f64) -> Result<Self> {
        if values.ncols() != Self::N_PARAMS {
            return Err(Error::shape(format!(
                "realignment parameters need 6 columns, got {}",
                values.ncols()
            )));
        }
        if values.nrows() < 2 {
            return Err(Error::invalid("realignment parameters need at least 2 volumes"));
        }
        if !(tr_seconds.is_finite() && tr_seconds > 0.0) {
            return Err(Error::invalid(format!("sampling interval must be positive, got {tr_seconds}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("realignment parameters contain non-finite values"));
        }
        Ok(Self { values, tr_seconds })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }

    pub fn n_volumes(&self) -> usize {
        self.values.nrows()
    }

    pub fn check_matches(&self, scan: &ScanMatrix) -> Result<()> {
        if self.n_volumes() != scan.n_volumes() {
            return Err(Error::shape(format!(
                "realignment parameters have {} volumes but scan has {}",
                self.n_volumes(),
                scan.n_volumes()
            )));
        }
        Ok(())
    }
}

/// Unit-norm type-II DCT columns, excluding the constant term.
#[derive(Clone, Debug)]
pub struct DctBasis {
    values: DMatrix<f64>,
}

impl DctBasis {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.ncols()
    }

    /// Frequency (Hz) of the slowest-varying column `k` (1-based).
    pub fn frequency_hz(n_volumes: usize, k: usize, tr_seconds: f64) -> f64 {
        k as f64 / (2.0 * n_volumes as f64 * tr_seconds)
    }
}

/// `k`-th column (k = 1..K) proportional to cos(π·k·(t + ½)/T).
pub fn dct_basis(n_volumes: usize, count: usize) -> Result<DctBasis> {
    if count < 1 || count >= n_volumes {
        return Err(Error::invalid(format!(
            "DCT basis needs 1 <= K < T, got K={count}, T={n_volumes}"
        )));
    }
    let t_len = n_volumes as f64;
    let mut values = DMatrix::from_fn(n_volumes, count, |t, j| {
        let k = (j + 1) as f64;
        (std::f64::consts::PI * k * (t as f64 + 0.5) / t_len).cos()
    });
    for mut col in values.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    Ok(DctBasis { values })
}

/// Scan after per-column robust centering and scaling.
#[derive(Clone, Debug)]
pub struct StandardizedScan {
    values: DMatrix<f64>,
    /// Robust center of every original column.
    pub center: Vec<f64>,
    /// Robust scale of every original column (below `MIN_SCALE` when dropped).
    pub scale: Vec<f64>,
    pub dropped_columns: Vec<usize>,
    pub retained_columns: Vec<usize>,
}

impl StandardizedScan {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_volumes(&self) -> usize {
        self.values.nrows()
    }

    /// Re-expand a map over retained columns to all original columns, with zeros.
    pub fn expand_map(&self, retained: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.center.len()];
        for (&c, &v) in self.retained_columns.iter().zip(retained) {
            out[c] = v;
        }
        out
    }
}

/// Robust center and scale of a column: median and MAD × 1.4826.
pub fn robust_center_scale(column: &[f64]) -> (f64, f64) {
    let center = median(column);
    let dev: Vec<f64> = column.iter().map(|x| (x - center).abs()).collect();
    (center, median(&dev) * MAD_TO_SD)
}

pub fn robust_standardize(scan: &ScanMatrix) -> Result<StandardizedScan> {
    standardize_matrix(scan.values())
}

/// Matrix form of [`robust_standardize`].
pub fn standardize_matrix(values: &DMatrix<f64>) -> Result<StandardizedScan> {
    let (n_vol, n_loc) = values.shape();
    let mut center = Vec::with_capacity(n_loc);
    let mut scale = Vec::with_capacity(n_loc);
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for (j, col) in values.column_iter().enumerate() {
        let data: Vec<f64> = col.iter().cloned().collect();
        let (c, s) = robust_center_scale(&data);
        center.push(c);
        scale.push(s);
        if s < MIN_SCALE {
            dropped.push(j);
        } else {
            retained.push(j);
        }
    }
    if retained.is_empty() {
        return Err(Error::NoUsableLocations);
    }
    if !dropped.is_empty() {
        log::warn!("dropped {} zero-variance locations", dropped.len());
    }
    let out = DMatrix::from_fn(n_vol, retained.len(), |t, k| {
        let j = retained[k];
        (values[(t, j)] - center[j]) / scale[j]
    });
    Ok(StandardizedScan {
        values: out,
        center,
        scale,
        dropped_columns: dropped,
        retained_columns: retained,
    })
}
