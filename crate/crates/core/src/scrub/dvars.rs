//! Dual-cutoff DVARS: a volume is flagged only when its frame-difference
//! variance is both statistically significant (ZDVARS above a Bonferroni
//! cutoff) and practically large (Δ%DVARS above a percentage cutoff).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::{ScrubDecision, ScrubMethod, ThresholdSpec};
use crate::error::{Error, Result};
use crate::linalg::{median, quantile_sorted};

/// `Φ⁻¹(0.75)`, converting a half-IQR to a standard deviation.
const HALF_IQR_TO_SD: f64 = 0.6745;

/// Largest reported ZDVARS; reached once the upper-tail probability underflows.
pub const ZDVARS_CAP: f64 = 37.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvarsConfig {
    /// Family-wise error level, Bonferroni-corrected over volumes.
    pub zdvars_alpha: f64,
    /// Minimum Δ%DVARS, in percent of mean volume power.
    pub pct_cut: f64,
}

impl Default for DvarsConfig {
    fn default() -> Self {
        Self {
            zdvars_alpha: 0.05,
            pct_cut: 5.0,
        }
    }
}

/// `(median − Q25) / 0.6745` with type-7 quantiles.
pub fn s_hiqr(d: &[f64]) -> Result<f64> {
    if d.len() < 4 {
        return Err(Error::invalid(format!("s_hIQR needs at least 4 values, got {}", d.len())));
    }
    let mut sorted = d.to_vec();
    sorted.sort_by(f64::total_cmp);
    let half = quantile_sorted(&sorted, 0.5) - quantile_sorted(&sorted, 0.25);
    if !(half > 0.0) {
        return Err(Error::Degenerate("DVARS variance undefined".into()));
    }
    Ok(half / HALF_IQR_TO_SD)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DvarsComponents {
    /// Mean squared signal per volume.
    pub a: Vec<f64>,
    /// Mean squared half-difference per volume, `d[0] = 0`.
    pub d: Vec<f64>,
    /// Median of `d` over volumes with a predecessor.
    pub d_median: f64,
    /// Robust SD of `d`; `None` when its half-IQR is zero.
    pub d_sd: Option<f64>,
    pub zdvars: Vec<f64>,
    pub delta_pct: Vec<f64>,
}

pub fn dvars_components(y: &DMatrix<f64>) -> Result<DvarsComponents> {
    let (t, v) = y.shape();
    if v == 0 {
        return Err(Error::invalid("DVARS needs at least one location"));
    }
    if t < 3 {
        return Err(Error::invalid(format!("DVARS needs at least 3 volumes, got {t}")));
    }
    let vf = v as f64;
    let a: Vec<f64> = y.row_iter().map(|r| r.norm_squared() / vf).collect();
    let mut d = vec![0.0; t];
    for i in 1..t {
        d[i] = (y.row(i) - y.row(i - 1)).norm_squared() / (4.0 * vf);
    }
    let tail = &d[1..];
    let d_median = median(tail);
    let d_sd = if tail.len() >= 4 {
        match s_hiqr(tail) {
            Ok(s) => Some(s),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let mean_a = a.iter().sum::<f64>() / t as f64;
    let delta_pct: Vec<f64> = (0..t)
        .map(|i| if i == 0 || mean_a == 0.0 { 0.0 } else { 100.0 * (d[i] - d_median) / mean_a })
        .collect();

    let zdvars = match d_sd {
        Some(s) if d_median > 0.0 => {
            // D ≈ (s²/2D̃)·χ²(2D̃²/s²), which has mean D̃ and variance s²
            let df = 2.0 * d_median * d_median / (s * s);
            let chi = ChiSquared::new(df).map_err(|e| Error::Degenerate(format!("DVARS null: {e}")))?;
            let normal = Normal::standard();
            (0..t)
                .map(|i| {
                    if i == 0 {
                        return 0.0;
                    }
                    let x = 2.0 * d_median * d[i] / (s * s);
                    let p = chi.sf(x);
                    if p <= 0.0 {
                        ZDVARS_CAP
                    } else {
                        (-normal.inverse_cdf(p)).min(ZDVARS_CAP)
                    }
                })
                .collect()
        }
        // no spread in the null: any excess over the median is infinitely significant
        _ => (0..t)
            .map(|i| if i > 0 && d[i] > d_median { ZDVARS_CAP } else { 0.0 })
            .collect(),
    };
    Ok(DvarsComponents {
        a,
        d,
        d_median,
        d_sd,
        zdvars,
        delta_pct,
    })
}

/// ZDVARS as the metric, Δ%DVARS as the secondary metric, and flags where both
/// cutoffs are exceeded. The first volume is never flagged.
pub fn dvars_dual(y: &DMatrix<f64>, config: &DvarsConfig) -> Result<ScrubDecision> {
    if !(config.zdvars_alpha > 0.0 && config.zdvars_alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0,1), got {}", config.zdvars_alpha)));
    }
    let c = dvars_components(y)?;
    let t = y.nrows();
    let z_cut = Normal::standard().inverse_cdf(1.0 - config.zdvars_alpha / t as f64);
    let flags = (0..t)
        .map(|i| i > 0 && c.zdvars[i] > z_cut && c.delta_pct[i] > config.pct_cut)
        .collect();
    Ok(ScrubDecision {
        method: ScrubMethod::Dvars,
        threshold_spec: ThresholdSpec::Dual {
            zdvars_alpha: config.zdvars_alpha,
            pct_cut: config.pct_cut,
        },
        median_metric: median(&c.zdvars[1..]),
        metric: c.zdvars,
        metric_secondary: Some(c.delta_pct),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(seed: u64, t: usize, v: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, v, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn s_hiqr_by_hand() {
        let s = s_hiqr(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((s - 1.0 / 0.6745).abs() < 1e-12);
        assert!((s - 1.4826).abs() < 1e-3);
        let scaled = s_hiqr(&[10.0, 20.0, 30.0, 40.0, 50.0]).unwrap();
        assert!((scaled - 10.0 * s).abs() < 1e-12);
        assert!(matches!(s_hiqr(&[1.0; 6]), Err(Error::Degenerate(_))));
        assert!(s_hiqr(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn s_hiqr_of_gaussian_is_near_one() {
        let x = gaussian(1, 20_000, 1);
        let s = s_hiqr(x.as_slice()).unwrap();
        assert!((s - 1.0).abs() < 0.05, "{s}");
    }

    #[test]
    fn components_by_hand() {
        let y = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 2.0, 2.0, 2.0, 4.0]);
        let c = dvars_components(&y).unwrap();
        assert_eq!(c.a, vec![0.0, 4.0, 10.0]);
        // ½ differences squared, averaged over locations
        assert_eq!(c.d, vec![0.0, 1.0, 0.5]);
        assert_eq!(c.d_median, 0.75);
    }

    #[test]
    fn constant_scan_has_no_flags() {
        let y = DMatrix::from_element(50, 10, 3.0);
        let d = dvars_dual(&y, &DvarsConfig::default()).unwrap();
        assert_eq!(d.n_flagged(), 0);
        assert!(d.metric.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn gaussian_null_rarely_flags() {
        let y = gaussian(7, 1185, 400);
        let d = dvars_dual(&y, &DvarsConfig::default()).unwrap();
        assert!((d.n_flagged() as f64) < 0.01 * 1185.0);
    }

    #[test]
    fn planted_shift_is_flagged() {
        let mut y = gaussian(8, 1185, 400);
        y.row_mut(599).add_scalar_mut(5.0);
        let d = dvars_dual(&y, &DvarsConfig::default()).unwrap();
        let flagged = d.flagged_indices();
        assert!(!flagged.is_empty());
        assert!(flagged.iter().all(|&t| t == 599 || t == 600), "{flagged:?}");
    }

    #[test]
    fn scale_invariant_flags() {
        let mut y = gaussian(9, 300, 50);
        y.row_mut(100).add_scalar_mut(3.0);
        let a = dvars_dual(&y, &DvarsConfig::default()).unwrap();
        let b = dvars_dual(&(&y * 3.0), &DvarsConfig::default()).unwrap();
        assert_eq!(a.flags, b.flags);
        assert!(a.n_flagged() > 0);
    }

    #[test]
    fn input_validation() {
        assert!(dvars_components(&DMatrix::zeros(10, 0)).is_err());
        assert!(dvars_components(&DMatrix::zeros(2, 5)).is_err());
        assert!(dvars_dual(&DMatrix::zeros(10, 2), &DvarsConfig { zdvars_alpha: 0.0, pct_cut: 5.0 }).is_err());
    }
}
