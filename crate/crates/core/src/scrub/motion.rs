use serde::{Deserialize, Serialize};

use super::filter::{design_notch, NotchFilter, NotchKind};
use super::{ScrubDecision, ScrubMethod, ThresholdSpec};
use crate::data::RealignmentParams;
use crate::error::{Error, Result};
use crate::linalg::median;

/// Radius of the sphere on which rotations are converted to arc length.
pub const ROTATION_RADIUS_MM: f64 = 50.0;

/// Framewise displacement with lag `lag`.
///
/// Columns 3..6 of `rp` are rotations in radians. Each column is optionally
/// notch-filtered, then `FD(t) = Σ |q_t − q_{t−lag}|`, with `FD(t) = 0` for
/// the first `lag` volumes.
pub fn fd(rp: &RealignmentParams, lag: usize, filter: &NotchFilter, radius_mm: f64) -> Result<Vec<f64>> {
    let t = rp.n_volumes();
    if lag < 1 || lag >= t {
        return Err(Error::invalid(format!("lag must be in 1..{t}, got {lag}")));
    }
    if !filter.is_identity() && (filter.tr_seconds - rp.tr_seconds()).abs() > 1e-9 * rp.tr_seconds() {
        return Err(Error::shape(format!(
            "filter designed for TR {} s but RPs have TR {} s",
            filter.tr_seconds,
            rp.tr_seconds()
        )));
    }
    let mut out = vec![0.0; t];
    for (c, col) in rp.values().column_iter().enumerate() {
        let scale = if c >= 3 { radius_mm } else { 1.0 };
        let series: Vec<f64> = col.iter().map(|v| v * scale).collect();
        let series = filter.filtfilt(&series);
        for i in lag..t {
            out[i] += (series[i] - series[i - lag]).abs();
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub lag: usize,
    pub filter: NotchKind,
    pub band_hz: [f64; 2],
    pub cutoff_mm: f64,
    pub radius_mm: f64,
}

impl MotionConfig {
    /// Lag-1 unfiltered FD at 0.3 mm.
    pub fn fd() -> Self {
        Self {
            lag: 1,
            filter: NotchKind::None,
            band_hz: [0.31, 0.43],
            cutoff_mm: 0.3,
            radius_mm: ROTATION_RADIUS_MM,
        }
    }

    /// Lag-4 FD after a 20 dB Chebyshev notch at 0.31–0.43 Hz, cut at 0.2 mm.
    pub fn modfd() -> Self {
        Self {
            lag: 4,
            filter: NotchKind::Chebyshev2,
            band_hz: [0.31, 0.43],
            cutoff_mm: 0.2,
            radius_mm: ROTATION_RADIUS_MM,
        }
    }

    pub fn for_method(method: ScrubMethod) -> Result<Self> {
        match method {
            ScrubMethod::Fd => Ok(Self::fd()),
            ScrubMethod::Modfd => Ok(Self::modfd()),
            other => Err(Error::invalid(format!("{other} is not a motion metric"))),
        }
    }
}

/// FD trace and flags where it exceeds `cutoff_mm`. Reported as `modfd`
/// whenever the lag is above 1 or a notch is applied.
pub fn fd_decision(rp: &RealignmentParams, config: &MotionConfig) -> Result<ScrubDecision> {
    if !(config.cutoff_mm > 0.0) {
        return Err(Error::invalid(format!("cutoff must be positive, got {}", config.cutoff_mm)));
    }
    let filter = design_notch(config.filter, config.band_hz, rp.tr_seconds())?;
    let metric = fd(rp, config.lag, &filter, config.radius_mm)?;
    let flags = metric.iter().map(|&v| v > config.cutoff_mm).collect();
    let method = if config.lag == 1 && config.filter == NotchKind::None {
        ScrubMethod::Fd
    } else {
        ScrubMethod::Modfd
    };
    Ok(ScrubDecision {
        method,
        threshold_spec: ThresholdSpec::CutoffMm {
            cutoff_mm: config.cutoff_mm,
        },
        median_metric: median(&metric),
        metric,
        metric_secondary: None,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    const TR: f64 = 0.72;

    fn rp(values: DMatrix<f64>) -> RealignmentParams {
        RealignmentParams::new(values, TR).unwrap()
    }

    #[test]
    fn constant_rps_have_zero_fd() {
        let r = rp(DMatrix::from_element(30, 6, 0.7));
        let none = NotchFilter::identity(TR);
        assert!(fd(&r, 1, &none, 50.0).unwrap().iter().all(|&v| v == 0.0));
        let d = fd_decision(&r, &MotionConfig::modfd()).unwrap();
        assert!(d.metric.iter().all(|v| v.abs() < 1e-9));
        assert_eq!(d.n_flagged(), 0);
    }

    #[test]
    fn single_translation_step() {
        let r = rp(DMatrix::from_fn(30, 6, |t, c| if c == 0 && t >= 10 { 0.3 } else { 0.0 }));
        let v = fd(&r, 1, &NotchFilter::identity(TR), 50.0).unwrap();
        for (t, x) in v.iter().enumerate() {
            let expected = if t == 10 { 0.3 } else { 0.0 };
            assert!((x - expected).abs() < 1e-15, "{t}: {x}");
        }
    }

    #[test]
    fn rotations_use_arc_length() {
        let r = rp(DMatrix::from_fn(5, 6, |t, c| if c == 4 && t >= 2 { 0.01 } else { 0.0 }));
        let v = fd(&r, 1, &NotchFilter::identity(TR), 50.0).unwrap();
        assert!((v[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn first_lag_volumes_are_zero_and_never_flagged() {
        let r = rp(DMatrix::from_fn(40, 6, |t, c| ((t * 7 + c * 3) % 5) as f64));
        let cfg = MotionConfig {
            lag: 4,
            filter: NotchKind::None,
            ..MotionConfig::modfd()
        };
        let d = fd_decision(&r, &cfg).unwrap();
        assert!(d.metric[..4].iter().all(|&v| v == 0.0));
        assert!(d.flags[..4].iter().all(|f| !f));
        assert_eq!(d.method, ScrubMethod::Modfd);
        assert!(fd(&r, 40, &NotchFilter::identity(TR), 50.0).is_err());
        assert!(fd(&r, 0, &NotchFilter::identity(TR), 50.0).is_err());
    }

    #[test]
    fn translation_invariant_and_linear() {
        let base = DMatrix::from_fn(50, 6, |t, c| ((t as f64) * 0.3 + c as f64).sin() * 0.1);
        let none = NotchFilter::identity(TR);
        let a = fd(&rp(base.clone()), 2, &none, 50.0).unwrap();
        let b = fd(&rp(base.add_scalar(3.0)), 2, &none, 50.0).unwrap();
        let c = fd(&rp(&base * 2.5), 2, &none, 50.0).unwrap();
        for t in 0..50 {
            assert!((a[t] - b[t]).abs() < 1e-12);
            assert!((2.5 * a[t] - c[t]).abs() < 1e-12);
        }
    }

    fn respiratory_rp(n: usize) -> RealignmentParams {
        rp(DMatrix::from_fn(n, 6, |t, c| {
            if c == 0 {
                0.5 * (2.0 * std::f64::consts::PI * 0.35 * t as f64 * TR).sin()
            } else {
                0.0
            }
        }))
    }

    #[test]
    fn respiratory_sinusoid_is_suppressed_away_from_the_edges() {
        let n = 1200;
        let r = respiratory_rp(n);
        let filter = design_notch(NotchKind::Chebyshev2, [0.31, 0.43], TR).unwrap();
        let raw = fd(&r, 1, &NotchFilter::identity(TR), 50.0).unwrap();
        let filtered = fd(&r, 1, &filter, 50.0).unwrap();
        let edge = filter.edge_len();
        let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        let inner = max(&filtered[edge..n - edge]);
        assert!(inner < 0.1 * max(&raw), "{inner} vs {}", max(&raw));
    }

    #[test]
    fn modfd_mean_is_a_small_fraction_of_fd() {
        let n = 1185;
        let r = respiratory_rp(n);
        let plain = fd_decision(&r, &MotionConfig::fd()).unwrap();
        let modfd = fd_decision(&r, &MotionConfig::modfd()).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&modfd.metric) < 0.1 * mean(&plain.metric));
    }

    #[test]
    fn mismatched_tr_rejected() {
        let r = rp(DMatrix::zeros(100, 6));
        let filter = design_notch(NotchKind::Chebyshev2, [0.31, 0.43], 0.8).unwrap();
        assert!(fd(&r, 4, &filter, 50.0).is_err());
    }
}
