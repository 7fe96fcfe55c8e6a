//! Sample excess kurtosis, its Gaussian null 0.99 quantile, and
//! kurtosis-based component selection.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::ProjectionResult;
use crate::data::dct_basis;
use crate::error::{Error, Result};
use crate::linalg::{pivoted_qr, quantile_sorted};

/// Series at least this long use the analytic null instead of simulation.
pub const ASYMPTOTIC_MIN_T: usize = 1000;
pub const DEFAULT_NULL_REPS: usize = 100_000;
const NULL_P: f64 = 0.99;
const CHUNK: usize = 1024;

/// `(1/N) Σ ((xᵢ − x̄)/s)⁴ − 3` with `s` the N−1 sample standard deviation.
pub fn kurtosis(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 4 {
        return Err(Error::invalid(format!("kurtosis needs at least 4 values, got {n}")));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let magnitude = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    // below this the spread is rounding noise around a constant
    if !(ss > (nf * f64::EPSILON * magnitude).powi(2)) {
        return Err(Error::Degenerate("kurtosis of a constant series".into()));
    }
    let var = ss / (nf - 1.0);
    let m4: f64 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    Ok(m4 / (var * var) - 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullSource {
    MonteCarlo,
    Asymptotic,
}

/// 0.99 quantile of sample kurtosis for Gaussian series of length `n_volumes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KurtosisNull {
    pub n_volumes: usize,
    pub quantile_p99: f64,
    pub source: NullSource,
    pub n_reps: Option<usize>,
    pub seed: u64,
}

/// Fisher's exact variance of `m4/m2² − 3` under Gaussian sampling.
fn fisher_variance(n: f64) -> f64 {
    24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0))
}

/// Plain normal approximation: `z_p · sqrt(var)` with mean 0.
pub fn kurtosis_normal_threshold(n_volumes: usize, p: f64) -> f64 {
    let z = Normal::standard().inverse_cdf(p);
    z * fisher_variance(n_volumes as f64).sqrt()
}

/// Analytic quantile using Fisher's exact mean, variance and skewness of
/// `b₂ = m4/m2²` through the Anscombe–Glynn cube-root transform, rescaled to
/// the N−1 standard-deviation convention of [`kurtosis`].
pub fn kurtosis_asymptotic_threshold(n_volumes: usize, p: f64) -> f64 {
    let n = n_volumes as f64;
    let mean_b2 = 3.0 * (n - 1.0) / (n + 1.0);
    let sd_b2 = fisher_variance(n).sqrt();
    let skew = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / skew * (2.0 / skew + (1.0 + 4.0 / (skew * skew)).sqrt());
    let z = Normal::standard().inverse_cdf(p);
    let cube = ((1.0 - 2.0 / (9.0 * a)) - z * (2.0 / (9.0 * a)).sqrt()).powi(3);
    let standardized = ((1.0 - 2.0 / a) / cube - 1.0) / (2.0 / (a - 4.0)).sqrt();
    let b2 = mean_b2 + standardized * sd_b2;
    ((n - 1.0) / n).powi(2) * b2 - 3.0
}

/// Sorted kurtosis values of `n_reps` independent standard-normal series.
///
/// Replicates are generated in fixed-size chunks, each with its own ChaCha
/// stream, so the output does not depend on the thread count.
pub fn kurtosis_monte_carlo(n_volumes: usize, n_reps: usize, seed: u64) -> Vec<f64> {
    let n_chunks = n_reps.div_ceil(CHUNK);
    let mut values: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let reps = CHUNK.min(n_reps - c * CHUNK);
            let mut buf = vec![0.0; n_volumes];
            (0..reps)
                .map(|_| {
                    for b in buf.iter_mut() {
                        *b = StandardNormal.sample(&mut rng);
                    }
                    kurtosis(&buf).expect("gaussian draws have positive variance")
                })
                .collect::<Vec<_>>()
        })
        .collect();
    values.sort_by(f64::total_cmp);
    values
}

pub fn kurtosis_null_p99(n_volumes: usize, n_reps: usize, seed: u64) -> Result<KurtosisNull> {
    if n_volumes < 20 {
        return Err(Error::invalid(format!("kurtosis null needs T >= 20, got {n_volumes}")));
    }
    if n_volumes >= ASYMPTOTIC_MIN_T {
        return Ok(KurtosisNull {
            n_volumes,
            quantile_p99: kurtosis_asymptotic_threshold(n_volumes, NULL_P),
            source: NullSource::Asymptotic,
            n_reps: None,
            seed,
        });
    }
    if n_reps < 100 {
        return Err(Error::invalid(format!("need at least 100 Monte Carlo replicates, got {n_reps}")));
    }
    let sims = kurtosis_monte_carlo(n_volumes, n_reps, seed);
    Ok(KurtosisNull {
        n_volumes,
        quantile_p99: quantile_sorted(&sims, NULL_P),
        source: NullSource::MonteCarlo,
        n_reps: Some(n_reps),
        seed,
    })
}

/// Mark components whose timecourse kurtosis exceeds the null quantile.
pub fn select_artifact_components(mut proj: ProjectionResult, null: &KurtosisNull) -> Result<ProjectionResult> {
    if null.n_volumes != proj.n_volumes() {
        return Err(Error::shape(format!(
            "kurtosis null built for T={} but projection has T={}",
            null.n_volumes,
            proj.n_volumes()
        )));
    }
    proj.selected = proj
        .kurtosis
        .iter()
        .enumerate()
        .filter(|(_, &k)| k > null.quantile_p99)
        .map(|(i, _)| i)
        .collect();
    Ok(proj)
}

/// Regress an intercept and `dct_count` cosine bases out of every
/// timecourse and recompute kurtosis. Off by default in the pipeline,
/// which detrends the data before projection instead.
pub fn detrend_components(proj: &mut ProjectionResult, dct_count: usize) -> Result<()> {
    let t = proj.n_volumes();
    let mut design = DMatrix::from_element(t, 1 + dct_count, 1.0);
    if dct_count > 0 {
        let dct = dct_basis(t, dct_count)?;
        design.columns_mut(1, dct_count).copy_from(dct.values());
    }
    let qr = pivoted_qr(&design, 1e-10);
    proj.timecourses = qr.residualize(&proj.timecourses);
    proj.kurtosis = proj
        .timecourses
        .column_iter()
        .map(|c| kurtosis(c.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_series_by_hand() {
        // mean 0, s² = 4/3, each ((x−0)/s)⁴ = 9/16 → 9/16 − 3
        let k = kurtosis(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert!((k - (-2.4375)).abs() < 1e-14, "{k}");
    }

    #[test]
    fn short_or_constant_series_error() {
        assert!(kurtosis(&[1.0, 2.0, 3.0]).is_err());
        assert!(matches!(kurtosis(&[2.0; 10]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gaussian_kurtosis_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = 50_000;
        let x: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let k = kurtosis(&x).unwrap();
        assert!(k.abs() < 3.0 * (24.0 / t as f64).sqrt(), "{k}");
    }

    #[test]
    fn spike_gives_large_kurtosis() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x: Vec<f64> = (0..100).map(|_| 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        x[40] = 10.0;
        assert!(kurtosis(&x).unwrap() > 20.0);
    }

    #[test]
    fn affine_invariance() {
        let x: Vec<f64> = (0..37).map(|i| ((i * i) % 11) as f64 + (i as f64).sin()).collect();
        let base = kurtosis(&x).unwrap();
        for (a, b) in [(3.0, -2.0), (-0.5, 100.0), (1e3, 1e3)] {
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            assert!((kurtosis(&y).unwrap() - base).abs() < 1e-10);
        }
    }

    #[test]
    fn normal_threshold_closed_form() {
        let t = 1185.0f64;
        let var = 24.0 * t * (t - 2.0) * (t - 3.0) / ((t + 1.0).powi(2) * (t + 3.0) * (t + 5.0));
        let expected = 2.326348 * var.sqrt();
        assert!((kurtosis_normal_threshold(1185, 0.99) - expected).abs() < 1e-5);
        assert!((kurtosis_normal_threshold(1185, 0.99) - 0.33).abs() < 0.005);
    }

    #[test]
    fn long_series_use_analytic_null() {
        let null = kurtosis_null_p99(1185, DEFAULT_NULL_REPS, 1).unwrap();
        assert_eq!(null.source, NullSource::Asymptotic);
        assert_eq!(null.n_reps, None);
        assert!((null.quantile_p99 - kurtosis_asymptotic_threshold(1185, 0.99)).abs() < 1e-15);
        let short = kurtosis_null_p99(999, 2_000, 1).unwrap();
        assert_eq!(short.source, NullSource::MonteCarlo);
        assert!(kurtosis_null_p99(19, 1000, 1).is_err());
    }

    #[test]
    fn small_t_simulated_threshold_exceeds_normal_approximation() {
        let mc = kurtosis_null_p99(500, 20_000, 3).unwrap();
        assert!(mc.quantile_p99 > kurtosis_normal_threshold(500, 0.99));
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let a = kurtosis_null_p99(60, 5_000, 42).unwrap();
        let b = kurtosis_null_p99(60, 5_000, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.quantile_p99 > 0.0);
        let c = kurtosis_null_p99(60, 5_000, 43).unwrap();
        assert_ne!(a.quantile_p99, c.quantile_p99);
    }

    #[test]
    fn thread_count_does_not_change_the_null() {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = single.install(|| kurtosis_monte_carlo(40, 3_000, 7));
        let b = kurtosis_monte_carlo(40, 3_000, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_threshold_positive_from_t20() {
        for t in [20, 50, 300, 1000, 5000] {
            assert!(kurtosis_asymptotic_threshold(t, 0.99) > 0.0, "T={t}");
        }
    }
}
