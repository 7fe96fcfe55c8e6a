//! Synthetic multi-subject scans with known connectivity and planted bursts.
//!
//! Each location carries its parcel's signal (a subject-specific low-rank
//! mixture of unit-variance factors), AR(1) noise and slow cosine drift.
//! Bursts add a sparse signed spatial pattern to a single volume. Realignment
//! parameters are a random walk plus a respiratory-band oscillation, with a
//! step displacement `motion_lag` volumes after each motion-locked burst.
//!
//! Every random draw comes from a ChaCha8 stream derived from
//! `(seed, subject, run)`, so runs can be generated in any order.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{RealignmentParams, RunLabels, ScanMatrix};
use crate::error::{Error, Result};
use crate::fc::{fisher_z, FcMatrix, Parcellation};

/// Fewest volumes between two randomly placed bursts.
const MIN_BURST_SPACING: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_volumes: usize,
    pub n_locations: usize,
    pub n_parcels: usize,
    pub n_subjects: usize,
    pub n_runs: usize,
    pub tr_seconds: f64,
    pub signal_rank: usize,
    /// Signal variance per location relative to a unit-variance noise.
    pub signal_variance: f64,
    /// Subject deviation of the loadings, relative to the shared loadings.
    pub subject_effect_sd: f64,
    pub ar1_phi: f64,
    pub noise_sd: f64,
    pub drift_amplitude: f64,
    /// Explicit 0-based burst volumes per run (`[subject * n_runs + run]`); random when absent.
    pub burst_times: Option<Vec<Vec<usize>>>,
    pub n_bursts: usize,
    /// Burst amplitude in noise standard deviations.
    pub burst_amplitude_sd: f64,
    /// Fraction of locations touched by each burst.
    pub burst_density: f64,
    pub resp_freq_hz: f64,
    pub resp_amplitude_mm: f64,
    pub walk_sd_mm: f64,
    /// Fraction of bursts accompanied by an RP step.
    pub motion_locked_fraction: f64,
    pub step_mm: f64,
    /// Volumes from a burst to its RP step.
    pub motion_lag: usize,
    pub n_wm: usize,
    pub n_csf: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_volumes: 600,
            n_locations: 400,
            n_parcels: 20,
            n_subjects: 4,
            n_runs: 2,
            tr_seconds: 0.72,
            signal_rank: 5,
            signal_variance: 0.3,
            subject_effect_sd: 0.5,
            ar1_phi: 0.3,
            noise_sd: 1.0,
            drift_amplitude: 1.0,
            burst_times: None,
            n_bursts: 10,
            burst_amplitude_sd: 5.0,
            burst_density: 0.3,
            resp_freq_hz: 0.35,
            resp_amplitude_mm: 0.1,
            walk_sd_mm: 0.01,
            motion_locked_fraction: 1.0,
            step_mm: 0.5,
            motion_lag: 1,
            n_wm: 40,
            n_csf: 20,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_scans(&self) -> usize {
        self.n_subjects * self.n_runs
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.n_volumes < 20 {
            return fail(format!("need at least 20 volumes, got {}", self.n_volumes));
        }
        if self.n_parcels < 2 || self.n_locations < self.n_parcels {
            return fail(format!("cannot split {} locations into {} parcels", self.n_locations, self.n_parcels));
        }
        if self.n_subjects == 0 || self.n_runs == 0 {
            return fail("need at least one subject and one run".into());
        }
        if self.signal_rank == 0 || self.signal_rank > self.n_parcels {
            return fail(format!("signal rank must be in 1..={}", self.n_parcels));
        }
        if !(0.0..=0.9).contains(&self.ar1_phi) {
            return fail(format!("AR(1) coefficient must be in [0, 0.9], got {}", self.ar1_phi));
        }
        if !(0.0..=1.0).contains(&self.burst_density) || !(0.0..=1.0).contains(&self.motion_locked_fraction) {
            return fail("burst density and motion-locked fraction must be in [0, 1]".into());
        }
        let nonneg = [
            self.signal_variance,
            self.subject_effect_sd,
            self.noise_sd,
            self.drift_amplitude,
            self.burst_amplitude_sd,
            self.resp_amplitude_mm,
            self.walk_sd_mm,
            self.step_mm,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.tr_seconds > 0.0) || !(self.noise_sd > 0.0) {
            return fail("amplitudes must be finite and nonnegative; TR and noise SD positive".into());
        }
        match &self.burst_times {
            Some(times) => {
                if times.len() != self.n_scans() {
                    return fail(format!("burst_times lists {} runs but the spec has {}", times.len(), self.n_scans()));
                }
                if let Some(bad) = times.iter().flatten().find(|&&t| t >= self.n_volumes) {
                    return fail(format!("burst index {bad} out of range for {} volumes", self.n_volumes));
                }
            }
            None => {
                let usable = self.n_volumes.saturating_sub(4);
                if self.n_bursts * MIN_BURST_SPACING > usable {
                    return fail(format!("{} bursts do not fit in {} volumes", self.n_bursts, self.n_volumes));
                }
            }
        }
        Ok(())
    }

    pub fn parcellation(&self) -> Result<Parcellation> {
        Parcellation::contiguous(self.n_locations, self.n_parcels)
    }
}

/// Planted contamination of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTruth {
    pub labels: RunLabels,
    pub burst_times: Vec<usize>,
    /// Bursts that have an RP step `motion_lag` volumes later.
    pub motion_locked: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SynthRun {
    pub scan: ScanMatrix,
    pub clean_scan: ScanMatrix,
    pub rps: RealignmentParams,
    pub wm: DMatrix<f64>,
    pub csf: DMatrix<f64>,
    pub global_signal: Vec<f64>,
    pub truth: RunTruth,
}

impl SynthRun {
    pub fn noise_rois(&self) -> Vec<(String, DMatrix<f64>)> {
        vec![("wm".to_string(), self.wm.clone()), ("csf".to_string(), self.csf.clone())]
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Population FC of each subject's parcel means.
    pub true_fc: Vec<FcMatrix>,
    pub runs: Vec<RunTruth>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub parcellation: Parcellation,
    /// Ordered subject-major: `runs[subject * n_runs + run]`.
    pub runs: Vec<SynthRun>,
    pub truth: GroundTruth,
}

fn stream(seed: u64, subject: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((subject << 32) | run);
    rng
}

const SHARED: u64 = u32::MAX as u64;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

/// Stationary AR(1) columns with marginal standard deviation `sd`.
fn ar1(rng: &mut ChaCha8Rng, t: usize, v: usize, phi: f64, sd: f64) -> DMatrix<f64> {
    let innovation = sd * (1.0 - phi * phi).sqrt();
    let mut out = DMatrix::zeros(t, v);
    for j in 0..v {
        let mut x: f64 = sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
        out[(0, j)] = x;
        for i in 1..t {
            let e: f64 = StandardNormal.sample(rng);
            x = phi * x + innovation * e;
            out[(i, j)] = x;
        }
    }
    out
}

fn cosine(t: usize, k: usize, i: usize) -> f64 {
    (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / t as f64).cos()
}

/// Two slow cosines per location with random weights.
fn drift(rng: &mut ChaCha8Rng, t: usize, v: usize, amplitude: f64) -> DMatrix<f64> {
    let w = randn(rng, 2, v, amplitude);
    DMatrix::from_fn(t, v, |i, j| w[(0, j)] * cosine(t, 1, i) + w[(1, j)] * cosine(t, 2, i))
}

/// Subject loadings (P × rank): shared plus subject deviation.
fn loadings(spec: &SynthSpec, subject: usize) -> DMatrix<f64> {
    let sd = (spec.signal_variance / spec.signal_rank as f64).sqrt();
    let shared = randn(&mut stream(spec.seed, SHARED, SHARED), spec.n_parcels, spec.signal_rank, sd);
    let own = randn(
        &mut stream(spec.seed, subject as u64, SHARED),
        spec.n_parcels,
        spec.signal_rank,
        sd * spec.subject_effect_sd,
    );
    shared + own
}

/// Fisher-z correlation of parcel means implied by the generative model.
pub fn model_fc(spec: &SynthSpec, parc: &Parcellation, subject: usize) -> FcMatrix {
    let l = loadings(spec, subject);
    let mut cov = &l * l.transpose();
    let mut counts = vec![0.0; parc.n_parcels()];
    for &p in parc.assignment() {
        counts[p - 1] += 1.0;
    }
    for p in 0..parc.n_parcels() {
        cov[(p, p)] += spec.noise_sd * spec.noise_sd / counts[p];
    }
    let n = parc.n_parcels();
    let z = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            fisher_z(cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt())
        }
    });
    FcMatrix {
        z,
        labels: RunLabels::new(format!("sub-{:02}", subject + 1), "", ""),
        n_volumes_used: 0,
    }
}

fn random_burst_times(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<usize> {
    // slots of width MIN_BURST_SPACING keep bursts apart and away from the edges
    let slots = (t - 4) / MIN_BURST_SPACING;
    let mut times: Vec<usize> = sample(rng, slots, n)
        .into_iter()
        .map(|s| 2 + s * MIN_BURST_SPACING + rng.random_range(0..MIN_BURST_SPACING - 1))
        .collect();
    times.sort_unstable();
    times
}

fn generate_run(spec: &SynthSpec, parc: &Parcellation, subject: usize, run: usize) -> Result<SynthRun> {
    let (t, v) = (spec.n_volumes, spec.n_locations);
    let mut rng = stream(spec.seed, subject as u64, run as u64);
    let labels = RunLabels::new(format!("sub-{:02}", subject + 1), format!("ses-{:02}", run + 1), "1");

    // clean scan: parcel signal + AR(1) noise + drift
    let factors = randn(&mut rng, t, spec.signal_rank, 1.0);
    let parcel_signal = factors * loadings(spec, subject).transpose();
    let noise = ar1(&mut rng, t, v, spec.ar1_phi, spec.noise_sd);
    let drift_m = drift(&mut rng, t, v, spec.drift_amplitude);
    let mut clean = noise + drift_m;
    for (j, &p) in parc.assignment().iter().enumerate() {
        for i in 0..t {
            clean[(i, j)] += parcel_signal[(i, p - 1)];
        }
    }

    // noise ROIs: AR(1) noise + two physiological factors + drift
    let physio = randn(&mut rng, t, 2, 1.0);
    let roi = |rng: &mut ChaCha8Rng, n: usize| -> DMatrix<f64> {
        let w = randn(rng, 2, n, 1.0);
        ar1(rng, t, n, spec.ar1_phi, spec.noise_sd) + &physio * w + drift(rng, t, n, spec.drift_amplitude)
    };
    let mut wm = roi(&mut rng, spec.n_wm.max(1));
    let mut csf = roi(&mut rng, spec.n_csf.max(1));

    // bursts; the burst stream is separate so the clean scan ignores burst settings
    let mut burst_rng = stream(spec.seed ^ 0x6275_7273_7473, subject as u64, run as u64);
    let bursts = match &spec.burst_times {
        Some(all) => {
            let mut b = all[subject * spec.n_runs + run].clone();
            b.sort_unstable();
            b.dedup();
            b
        }
        None => random_burst_times(&mut burst_rng, t, spec.n_bursts),
    };
    let amp = spec.burst_amplitude_sd * spec.noise_sd;
    let mut scan = clean.clone();
    for &b in &bursts {
        let mut pattern = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if burst_rng.random::<f64>() < spec.burst_density {
                        if burst_rng.random::<bool>() { amp } else { -amp }
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        for (j, x) in pattern(v).into_iter().enumerate() {
            scan[(b, j)] += x;
        }
        for (j, x) in pattern(wm.ncols()).into_iter().enumerate() {
            wm[(b, j)] += x;
        }
        for (j, x) in pattern(csf.ncols()).into_iter().enumerate() {
            csf[(b, j)] += x;
        }
    }

    // RPs: random walk + respiratory oscillation + steps after motion-locked bursts
    let mut motion_rng = stream(spec.seed ^ 0x6d6f_7469_6f6e, subject as u64, run as u64);
    let mut rp = DMatrix::zeros(t, 6);
    for c in 0..6 {
        let scale = if c >= 3 { 1.0 / 50.0 } else { 1.0 };
        let mut x = 0.0;
        for i in 0..t {
            let e: f64 = StandardNormal.sample(&mut motion_rng);
            x += spec.walk_sd_mm * scale * e;
            rp[(i, c)] = x;
        }
    }
    let phase: f64 = motion_rng.random::<f64>() * std::f64::consts::TAU;
    for i in 0..t {
        let s = spec.resp_amplitude_mm
            * (std::f64::consts::TAU * spec.resp_freq_hz * i as f64 * spec.tr_seconds + phase).sin();
        rp[(i, 1)] += s;
        rp[(i, 2)] += 0.8 * s;
    }
    let n_locked = (spec.motion_locked_fraction * bursts.len() as f64).round() as usize;
    let locked: Vec<usize> = {
        let mut idx = sample(&mut motion_rng, bursts.len(), n_locked).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| bursts[k]).collect()
    };
    for &b in &locked {
        let at = b + spec.motion_lag;
        if at >= t {
            continue;
        }
        let dir = randn(&mut motion_rng, 1, 3, 1.0);
        let dir = &dir / dir.norm();
        for c in 0..3 {
            for i in at..t {
                rp[(i, c)] += spec.step_mm * dir[(0, c)];
            }
        }
    }

    let global_signal: Vec<f64> = scan.row_iter().map(|r| r.mean()).collect();
    let clean_scan = ScanMatrix::new(clean, spec.tr_seconds)?.with_labels(labels.clone());
    let scan = ScanMatrix::new(scan, spec.tr_seconds)?.with_labels(labels.clone());
    Ok(SynthRun {
        scan,
        clean_scan,
        rps: RealignmentParams::new(rp, spec.tr_seconds)?,
        wm,
        csf,
        global_signal,
        truth: RunTruth {
            labels,
            burst_times: bursts,
            motion_locked: locked,
        },
    })
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let parc = spec.parcellation()?;
    let runs = (0..spec.n_scans())
        .into_par_iter()
        .map(|k| generate_run(spec, &parc, k / spec.n_runs, k % spec.n_runs))
        .collect::<Result<Vec<_>>>()?;
    let true_fc = (0..spec.n_subjects).map(|s| model_fc(spec, &parc, s)).collect();
    let truth = GroundTruth {
        true_fc,
        runs: runs.iter().map(|r| r.truth.clone()).collect(),
    };
    Ok(SynthDataset {
        spec: spec.clone(),
        parcellation: parc,
        runs,
        truth,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagScore {
    pub sensitivity: f64,
    pub specificity: f64,
    pub n_bursts: usize,
    pub n_detected: usize,
    pub n_false: usize,
    pub n_clear: usize,
}

/// A burst is detected when a flag lies within ±`halo` volumes. Specificity
/// counts volumes farther than `halo` from every burst. Sensitivity is 1
/// when there are no bursts.
pub fn score_flags(flags: &[bool], burst_times: &[usize], halo: usize) -> Result<FlagScore> {
    let t = flags.len();
    if let Some(bad) = burst_times.iter().find(|&&b| b >= t) {
        return Err(Error::shape(format!("burst at {bad} outside {t} volumes")));
    }
    let window = |b: usize| b.saturating_sub(halo)..=(b + halo).min(t - 1);
    let n_detected = burst_times.iter().filter(|&&b| window(b).any(|i| flags[i])).count();
    let mut near = vec![false; t];
    for &b in burst_times {
        for i in window(b) {
            near[i] = true;
        }
    }
    let n_clear = near.iter().filter(|&&n| !n).count();
    let n_false = (0..t).filter(|&i| !near[i] && flags[i]).count();
    Ok(FlagScore {
        sensitivity: if burst_times.is_empty() { 1.0 } else { n_detected as f64 / burst_times.len() as f64 },
        specificity: if n_clear == 0 { 1.0 } else { 1.0 - n_false as f64 / n_clear as f64 },
        n_bursts: burst_times.len(),
        n_detected,
        n_false,
        n_clear,
    })
}
