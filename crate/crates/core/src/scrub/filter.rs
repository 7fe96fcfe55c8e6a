//! Digital band-stop (notch) filters for realignment parameters.
//!
//! Filters are designed from an analog low-pass prototype, moved to a
//! band-stop with the usual frequency transform, and discretized with the
//! bilinear transform after prewarping the band edges. The filter is kept as
//! second-order sections and applied forward and backward, so the net
//! response has zero phase.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type C = Complex<f64>;

/// Stop-band attenuation of the Chebyshev type II design, in dB.
pub const CHEBYSHEV_STOPBAND_DB: f64 = 20.0;
const BUTTERWORTH_ORDER: usize = 10;
const CHEBYSHEV_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NotchKind {
    None,
    Butterworth10,
    #[serde(rename = "chebyshev2", alias = "chebyshev2_20db")]
    Chebyshev2,
}

impl std::fmt::Display for NotchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NotchKind::None => "none",
            NotchKind::Butterworth10 => "butterworth10",
            NotchKind::Chebyshev2 => "chebyshev2",
        })
    }
}

impl std::str::FromStr for NotchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "butterworth10" | "butter" | "butterworth" => Ok(Self::Butterworth10),
            "chebyshev2" | "chebyshev2_20db" | "cheby2" => Ok(Self::Chebyshev2),
            other => Err(Error::invalid(format!("unknown filter {other:?}"))),
        }
    }
}

/// One biquad `[b0, b1, b2, 1, a1, a2]`.
pub type Section = [f64; 6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NotchFilter {
    pub kind: NotchKind,
    pub band_hz: [f64; 2],
    pub tr_seconds: f64,
    pub sections: Vec<Section>,
    /// Expanded transfer-function numerator.
    pub b: Vec<f64>,
    /// Expanded transfer-function denominator, `a[0] = 1`.
    pub a: Vec<f64>,
}

impl NotchFilter {
    pub fn identity(tr_seconds: f64) -> Self {
        Self {
            kind: NotchKind::None,
            band_hz: [0.0, 0.0],
            tr_seconds,
            sections: Vec::new(),
            b: vec![1.0],
            a: vec![1.0],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.sections.is_empty()
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> C {
        let w = 2.0 * std::f64::consts::PI * freq_hz * self.tr_seconds;
        let zi = C::from_polar(1.0, -w);
        let zi2 = zi * zi;
        self.sections.iter().fold(C::new(1.0, 0.0), |acc, s| {
            acc * (s[0] + zi * s[1] + zi2 * s[2]) / (s[3] + zi * s[4] + zi2 * s[5])
        })
    }

    pub fn gain(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    /// Poles of every section.
    pub fn poles(&self) -> Vec<C> {
        self.sections.iter().flat_map(|s| quadratic_roots(s[3], s[4], s[5])).collect()
    }

    /// Zero-phase forward-backward filtering with odd reflection padding of
    /// `3 × max(len(a), len(b))` samples and steady-state initial conditions.
    ///
    /// The output matches the input at both endpoints, so stop-band content
    /// is only partly removed within about [`Self::edge_len`] samples of
    /// either end.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if self.is_identity() || x.len() < 2 {
            return x.to_vec();
        }
        let n = x.len();
        let pad = (3 * self.a.len().max(self.b.len())).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.steady_state();
        let x0 = ext[0];
        let mut y = self.run(&ext, &zi, x0);
        y.reverse();
        let y0 = y[0];
        let mut z = self.run(&y, &zi, y0);
        z.reverse();
        z[pad..pad + n].to_vec()
    }

    /// Padding length used by [`Self::filtfilt`].
    pub fn edge_len(&self) -> usize {
        if self.is_identity() {
            0
        } else {
            3 * self.a.len().max(self.b.len())
        }
    }

    /// Per-section state for a unit step held forever.
    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let dc = (s[0] + s[1] + s[2]) / (s[3] + s[4] + s[5]);
                let z2 = scale * (s[2] - s[5] * dc);
                let z1 = scale * (s[1] - s[4] * dc) + z2;
                scale *= dc;
                [z1, z2]
            })
            .collect()
    }

    /// Transposed direct form II cascade with initial state `zi × x0`.
    fn run(&self, x: &[f64], zi: &[[f64; 2]], x0: f64) -> Vec<f64> {
        let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect();
        x.iter()
            .map(|&v| {
                let mut u = v;
                for (s, z) in self.sections.iter().zip(state.iter_mut()) {
                    let y = s[0] * u + z[0];
                    z[0] = s[1] * u - s[4] * y + z[1];
                    z[1] = s[2] * u - s[5] * y;
                    u = y;
                }
                u
            })
            .collect()
    }
}

/// Design a digital band-stop filter for the band `[low, high]` Hz.
pub fn design_notch(kind: NotchKind, band_hz: [f64; 2], tr_seconds: f64) -> Result<NotchFilter> {
    if !(tr_seconds > 0.0 && tr_seconds.is_finite()) {
        return Err(Error::invalid(format!("TR must be positive, got {tr_seconds}")));
    }
    if kind == NotchKind::None {
        return Ok(NotchFilter::identity(tr_seconds));
    }
    let fs = 1.0 / tr_seconds;
    let nyquist = fs / 2.0;
    let [low, high] = band_hz;
    if !(low > 0.0 && low < high && high < nyquist) {
        return Err(Error::invalid(format!(
            "notch band [{low}, {high}] Hz must satisfy 0 < low < high < Nyquist = {nyquist}"
        )));
    }
    let (z, p, k) = match kind {
        NotchKind::Butterworth10 => butterworth_prototype(BUTTERWORTH_ORDER),
        NotchKind::Chebyshev2 => chebyshev2_prototype(CHEBYSHEV_ORDER, CHEBYSHEV_STOPBAND_DB),
        NotchKind::None => unreachable!(),
    };
    let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
    let (w1, w2) = (warp(low), warp(high));
    let (z, p, k) = lowpass_to_bandstop(&z, &p, k, (w1 * w2).sqrt(), w2 - w1);
    let (z, p, k) = bilinear(&z, &p, k, fs);
    if p.iter().any(|pole| pole.norm() >= 1.0) {
        return Err(Error::Degenerate(format!("{kind} design for [{low}, {high}] Hz is unstable")));
    }
    let sections = zpk_to_sections(&z, &p, k);
    let (b, a) = expand_sections(&sections);
    Ok(NotchFilter {
        kind,
        band_hz,
        tr_seconds,
        sections,
        b,
        a,
    })
}

type Zpk = (Vec<C>, Vec<C>, f64);

fn butterworth_prototype(order: usize) -> Zpk {
    let n = order as f64;
    let poles = (0..order)
        .map(|i| {
            let m = -(n - 1.0) + 2.0 * i as f64;
            -C::from_polar(1.0, std::f64::consts::PI * m / (2.0 * n))
        })
        .collect();
    (Vec::new(), poles, 1.0)
}

/// Chebyshev type II prototype with stop-band edge at 1 rad/s.
fn chebyshev2_prototype(order: usize, stop_db: f64) -> Zpk {
    use std::f64::consts::PI;
    let n = order as f64;
    let de = 1.0 / (10f64.powf(0.1 * stop_db) - 1.0).sqrt();
    let mu = (1.0 / de).asinh() / n;
    let ms: Vec<f64> = (0..order)
        .map(|i| -(n - 1.0) + 2.0 * i as f64)
        .filter(|m| *m != 0.0)
        .collect();
    let zeros: Vec<C> = ms.iter().map(|m| -(C::i() / (m * PI / (2.0 * n)).sin()).conj()).collect();
    let poles: Vec<C> = (0..order)
        .map(|i| {
            let m = -(n - 1.0) + 2.0 * i as f64;
            let q = -C::from_polar(1.0, PI * m / (2.0 * n));
            C::new(1.0, 0.0) / C::new(mu.sinh() * q.re, mu.cosh() * q.im)
        })
        .collect();
    let num = poles.iter().fold(C::new(1.0, 0.0), |acc, p| acc * -p);
    let den = zeros.iter().fold(C::new(1.0, 0.0), |acc, z| acc * -z);
    (zeros, poles, (num / den).re)
}

fn lowpass_to_bandstop(z: &[C], p: &[C], k: f64, wo: f64, bw: f64) -> Zpk {
    let degree = p.len() - z.len();
    let split = |r: &C| -> [C; 2] {
        let h = C::new(bw / 2.0, 0.0) / r;
        let s = (h * h - wo * wo).sqrt();
        [h + s, h - s]
    };
    let mut zb: Vec<C> = z.iter().flat_map(split).collect();
    let pb: Vec<C> = p.iter().flat_map(split).collect();
    for _ in 0..degree {
        zb.push(C::new(0.0, wo));
        zb.push(C::new(0.0, -wo));
    }
    let num = z.iter().fold(C::new(1.0, 0.0), |acc, r| acc * -r);
    let den = p.iter().fold(C::new(1.0, 0.0), |acc, r| acc * -r);
    (zb, pb, k * (num / den).re)
}

fn bilinear(z: &[C], p: &[C], k: f64, fs: f64) -> Zpk {
    let fs2 = C::new(2.0 * fs, 0.0);
    let mut zd: Vec<C> = z.iter().map(|r| (fs2 + r) / (fs2 - r)).collect();
    let pd: Vec<C> = p.iter().map(|r| (fs2 + r) / (fs2 - r)).collect();
    zd.extend(std::iter::repeat_n(C::new(-1.0, 0.0), p.len() - z.len()));
    let num = z.iter().fold(C::new(1.0, 0.0), |acc, r| acc * (fs2 - r));
    let den = p.iter().fold(C::new(1.0, 0.0), |acc, r| acc * (fs2 - r));
    (zd, pd, k * (num / den).re)
}

/// Monic quadratics `[1, c1, c2]` from roots closed under conjugation.
fn quadratics(roots: &[C]) -> Vec<([f64; 3], f64)> {
    const IMAG_TOL: f64 = 1e-10;
    let mut out = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for r in roots {
        if r.im.abs() <= IMAG_TOL * r.norm().max(1.0) {
            reals.push(r.re);
        } else if r.im > 0.0 {
            out.push(([1.0, -2.0 * r.re, r.norm_sqr()], r.norm()));
        }
    }
    reals.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    for pair in reals.chunks(2) {
        match pair {
            [a, b] => out.push(([1.0, -(a + b), a * b], a.abs().max(b.abs()))),
            [a] => out.push(([1.0, -a, 0.0], a.abs())),
            _ => unreachable!(),
        }
    }
    out
}

fn zpk_to_sections(z: &[C], p: &[C], k: f64) -> Vec<Section> {
    let mut poles = quadratics(p);
    let mut zeros = quadratics(z);
    // poles nearest the unit circle first, each paired with the closest zero pair
    poles.sort_by(|a, b| b.1.total_cmp(&a.1));
    let pole_root = |q: &[f64; 3]| quadratic_roots(1.0, q[1], q[2])[0];
    let mut sections = Vec::with_capacity(poles.len());
    for (pq, _) in &poles {
        let target = pole_root(pq);
        let best = zeros
            .iter()
            .enumerate()
            .map(|(i, (zq, _))| {
                let d = quadratic_roots(1.0, zq[1], zq[2])
                    .iter()
                    .map(|r| (r - target).norm())
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        let zq = match best {
            Some(i) => zeros.remove(i).0,
            None => [1.0, 0.0, 0.0],
        };
        sections.push([zq[0], zq[1], zq[2], pq[0], pq[1], pq[2]]);
    }
    if let Some(first) = sections.first_mut() {
        for c in first.iter_mut().take(3) {
            *c *= k;
        }
    }
    sections
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<C> {
    if a == 0.0 {
        return if b == 0.0 { Vec::new() } else { vec![C::new(-c / b, 0.0)] };
    }
    let disc = C::new(b * b - 4.0 * a * c, 0.0).sqrt();
    vec![(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)]
}

fn convolve(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + y.len() - 1];
    for (i, a) in x.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn expand_sections(sections: &[Section]) -> (Vec<f64>, Vec<f64>) {
    sections.iter().fold((vec![1.0], vec![1.0]), |(b, a), s| {
        (convolve(&b, &s[..3]), convolve(&a, &s[3..]))
    })
}
