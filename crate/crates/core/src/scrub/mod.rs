//! Volume-level outlier metrics and the threshold rules that turn them
//! into scrubbing flags.

mod dvars;
mod filter;
mod leverage;
mod motion;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dvars::{dvars_components, dvars_dual, s_hiqr, DvarsComponents, DvarsConfig, ZDVARS_CAP};
pub use filter::{design_notch, NotchFilter, NotchKind, Section, CHEBYSHEV_STOPBAND_DB};
pub use leverage::{hat_diagonal, leverage, threshold_leverage, DEFAULT_LEVERAGE_MULTIPLE};
pub use motion::{fd, fd_decision, MotionConfig, ROTATION_RADIUS_MM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrubMethod {
    Leverage,
    Fd,
    Modfd,
    Dvars,
}

impl std::fmt::Display for ScrubMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScrubMethod::Leverage => "leverage",
            ScrubMethod::Fd => "fd",
            ScrubMethod::Modfd => "modfd",
            ScrubMethod::Dvars => "dvars",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ThresholdSpec {
    MultipleOfMedian { multiple: f64 },
    CutoffMm { cutoff_mm: f64 },
    Dual { zdvars_alpha: f64, pct_cut: f64 },
}

/// Per-volume metric, its flags, and the rule that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrubDecision {
    pub method: ScrubMethod,
    pub threshold_spec: ThresholdSpec,
    pub median_metric: f64,
    pub metric: Vec<f64>,
    /// Δ%DVARS for the DVARS rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_secondary: Option<Vec<f64>>,
    pub flags: Vec<bool>,
}

impl ScrubDecision {
    pub fn method_label(&self) -> &'static str {
        match self.method {
            ScrubMethod::Leverage => "leverage",
            ScrubMethod::Fd => "FD (mm)",
            ScrubMethod::Modfd => "modFD (mm)",
            ScrubMethod::Dvars => "DVARS",
        }
    }

    pub fn n_volumes(&self) -> usize {
        self.flags.len()
    }

    pub fn n_flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn flagged_indices(&self) -> Vec<usize> {
        flagged_indices(&self.flags)
    }

    /// Also flag `before` volumes preceding and `after` volumes following each flag.
    pub fn expanded(&self, before: usize, after: usize) -> Self {
        Self {
            flags: expand_flags(&self.flags, before, after),
            ..self.clone()
        }
    }

    /// One 0/1 value per line, no header.
    pub fn flags_csv(&self) -> String {
        let mut s = String::with_capacity(2 * self.flags.len());
        for &f in &self.flags {
            s.push(if f { '1' } else { '0' });
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text)?;
        if d.metric.len() != d.flags.len() {
            return Err(Error::shape("metric and flags lengths differ"));
        }
        Ok(d)
    }
}

pub fn flagged_indices(flags: &[bool]) -> Vec<usize> {
    flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
}

pub fn expand_flags(flags: &[bool], before: usize, after: usize) -> Vec<bool> {
    let n = flags.len();
    let mut out = vec![false; n];
    for i in flagged_indices(flags) {
        let lo = i.saturating_sub(before);
        let hi = (i + after).min(n.saturating_sub(1));
        out[lo..=hi].iter_mut().for_each(|f| *f = true);
    }
    out
}

/// Parse a one-column flag file: `0/1`, `true/false`, blank lines ignored.
pub fn parse_flags(text: &str) -> Result<Vec<bool>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| match l.to_ascii_lowercase().as_str() {
            "1" | "true" | "1.0" => Ok(true),
            "0" | "false" | "0.0" => Ok(false),
            other => Err(Error::Parse(format!("flag line {}: {other:?}", i + 1))),
        })
        .collect()
}
