//! Grayplots as binary PGM and metric traces as SVG.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::quantile;
use crate::scrub::{ScrubDecision, ThresholdSpec};

/// Intensity window percentiles for grayplots.
pub const WINDOW: (f64, f64) = (0.02, 0.98);

/// 8-bit grayplot: one row per location, one column per volume.
/// Intensities are clipped to the 2nd–98th percentile of all values; a
/// zero-width window renders mid-gray.
pub fn grayplot(values: &DMatrix<f64>) -> Result<Vec<u8>> {
    let (t, v) = values.shape();
    if t == 0 || v == 0 {
        return Err(Error::invalid("cannot render an empty matrix"));
    }
    let lo = quantile(values.as_slice(), WINDOW.0);
    let hi = quantile(values.as_slice(), WINDOW.1);
    let mut out = format!("P5\n{t} {v}\n255\n").into_bytes();
    out.reserve(t * v);
    for j in 0..v {
        for i in 0..t {
            let level = if hi > lo {
                ((values[(i, j)] - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0
            } else {
                127.0
            };
            out.push(level.round() as u8);
        }
    }
    Ok(out)
}

/// Width, height and pixels of a binary PGM.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| Error::Parse(e.to_string()))?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Parse("expected an 8-bit binary PGM".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos + 1..).unwrap_or_default();
    if data.len() != w * h {
        return Err(Error::Parse(format!("PGM has {} pixels, expected {}", data.len(), w * h)));
    }
    Ok((w, h, data.to_vec()))
}

/// One trace plus optional horizontal rule lines.
pub struct Trace<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
    pub rules: Vec<f64>,
}

const WIDTH: f64 = 900.0;
const PANEL: f64 = 160.0;
const MARGIN: f64 = 40.0;

/// Stacked line plots; flagged volumes are shaded.
pub fn traces_svg(traces: &[Trace], flags: Option<&[bool]>) -> Result<String> {
    if traces.is_empty() || traces.iter().any(|t| t.values.is_empty()) {
        return Err(Error::invalid("nothing to plot"));
    }
    let n = traces[0].values.len();
    if traces.iter().any(|t| t.values.len() != n) || flags.is_some_and(|f| f.len() != n) {
        return Err(Error::shape("traces and flags must have equal length"));
    }
    let height = MARGIN + traces.len() as f64 * (PANEL + MARGIN);
    let x = |i: f64| MARGIN + (WIDTH - 2.0 * MARGIN) * i / (n.max(2) - 1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, trace) in traces.iter().enumerate() {
        let top = MARGIN + k as f64 * (PANEL + MARGIN);
        let finite = trace.values.iter().chain(&trace.rules).filter(|v| v.is_finite());
        let lo = finite.clone().cloned().fold(f64::INFINITY, f64::min).min(0.0);
        let mut hi = finite.cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        let y = |v: f64| top + PANEL * (1.0 - (v.clamp(lo, hi) - lo) / (hi - lo));
        if let Some(f) = flags {
            let band = (x(1.0) - x(0.0)).max(1.0);
            for (i, _) in f.iter().enumerate().filter(|(_, &f)| f) {
                let _ = writeln!(
                    svg,
                    r##"<rect x="{:.2}" y="{top:.2}" width="{band:.2}" height="{PANEL}" fill="#f4c7c3"/>"##,
                    x(i as f64) - band / 2.0
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN}" y="{top}" width="{}" height="{PANEL}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN
        );
        let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{:.2}">{}</text>"#, top - 6.0, escape(trace.label));
        let points: Vec<String> = trace
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i as f64), y(if v.is_finite() { v } else { lo })))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline fill="none" stroke="#1f4e79" stroke-width="1" points="{}"/>"##,
            points.join(" ")
        );
        for &r in &trace.rules {
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="#c0392b" stroke-dasharray="4 3"/>"##,
                WIDTH - MARGIN,
                y(r),
                y(r)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Metric trace of a decision with its threshold drawn as a rule line.
pub fn decision_svg(decision: &ScrubDecision) -> Result<String> {
    let primary_rule = match decision.threshold_spec {
        ThresholdSpec::MultipleOfMedian { multiple } => vec![multiple * decision.median_metric],
        ThresholdSpec::CutoffMm { cutoff_mm } => vec![cutoff_mm],
        ThresholdSpec::Dual { .. } => Vec::new(),
    };
    let mut traces = vec![Trace {
        label: match decision.threshold_spec {
            ThresholdSpec::Dual { .. } => "ZDVARS",
            _ => decision.method_label(),
        },
        values: &decision.metric,
        rules: primary_rule,
    }];
    if let (Some(secondary), ThresholdSpec::Dual { pct_cut, .. }) = (&decision.metric_secondary, decision.threshold_spec) {
        traces.push(Trace {
            label: "delta % DVARS",
            values: secondary,
            rules: vec![pct_cut],
        });
    }
    traces_svg(&traces, Some(&decision.flags))
}
