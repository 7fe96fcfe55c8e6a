//! FD and modified FD on synthetic realignment parameters with a
//! respiratory oscillation. The notch filter removes the false spikes.

use scrubkit::scrub::{design_notch, fd_decision, MotionConfig, NotchKind};
use scrubkit::synth::{generate, SynthSpec};

fn main() -> scrubkit::Result<()> {
    let spec = SynthSpec {
        n_subjects: 1,
        n_runs: 1,
        resp_amplitude_mm: 0.3,
        seed: 11,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    let rp = &data.runs[0].rps;
    for (name, cfg) in [("fd", MotionConfig::fd()), ("modfd", MotionConfig::modfd())] {
        let d = fd_decision(rp, &cfg)?;
        println!(
            "{name:>6}: lag {}, filter {}, cutoff {} mm, {} of {} volumes flagged",
            cfg.lag,
            cfg.filter,
            cfg.cutoff_mm,
            d.n_flagged(),
            d.n_volumes()
        );
    }
    let notch = design_notch(NotchKind::Butterworth10, MotionConfig::modfd().band_hz, rp.tr_seconds())?;
    for f in [0.1, spec.resp_freq_hz, 0.45] {
        println!("notch gain at {f:.2} Hz: {:.4}", notch.gain(f));
    }
    Ok(())
}
