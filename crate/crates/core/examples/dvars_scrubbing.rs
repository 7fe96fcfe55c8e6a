//! DVARS dual-cutoff flagging on a preliminary residual matrix.

use scrubkit::nuisance::{build_design, regress_matrix, DenoiseSpec};
use scrubkit::scrub::{dvars_dual, DvarsConfig};
use scrubkit::synth::{generate, score_flags, SynthSpec};

fn main() -> scrubkit::Result<()> {
    let spec = SynthSpec {
        n_subjects: 1,
        n_runs: 1,
        seed: 5,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    let run = &data.runs[0];
    let denoise = DenoiseSpec::default()
        .with_noise_rois(run.noise_rois())
        .with_rps(run.rps.clone());
    let design = build_design(&denoise, run.scan.n_volumes(), None)?;
    let residuals = regress_matrix(run.scan.values(), &design)?;
    let d = dvars_dual(&residuals, &DvarsConfig::default())?;
    println!("flagged: {:?}", d.flagged_indices());
    // DVARS flags the volume after a burst as well as the burst itself
    let s = score_flags(&d.flags, &run.truth.burst_times, 1)?;
    println!("sensitivity {:.2}, specificity {:.3}", s.sensitivity, s.specificity);
    Ok(())
}
