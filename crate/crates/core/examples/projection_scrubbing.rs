//! ICA projection scrubbing on a synthetic run with planted bursts.

use scrubkit::nuisance::DenoiseSpec;
use scrubkit::pipeline::{preliminary_then_final, ProjectionConfig, ScrubRule};
use scrubkit::projection::ProjectionMethod;
use scrubkit::synth::{generate, score_flags, SynthSpec};

fn main() -> scrubkit::Result<()> {
    let spec = SynthSpec {
        n_subjects: 1,
        n_runs: 1,
        seed: 7,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    let run = &data.runs[0];
    let denoise = DenoiseSpec::default()
        .with_noise_rois(run.noise_rois())
        .with_rps(run.rps.clone());
    let rule = ScrubRule::Projection(ProjectionConfig::with_method(ProjectionMethod::Ica));
    let out = preliminary_then_final(&run.scan, &denoise, &rule)?;

    let p = out.projection.as_ref().expect("projection rule");
    println!(
        "components: {} estimated, {} above the kurtosis cutoff {:.3}",
        p.projection.n_components(),
        p.projection.selected.len(),
        p.null.quantile_p99
    );
    println!("flagged volumes: {:?}", out.decision.flagged_indices());
    println!("planted bursts:  {:?}", run.truth.burst_times);
    let score = score_flags(&out.decision.flags, &run.truth.burst_times, 1)?;
    println!("sensitivity {:.2}, specificity {:.3}", score.sensitivity, score.specificity);
    println!("final design: {} columns", out.design.n_columns());
    Ok(())
}
