//! Build the CC2+MP6 design with spike regressors and check that the
//! residuals are orthogonal to every column.

use scrubkit::nuisance::{build_design, censored_regress, regress_matrix, DenoiseSpec, Strategy};
use scrubkit::synth::{generate, SynthSpec};

fn main() -> scrubkit::Result<()> {
    let spec = SynthSpec {
        n_subjects: 1,
        n_runs: 1,
        seed: 2,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    let run = &data.runs[0];
    let t = run.scan.n_volumes();
    let mut flags = vec![false; t];
    for &b in &run.truth.burst_times {
        flags[b] = true;
    }
    for strategy in ["mpp", "dct4", "cc2", "2p", "9p", "36p", "cc2mp6", "cc5mp24"] {
        let strategy: Strategy = strategy.parse()?;
        let denoise = DenoiseSpec::new(strategy)
            .with_noise_rois(run.noise_rois())
            .with_global_signal(run.global_signal.clone())
            .with_rps(run.rps.clone());
        let design = build_design(&denoise, t, Some(&flags))?;
        let r = regress_matrix(run.scan.values(), &design)?;
        let audit = design.values.tr_mul(&r).abs().max() / run.scan.values().norm();
        println!("{:>8}: {:>3} columns, rank {:>3}, orthogonality {audit:.1e}", strategy.to_string(), design.n_columns(), design.rank);
    }
    let design = build_design(&DenoiseSpec::new(Strategy::Dct4), t, None)?;
    let (r, kept) = censored_regress(run.scan.values(), &design, &flags)?;
    println!("censoring keeps {} of {t} volumes ({} rows of residuals)", kept.len(), r.nrows());
    Ok(())
}
