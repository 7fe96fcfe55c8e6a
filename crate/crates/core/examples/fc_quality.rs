//! Parcel FC before and after oracle scrubbing, scored by ICC,
//! fingerprinting and distance to the generating connectivity.

use scrubkit::fc::{fc_from_values, fingerprint_pooled, icc_per_pair, rmse_validity, FcMatrix};
use scrubkit::nuisance::{build_design, regress_matrix, DenoiseSpec};
use scrubkit::synth::{generate, SynthSpec};

fn main() -> scrubkit::Result<()> {
    let spec = SynthSpec {
        n_subjects: 6,
        n_runs: 2,
        n_volumes: 400,
        burst_amplitude_sd: 10.0,
        seed: 1,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    for scrub in [false, true] {
        let mut table: Vec<Vec<FcMatrix>> = vec![Vec::new(); spec.n_subjects];
        for (k, run) in data.runs.iter().enumerate() {
            let t = run.scan.n_volumes();
            let flags: Vec<bool> = (0..t).map(|i| scrub && run.truth.burst_times.contains(&i)).collect();
            let denoise = DenoiseSpec::default()
                .with_noise_rois(run.noise_rois())
                .with_rps(run.rps.clone());
            let design = build_design(&denoise, t, Some(&flags))?;
            let r = regress_matrix(run.scan.values(), &design)?;
            let mut m = fc_from_values(&r, &data.parcellation, &flags)?;
            m.labels = run.truth.labels.clone();
            table[k / spec.n_runs].push(m);
        }
        let icc: Vec<f64> = icc_per_pair(&table)?.into_iter().flatten().collect();
        let first: Vec<FcMatrix> = table.iter().map(|r| r[0].clone()).collect();
        let second: Vec<FcMatrix> = table.iter().map(|r| r[1].clone()).collect();
        let est: Vec<Vec<Vec<f64>>> = table.iter().map(|r| r.iter().map(FcMatrix::upper_triangle).collect()).collect();
        let truth: Vec<Vec<Vec<f64>>> = (0..spec.n_subjects)
            .map(|s| vec![data.truth.true_fc[s].upper_triangle(); spec.n_runs])
            .collect();
        println!(
            "{:>9}: mean ICC {:.4}, fingerprint {:.2}, RMSE {:.4}",
            if scrub { "scrubbed" } else { "raw" },
            icc.iter().sum::<f64>() / icc.len() as f64,
            fingerprint_pooled(&first, &second, None)?,
            rmse_validity(&est, &truth)?
        );
    }
    Ok(())
}
