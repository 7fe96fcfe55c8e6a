//! Generate a small dataset and write it in the CLI's on-disk layout.

use scrubkit::cli::main_with_args;

fn main() {
    let out = std::env::temp_dir().join("scrubkit_simulated");
    let config = out.with_extension("toml");
    std::fs::write(&config, "seed = 4\n[simulate]\nn_subjects = 2\nn_volumes = 300\nn_locations = 100\nn_parcels = 10\n")
        .expect("write config");
    let code = main_with_args([
        "scrubkit",
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    println!("simulate exited with {code}; manifest at {}", out.join("manifest.json").display());
}
