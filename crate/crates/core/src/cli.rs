//! Command-line front end. Settings resolve as flag, then config file, then default.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{RealignmentParams, RunLabels, ScanMatrix};
use crate::error::{Error, Result};
use crate::fc::{
    fc_from_values, fingerprint_pooled, icc_per_pair, mac, random_flags, rmse_validity, FcMatrix, Parcellation,
};
use crate::io::{read_matrix, write_atomic, write_csv, write_json, write_matrix};
use crate::nuisance::{build_design, censored_regress, regress_matrix, DenoiseSpec, Strategy};
use crate::pipeline::{compute_scrub, ProjectionConfig, ScrubRule};
use crate::projection::{DimensionCriterion, ProjectionMethod};
use crate::render::{decision_svg, grayplot};
use crate::scrub::{parse_flags, DvarsConfig, MotionConfig, NotchKind, ScrubDecision};
use crate::synth::{generate, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "scrubkit", version, about = "Data-driven scrubbing and denoising for fMRI timeseries")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Treat non-convergence as a failure (exit code 3).
    #[arg(long, global = true)]
    pub strict: bool,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and manifest.
    Simulate(SimulateArgs),
    /// Compute a scrubbing metric and flags.
    Scrub(ScrubArgs),
    /// Nuisance regression with optional spike regressors.
    Denoise(DenoiseArgs),
    /// Parcel functional connectivity.
    Fc(FcArgs),
    /// Reliability, identifiability, validity and change metrics over a manifest.
    Evaluate(EvaluateArgs),
    /// Grayplots and metric traces.
    Render(RenderArgs),
}

#[derive(Args, Debug, Default)]
pub struct InputArgs {
    /// Scan matrix (T × V), CSV or binary.
    #[arg(long)]
    pub input: PathBuf,
    /// Realignment parameters (T × 6).
    #[arg(long)]
    pub rp: Option<PathBuf>,
    /// Noise-ROI timeseries as NAME=PATH; repeatable.
    #[arg(long = "roi", value_parser = parse_named_path)]
    pub rois: Vec<(String, PathBuf)>,
    /// Global signal (one value per volume).
    #[arg(long)]
    pub gs: Option<PathBuf>,
    /// Repetition time in seconds; required for CSV inputs.
    #[arg(long)]
    pub tr: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct ScrubFlags {
    /// pca | ica | fusedpca | fd | modfd | dvars
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub leverage_multiple: Option<f64>,
    #[arg(long)]
    pub cutoff_mm: Option<f64>,
    #[arg(long)]
    pub lag: Option<usize>,
    #[arg(long)]
    pub filter: Option<NotchKind>,
    /// Notch band as LO,HI in Hz.
    #[arg(long, value_parser = parse_band)]
    pub band_hz: Option<[f64; 2]>,
    /// Keep components explaining this variance fraction.
    #[arg(long)]
    pub variance_fraction: Option<f64>,
    /// Fixed number of components (overrides the variance fraction).
    #[arg(long)]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub null_reps: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct DenoiseFlags {
    /// mpp | dct4 | ccX | 2p | 9p | 36p | ccXmp6 | ccXmp24
    #[arg(long)]
    pub denoise: Option<Strategy>,
    /// Omit the DCT drift bases.
    #[arg(long)]
    pub no_dct: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {}

#[derive(Args, Debug)]
pub struct ScrubArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub scrub: ScrubFlags,
    #[command(flatten)]
    pub denoise: DenoiseFlags,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub denoise: DenoiseFlags,
    /// One 0/1 flag per volume.
    #[arg(long)]
    pub flags: Option<PathBuf>,
    /// Delete flagged volumes instead of adding spike regressors.
    #[arg(long)]
    pub censor: bool,
}

#[derive(Args, Debug)]
pub struct FcArgs {
    /// Residual scan matrix.
    #[arg(long)]
    pub input: PathBuf,
    /// Parcel id (1-based) per location, with an optional network column.
    #[arg(long)]
    pub parcellation: Option<PathBuf>,
    /// Split locations into this many contiguous parcels instead.
    #[arg(long)]
    pub parcels: Option<usize>,
    #[arg(long)]
    pub flags: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Flagging methods to compare: none, oracle, pca, ica, fusedpca, fd, modfd, dvars.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[command(flatten)]
    pub scrub: ScrubFlags,
    #[command(flatten)]
    pub denoise: DenoiseFlags,
    /// Volumes from the start of each run used for FC.
    #[arg(long)]
    pub window_volumes: Option<usize>,
    /// Exclude a subject when less than this fraction of a window survives scrubbing.
    #[arg(long)]
    pub min_retained: Option<f64>,
    /// Random-scrubbing permutations for MAC.
    #[arg(long)]
    pub permutations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Scan matrix to draw as a grayplot.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Scrub decision JSON files to draw as traces.
    #[arg(long = "decision")]
    pub decisions: Vec<PathBuf>,
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got {s:?}"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected NAME=PATH, got {s:?}"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn parse_band(s: &str) -> std::result::Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok([p(lo)?, p(hi)?])
}

/// Settings read from the TOML configuration file.
#[derive(Debug, Default, Deserialize, Serialize, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub strict: Option<bool>,
    pub scrub: ScrubSection,
    pub denoise: DenoiseSection,
    pub evaluate: EvaluateSection,
    pub simulate: Option<SynthSpec>,
}

#[derive(Debug, Default, Deserialize, Serialize, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct ScrubSection {
    pub method: Option<String>,
    pub leverage_multiple: Option<f64>,
    pub cutoff_mm: Option<f64>,
    pub lag: Option<usize>,
    pub filter: Option<NotchKind>,
    pub band_hz: Option<[f64; 2]>,
    pub variance_fraction: Option<f64>,
    pub dimension: Option<usize>,
    pub null_reps: Option<usize>,
    pub kappa: Option<f64>,
    pub zdvars_alpha: Option<f64>,
    pub pct_cut: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseSection {
    pub strategy: Option<Strategy>,
    pub include_dct: Option<bool>,
}

#[derive(Debug, Default, Deserialize, Serialize, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub methods: Option<Vec<String>>,
    pub window_volumes: Option<usize>,
    pub min_retained: Option<f64>,
    pub permutations: Option<usize>,
}

pub fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        }
    }
}

/// Global settings after merging flags and the config file.
struct Context {
    config: FileConfig,
    seed: u64,
    strict: bool,
    out: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let config = load_config(cli.config.as_deref())?;
        let out = cli
            .out
            .clone()
            .ok_or_else(|| Error::invalid("--out is required"))?;
        Ok(Self {
            seed: cli.seed.or(config.seed).unwrap_or(0),
            strict: cli.strict || config.strict.unwrap_or(false),
            config,
            out,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Scrubbing rule resolved from flags, config and defaults.
pub fn resolve_rule(flags: &ScrubFlags, section: &ScrubSection, seed: u64, strict: bool) -> Result<ScrubRule> {
    let method = flags
        .method
        .clone()
        .or_else(|| section.method.clone())
        .unwrap_or_else(|| "ica".to_string())
        .to_ascii_lowercase();
    match method.as_str() {
        "fd" | "modfd" => {
            let base = if method == "fd" { MotionConfig::fd() } else { MotionConfig::modfd() };
            Ok(ScrubRule::Motion(MotionConfig {
                lag: flags.lag.or(section.lag).unwrap_or(base.lag),
                filter: flags.filter.or(section.filter).unwrap_or(base.filter),
                band_hz: flags.band_hz.or(section.band_hz).unwrap_or(base.band_hz),
                cutoff_mm: flags.cutoff_mm.or(section.cutoff_mm).unwrap_or(base.cutoff_mm),
                radius_mm: base.radius_mm,
            }))
        }
        "dvars" => {
            let base = DvarsConfig::default();
            Ok(ScrubRule::Dvars(DvarsConfig {
                zdvars_alpha: section.zdvars_alpha.unwrap_or(base.zdvars_alpha),
                pct_cut: section.pct_cut.unwrap_or(base.pct_cut),
            }))
        }
        other => {
            let projection: ProjectionMethod = other
                .trim_start_matches("projection:")
                .parse()
                .map_err(|_| Error::invalid(format!("unknown scrubbing method {other:?}")))?;
            let base = ProjectionConfig::with_method(projection);
            let criterion = match flags.dimension.or(section.dimension) {
                Some(q) => DimensionCriterion::Fixed(q),
                None => flags
                    .variance_fraction
                    .or(section.variance_fraction)
                    .map_or(base.criterion, DimensionCriterion::VarianceFraction),
            };
            Ok(ScrubRule::Projection(ProjectionConfig {
                criterion,
                leverage_multiple: flags.leverage_multiple.or(section.leverage_multiple).unwrap_or(base.leverage_multiple),
                seed,
                null_reps: flags.null_reps.or(section.null_reps).unwrap_or(base.null_reps),
                kappa: flags.kappa.or(section.kappa).unwrap_or(base.kappa),
                strict,
                ..base
            }))
        }
    }
}

struct Inputs {
    scan: ScanMatrix,
    rps: Option<RealignmentParams>,
    rois: Vec<(String, DMatrix<f64>)>,
    gs: Option<Vec<f64>>,
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?.values;
    if m.ncols() != 1 {
        return Err(Error::shape(format!("{} must have one column", path.display())));
    }
    Ok(m.iter().copied().collect())
}

fn load_scan(path: &Path, tr: Option<f64>) -> Result<ScanMatrix> {
    let file = read_matrix(path)?;
    let tr = match (tr, file.tr_seconds) {
        (Some(flag), _) => flag,
        (None, Some(stored)) => stored,
        (None, None) => return Err(Error::invalid(format!("{} has no TR; pass --tr", path.display()))),
    };
    ScanMatrix::new(file.values, tr)
}

fn load_inputs(args: &InputArgs) -> Result<Inputs> {
    let scan = load_scan(&args.input, args.tr)?;
    let rps = match &args.rp {
        Some(p) => {
            let rp = RealignmentParams::new(read_matrix(p)?.values, scan.tr_seconds())?;
            rp.check_matches(&scan)?;
            Some(rp)
        }
        None => None,
    };
    let rois = args
        .rois
        .iter()
        .map(|(name, p)| Ok((name.clone(), read_matrix(p)?.values)))
        .collect::<Result<Vec<_>>>()?;
    let gs = args.gs.as_deref().map(read_vector).transpose()?;
    Ok(Inputs { scan, rps, rois, gs })
}

/// Denoising spec; without an explicit strategy, CC2+MP6 when ROIs and RPs are
/// available and DCT detrending alone otherwise.
fn resolve_denoise(flags: &DenoiseFlags, section: &DenoiseSection, inputs: &Inputs) -> DenoiseSpec {
    let strategy = flags.denoise.or(section.strategy).unwrap_or_else(|| {
        if !inputs.rois.is_empty() && inputs.rps.is_some() {
            Strategy::CcxMp6(2)
        } else {
            log::info!("no noise ROIs or RPs given; pass 1 uses dct4");
            Strategy::Dct4
        }
    });
    let include_dct = if flags.no_dct {
        false
    } else {
        section.include_dct.unwrap_or(strategy.default_include_dct())
    };
    DenoiseSpec {
        strategy,
        include_dct,
        noise_rois: inputs.rois.clone(),
        global_signal: inputs.gs.clone(),
        rps: inputs.rps.clone(),
    }
}

fn check_convergence(rule: &ScrubRule, projection: Option<&crate::pipeline::ProjectionScrub>, strict: bool) -> Result<()> {
    if let (ScrubRule::Projection(cfg), Some(p)) = (rule, projection) {
        if !p.projection.diagnostics.converged {
            let msg = format!("{} projection stopped at its iteration cap", cfg.method);
            if strict {
                return Err(Error::NotConverged(msg));
            }
            log::warn!("{msg}");
        }
    }
    Ok(())
}

fn cmd_scrub(ctx: &Context, args: &ScrubArgs) -> Result<()> {
    let inputs = load_inputs(&args.input)?;
    let rule = resolve_rule(&args.scrub, &ctx.config.scrub, ctx.seed, ctx.strict)?;
    if rule.needs_rps() && inputs.rps.is_none() {
        return Err(Error::invalid("FD-type scrubbing needs --rp"));
    }
    let spec = resolve_denoise(&args.denoise, &ctx.config.denoise, &inputs);
    let design = build_design(&spec, inputs.scan.n_volumes(), None)?;
    let preliminary = regress_matrix(inputs.scan.values(), &design)?;
    let (decision, projection) = compute_scrub(&preliminary, inputs.rps.as_ref(), &rule)?;
    check_convergence(&rule, projection.as_ref(), ctx.strict)?;

    write_atomic(ctx.path("decision.json"), format!("{}\n", decision.to_json()?).as_bytes())?;
    write_atomic(ctx.path("flags.csv"), decision.flags_csv().as_bytes())?;
    let mut report = json!({
        "metric": decision.method,
        "value": decision.n_flagged() as f64 / decision.n_volumes() as f64,
        "n": decision.n_volumes(),
        "n_flagged": decision.n_flagged(),
        "flagged": decision.flagged_indices(),
        "config": { "rule": rule, "denoise": spec.strategy, "include_dct": spec.include_dct, "seed": ctx.seed },
    });
    if let Some(p) = &projection {
        report["projection"] = serde_json::to_value(p.projection.sidecar())?;
        report["kurtosis_null"] = serde_json::to_value(&p.null)?;
        write_json(ctx.path("projection.json"), &p.projection.sidecar())?;
    }
    write_json(ctx.path("report.json"), &report)
}

fn cmd_denoise(ctx: &Context, args: &DenoiseArgs) -> Result<()> {
    let inputs = load_inputs(&args.input)?;
    let spec = resolve_denoise(&args.denoise, &ctx.config.denoise, &inputs);
    let t = inputs.scan.n_volumes();
    let flags = match &args.flags {
        Some(p) => {
            let f = parse_flags(&std::fs::read_to_string(p)?)?;
            if f.len() != t {
                return Err(Error::shape(format!("flag file has {} entries for {t} volumes", f.len())));
            }
            Some(f)
        }
        None => None,
    };
    let design = build_design(&spec, t, flags.as_deref())?;
    let y = inputs.scan.values();
    let tr = inputs.scan.tr_seconds();
    let (residuals, kept) = if args.censor {
        let f = flags.clone().unwrap_or_else(|| vec![false; t]);
        censored_regress(y, &design, &f)?
    } else {
        (regress_matrix(y, &design)?, (0..t).collect())
    };
    write_matrix(ctx.path("residuals.bin"), &residuals, tr)?;
    write_csv(ctx.path("design.csv"), &design.values, Some(&design.label_strings()))?;
    if args.censor {
        let kept_m = DMatrix::from_iterator(kept.len(), 1, kept.iter().map(|&k| k as f64));
        write_csv(ctx.path("kept_volumes.csv"), &kept_m, Some(&["volume".to_string()]))?;
    }
    // orthogonality audit against the design rows that were actually fitted
    let fitted_design = design.values.select_rows(kept.iter());
    let fitted_design = if args.censor {
        design.without_spikes().values.select_rows(kept.iter())
    } else {
        fitted_design
    };
    let y_norm = y.norm().max(f64::MIN_POSITIVE);
    let orthogonality = fitted_design.tr_mul(&residuals).abs().max() / y_norm;
    let dropped: Vec<String> = design.dropped.iter().map(|&j| design.labels[j].to_string()).collect();
    write_json(
        ctx.path("report.json"),
        &json!({
            "metric": "max_abs_design_residual_product_over_frobenius",
            "value": orthogonality,
            "n": residuals.nrows(),
            "audit_passed": orthogonality < 1e-6,
            "columns": design.n_columns(),
            "rank": design.rank,
            "dropped_columns": dropped,
            "n_flagged": flags.as_ref().map_or(0, |f| f.iter().filter(|&&x| x).count()),
            "config": { "denoise": spec.strategy, "include_dct": spec.include_dct, "censor": args.censor },
        }),
    )
}

pub fn read_parcellation(path: &Path) -> Result<Parcellation> {
    let text = std::fs::read_to_string(path)?;
    let mut assignment = Vec::new();
    let mut networks = BTreeMap::new();
    for (i, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        let mut cells = line.split(',').map(str::trim);
        let first = cells.next().unwrap_or_default();
        let parcel: usize = match first.parse() {
            Ok(p) => p,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("parcellation line {}: {e}", i + 1))),
        };
        if let Some(net) = cells.next().filter(|n| !n.is_empty()) {
            networks.insert(parcel, net.to_string());
        }
        assignment.push(parcel);
    }
    Parcellation::new(assignment, networks)
}

pub fn write_parcellation(path: &Path, parc: &Parcellation) -> Result<()> {
    let mut s = String::from("parcel,network\n");
    for &p in parc.assignment() {
        s.push_str(&format!("{p},{}\n", parc.network(p).unwrap_or("")));
    }
    write_atomic(path, s.as_bytes())
}

fn cmd_fc(ctx: &Context, args: &FcArgs) -> Result<()> {
    let file = read_matrix(&args.input)?;
    let values = file.values;
    let parc = match (&args.parcellation, args.parcels) {
        (Some(p), _) => read_parcellation(p)?,
        (None, Some(n)) => Parcellation::contiguous(values.ncols(), n)?,
        (None, None) => return Err(Error::invalid("pass --parcellation or --parcels")),
    };
    let flags = match &args.flags {
        Some(p) => parse_flags(&std::fs::read_to_string(p)?)?,
        None => vec![false; values.nrows()],
    };
    let m = fc_from_values(&values, &parc, &flags)?;
    write_matrix(ctx.path("fc.bin"), &m.z, file.tr_seconds.unwrap_or(0.0).max(0.0))?;
    write_json(ctx.path("fc.json"), &m.sidecar())
}

/// One acquisition in an evaluation manifest. Paths are relative to the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRun {
    pub subject: String,
    pub session: String,
    #[serde(default)]
    pub run: String,
    pub scan: PathBuf,
    #[serde(default)]
    pub rps: Option<PathBuf>,
    #[serde(default)]
    pub rois: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub global_signal: Option<PathBuf>,
    /// JSON with planted `burst_times`, used by the `oracle` method.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tr_seconds: f64,
    pub parcellation: PathBuf,
    pub runs: Vec<ManifestRun>,
    /// Reference FC per subject for the validity metric.
    #[serde(default)]
    pub true_fc: BTreeMap<String, PathBuf>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }
}

fn cmd_simulate(ctx: &Context) -> Result<()> {
    let mut spec = ctx.config.simulate.clone().unwrap_or_default();
    if ctx.config.seed.is_some() || spec.seed == 0 {
        spec.seed = ctx.seed;
    }
    let data = generate(&spec)?;
    let out = &ctx.out;
    let tr = spec.tr_seconds;
    write_parcellation(&out.join("parcellation.csv"), &data.parcellation)?;
    let mut runs = Vec::new();
    for r in &data.runs {
        let l = &r.truth.labels;
        let stem = format!("{}_{}_run-{}", l.subject, l.session, l.run);
        let f = |suffix: &str| format!("{stem}_{suffix}");
        write_matrix(out.join(f("bold.bin")), r.scan.values(), tr)?;
        write_matrix(out.join(f("clean.bin")), r.clean_scan.values(), tr)?;
        let rp_header: Vec<String> = ["trans_x", "trans_y", "trans_z", "rot_x", "rot_y", "rot_z"].map(String::from).to_vec();
        write_csv(out.join(f("rp.csv")), r.rps.values(), Some(&rp_header))?;
        write_matrix(out.join(f("wm.bin")), &r.wm, tr)?;
        write_matrix(out.join(f("csf.bin")), &r.csf, tr)?;
        let gs = DMatrix::from_column_slice(r.global_signal.len(), 1, &r.global_signal);
        write_csv(out.join(f("gs.csv")), &gs, Some(&["global_signal".to_string()]))?;
        write_json(out.join(f("truth.json")), &r.truth)?;
        runs.push(ManifestRun {
            subject: l.subject.clone(),
            session: l.session.clone(),
            run: l.run.clone(),
            scan: f("bold.bin").into(),
            rps: Some(f("rp.csv").into()),
            rois: BTreeMap::from([("wm".to_string(), f("wm.bin").into()), ("csf".to_string(), f("csf.bin").into())]),
            global_signal: Some(f("gs.csv").into()),
            truth: Some(f("truth.json").into()),
        });
    }
    let mut true_fc = BTreeMap::new();
    for m in &data.truth.true_fc {
        let name = format!("{}_truefc.bin", m.labels.subject);
        write_matrix(out.join(&name), &m.z, 0.0)?;
        true_fc.insert(m.labels.subject.clone(), PathBuf::from(name));
    }
    let manifest = Manifest {
        tr_seconds: tr,
        parcellation: "parcellation.csv".into(),
        runs,
        true_fc,
    };
    write_json(out.join("manifest.json"), &manifest)?;
    write_atomic(
        out.join("spec.toml"),
        toml::to_string(&spec).map_err(|e| Error::Parse(e.to_string()))?.as_bytes(),
    )
}

#[derive(Deserialize)]
struct TruthFile {
    burst_times: Vec<usize>,
}

struct LoadedRun {
    labels: RunLabels,
    inputs: Inputs,
    bursts: Option<Vec<usize>>,
}

fn load_manifest_run(run: &ManifestRun, base: &Path, tr: f64) -> Result<LoadedRun> {
    let p = |rel: &Path| base.join(rel);
    let args = InputArgs {
        input: p(&run.scan),
        rp: run.rps.as_deref().map(p),
        rois: run.rois.iter().map(|(k, v)| (k.clone(), p(v))).collect(),
        gs: run.global_signal.as_deref().map(p),
        tr: Some(tr),
    };
    let mut inputs = load_inputs(&args)?;
    let labels = RunLabels::new(&run.subject, &run.session, &run.run);
    inputs.scan = inputs.scan.with_labels(labels.clone());
    let bursts = match &run.truth {
        Some(t) => Some(serde_json::from_str::<TruthFile>(&std::fs::read_to_string(p(t))?)?.burst_times),
        None => None,
    };
    Ok(LoadedRun { labels, inputs, bursts })
}

/// FC of each run under one flagging method, plus the random-scrubbing FC for MAC.
struct MethodRuns {
    fc: Vec<FcMatrix>,
    random: Vec<Vec<Vec<f64>>>,
    censored_fraction: Vec<f64>,
    retained: Vec<f64>,
}

struct EvalSettings {
    window: usize,
    permutations: usize,
    seed: u64,
}

fn window_fc(residuals: &DMatrix<f64>, flags: &[bool], parc: &Parcellation, window: usize) -> Result<FcMatrix> {
    let w = window.min(residuals.nrows());
    fc_from_values(&residuals.rows(0, w).clone_owned(), parc, &flags[..w])
}

fn evaluate_method(
    method: &str,
    runs: &[LoadedRun],
    parc: &Parcellation,
    ctx: &Context,
    args: &EvaluateArgs,
    settings: &EvalSettings,
) -> Result<MethodRuns> {
    let per_run = runs
        .par_iter()
        .enumerate()
        .map(|(k, run)| -> Result<(FcMatrix, Vec<Vec<f64>>, f64, f64)> {
            let t = run.inputs.scan.n_volumes();
            let spec = resolve_denoise(&args.denoise, &ctx.config.denoise, &run.inputs);
            let base = build_design(&spec, t, None)?;
            let y = run.inputs.scan.values();
            let flags = match method {
                "none" => vec![false; t],
                "oracle" => {
                    let b = run
                        .bursts
                        .as_ref()
                        .ok_or_else(|| Error::invalid(format!("oracle flags need a truth file for {:?}", run.labels)))?;
                    (0..t).map(|i| b.contains(&i)).collect()
                }
                other => {
                    let flags = ScrubFlags {
                        method: Some(other.to_string()),
                        ..args.scrub.clone()
                    };
                    let rule = resolve_rule(&flags, &ctx.config.scrub, ctx.seed, ctx.strict)?;
                    let preliminary = regress_matrix(y, &base)?;
                    let (d, projection) = compute_scrub(&preliminary, run.inputs.rps.as_ref(), &rule)?;
                    check_convergence(&rule, projection.as_ref(), ctx.strict)?;
                    d.flags
                }
            };
            let fit = |f: &[bool]| -> Result<DMatrix<f64>> {
                if f.iter().any(|&x| x) {
                    regress_matrix(y, &build_design(&spec, t, Some(f))?)
                } else {
                    regress_matrix(y, &base)
                }
            };
            let m = {
                let mut m = window_fc(&fit(&flags)?, &flags, parc, settings.window)?;
                m.labels = run.labels.clone();
                m
            };
            let w = settings.window.min(t);
            let n_window = flags[..w].iter().filter(|&&f| f).count();
            let mut random = Vec::new();
            if method != "none" {
                for q in 0..settings.permutations {
                    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
                    rng.set_stream(((k as u64) << 32) | q as u64);
                    let mut rf = random_flags(w, n_window, &mut rng)?;
                    rf.extend(flags[w..].iter().copied());
                    random.push(window_fc(&fit(&rf)?, &rf, parc, settings.window)?.upper_triangle());
                }
            }
            let censored = flags.iter().filter(|&&f| f).count() as f64 / t as f64;
            Ok((m, random, censored, 1.0 - n_window as f64 / w as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = MethodRuns {
        fc: Vec::new(),
        random: Vec::new(),
        censored_fraction: Vec::new(),
        retained: Vec::new(),
    };
    for (m, r, c, k) in per_run {
        out.fc.push(m);
        out.random.push(r);
        out.censored_fraction.push(c);
        out.retained.push(k);
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn cmd_evaluate(ctx: &Context, args: &EvaluateArgs) -> Result<()> {
    let (manifest, base) = Manifest::read(&args.manifest)?;
    let parc = read_parcellation(&base.join(&manifest.parcellation))?;
    let section = &ctx.config.evaluate;
    let methods = args
        .methods
        .clone()
        .or_else(|| section.methods.clone())
        .unwrap_or_else(|| vec!["none".to_string(), args.scrub.method.clone().unwrap_or_else(|| "ica".into())]);
    let permutations = args.permutations.or(section.permutations).unwrap_or(16);
    if permutations == 0 {
        return Err(Error::invalid("MAC needs at least one permutation"));
    }
    let min_retained = args.min_retained.or(section.min_retained).unwrap_or(0.5);
    let runs = manifest
        .runs
        .iter()
        .map(|r| load_manifest_run(r, &base, manifest.tr_seconds))
        .collect::<Result<Vec<_>>>()?;
    if runs.is_empty() {
        return Err(Error::invalid("manifest lists no runs"));
    }
    let t_min = runs.iter().map(|r| r.inputs.scan.n_volumes()).min().unwrap_or(0);
    let settings = EvalSettings {
        window: args.window_volumes.or(section.window_volumes).unwrap_or(t_min).min(t_min),
        permutations,
        seed: ctx.seed,
    };

    // subjects in first-seen order, runs ordered by (session, run)
    let mut subjects: Vec<String> = Vec::new();
    for r in &runs {
        if !subjects.contains(&r.labels.subject) {
            subjects.push(r.labels.subject.clone());
        }
    }
    let truth: BTreeMap<String, FcMatrix> = manifest
        .true_fc
        .iter()
        .map(|(s, p)| {
            Ok((
                s.clone(),
                FcMatrix {
                    z: read_matrix(base.join(p))?.values,
                    labels: RunLabels::new(s, "", ""),
                    n_volumes_used: 0,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for method in &methods {
        let res = evaluate_method(method, &runs, &parc, ctx, args, &settings)?;
        let mut by_subject: Vec<Vec<usize>> = subjects
            .iter()
            .map(|s| (0..runs.len()).filter(|&k| &runs[k].labels.subject == s).collect())
            .collect();
        for idx in &mut by_subject {
            idx.sort_by(|&a, &b| {
                (&runs[a].labels.session, &runs[a].labels.run).cmp(&(&runs[b].labels.session, &runs[b].labels.run))
            });
        }
        let included: Vec<usize> = (0..subjects.len())
            .filter(|&s| by_subject[s].iter().all(|&k| res.retained[k] >= min_retained))
            .collect();
        let excluded: Vec<&str> = (0..subjects.len())
            .filter(|s| !included.contains(s))
            .map(|s| subjects[s].as_str())
            .collect();
        let config = json!({
            "method": method,
            "window_volumes": settings.window,
            "min_retained": min_retained,
            "permutations": permutations,
            "seed": ctx.seed,
            "excluded_subjects": excluded,
        });
        let mut push = |metric: &str, value: Option<f64>, n: usize| {
            reports.push(json!({ "metric": metric, "method": method, "value": value, "n": n, "config": config }));
        };
        push("censored_fraction", Some(mean(&res.censored_fraction)), runs.len());

        let n_runs = included.iter().map(|&s| by_subject[s].len()).min().unwrap_or(0);
        if included.len() >= 2 && n_runs >= 2 {
            let table: Vec<Vec<FcMatrix>> = included
                .iter()
                .map(|&s| by_subject[s][..n_runs].iter().map(|&k| res.fc[k].clone()).collect())
                .collect();
            let iccs: Vec<f64> = icc_per_pair(&table)?.into_iter().flatten().collect();
            push("icc", Some(mean(&iccs)), iccs.len());
            let first: Vec<FcMatrix> = table.iter().map(|r| r[0].clone()).collect();
            let second: Vec<FcMatrix> = table.iter().map(|r| r[1].clone()).collect();
            push("fingerprint", Some(fingerprint_pooled(&first, &second, None)?), 2 * table.len());
        } else {
            push("icc", None, 0);
            push("fingerprint", None, 0);
        }

        if !truth.is_empty() {
            let mut estimates = Vec::new();
            let mut reference = Vec::new();
            for (k, run) in runs.iter().enumerate() {
                let s = subjects.iter().position(|x| x == &run.labels.subject).unwrap_or(0);
                if let (true, Some(t)) = (included.contains(&s), truth.get(&run.labels.subject)) {
                    estimates.push(vec![res.fc[k].upper_triangle()]);
                    reference.push(vec![t.upper_triangle()]);
                }
            }
            let value = if estimates.is_empty() { None } else { Some(rmse_validity(&estimates, &reference)?) };
            push("rmse", value, estimates.len());
        }

        if method != "none" && included.len() >= 1 {
            // MAC over runs matched by position within subject
            let n_runs = included.iter().map(|&s| by_subject[s].len()).min().unwrap_or(0);
            let scrubbed: Vec<Vec<Vec<f64>>> = (0..n_runs)
                .map(|r| included.iter().map(|&s| res.fc[by_subject[s][r]].upper_triangle()).collect())
                .collect();
            let random: Vec<Vec<Vec<Vec<f64>>>> = (0..n_runs)
                .map(|r| included.iter().map(|&s| res.random[by_subject[s][r]].clone()).collect())
                .collect();
            push("mac", Some(mac(&scrubbed, &random)?), included.len() * n_runs);
        }
    }
    write_json(ctx.path("metrics.json"), &reports)
}

fn cmd_render(ctx: &Context, args: &RenderArgs) -> Result<()> {
    if args.input.is_none() && args.decisions.is_empty() {
        return Err(Error::invalid("pass --input and/or --decision"));
    }
    if let Some(p) = &args.input {
        write_atomic(ctx.path("grayplot.pgm"), &grayplot(&read_matrix(p)?.values)?)?;
    }
    for (i, p) in args.decisions.iter().enumerate() {
        let d = ScrubDecision::from_json(&std::fs::read_to_string(p)?)?;
        let name = if args.decisions.len() == 1 {
            format!("{}_trace.svg", d.method)
        } else {
            format!("{}_{}_trace.svg", i + 1, d.method)
        };
        write_atomic(ctx.path(&name), decision_svg(&d)?.as_bytes())?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::new(cli)?;
    std::fs::create_dir_all(&ctx.out)?;
    match &cli.command {
        Command::Simulate(_) => cmd_simulate(&ctx),
        Command::Scrub(a) => cmd_scrub(&ctx, a),
        Command::Denoise(a) => cmd_denoise(&ctx, a),
        Command::Fc(a) => cmd_fc(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Render(a) => cmd_render(&ctx, a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
