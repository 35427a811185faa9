//! Command-line front end: wires seeds, configs, and output locations
//! to the samplers, the study harness, and the station pipeline.
//!
//! Conventions shared by every subcommand:
//!
//! * all files land inside `--out-dir` (created if absent), written
//!   atomically, and a `manifest.json` recording the command line, a
//!   sha256 of the fully resolved configuration, the master seed, the
//!   tool version, timestamps, and the emitted file list is written
//!   last;
//! * exit code 0 on success, 1 on a validation problem (bad flag, bad
//!   config, malformed or infeasible input), 2 on a runtime failure
//!   (non-convergence, unwritable output directory).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use tailcause::copula::CopulaSpec;
use tailcause::error::Error;
use tailcause::experiments::{run_study, StudyConfig};
use tailcause::gam::Smoothing;
use tailcause::icp::{format_subset, icp_scan, Environment, FormulaPolicy, SubsetStatus};
use tailcause::pipeline::fixture::{generate_fixture, FixtureKind};
use tailcause::pipeline::ingest::{ingest, StationTable, DEFAULT_MIN_HOURLY_VALUES, DEFAULT_WEEK_COVERAGE};
use tailcause::pipeline::{
    curve_csv, distance_effect_curve, pvalues_csv, qq_csv, run_application, tally_csv,
    write_atomic, ApplicationConfig, DEFAULT_DRAWS, DEFAULT_MIN_COMMON_WEEKS,
};
use tailcause::projection::logmax;
use tailcause::scm::Study;
use tailcause::seed::rng_from;

/// Stream tag separating the simulate subcommand's draws from every
/// internal consumer of the master seed.
const SIMULATE_STREAM: u64 = 11;

#[derive(Parser)]
#[command(
    name = "tailcause",
    version,
    about = "Covariate-driven extremal dependence: samplers, studies, and the station pipeline",
    propagate_version = true
)]
struct Cli {
    /// Master random seed (default 1). For `experiment` it overrides
    /// master_seed from the config file when given.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Test level for invariance scans (default 0.05). For `simulate
    /// --family logistic` this is the dependence parameter instead.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Output directory; every file this tool writes goes beneath it.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads. Accepted for forward compatibility; computation
    /// in this build is single-threaded.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw exact samples from a bivariate max-stable copula to CSV.
    Simulate(SimulateArgs),
    /// Run one simulation study from a TOML config file.
    Experiment(ExperimentArgs),
    /// Station-margin fitting and diagnostics.
    Margins {
        #[command(subcommand)]
        action: MarginsCmd,
    },
    /// Invariant-subset scans over environment-labelled data.
    Icp {
        #[command(subcommand)]
        action: IcpCmd,
    },
    /// The end-to-end station application.
    Pipeline {
        #[command(subcommand)]
        action: PipelineCmd,
    },
}

#[derive(Subcommand)]
enum MarginsCmd {
    /// Fit time-varying extreme-value margins for every retained
    /// station and report the transform diagnostics.
    Fit(MarginsFitArgs),
}

#[derive(Subcommand)]
enum IcpCmd {
    /// Scan all covariate subsets for invariance of the projection.
    Run(IcpRunArgs),
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Ingest, fit margins, draw pairings, scan subsets, and fit the
    /// pooled distance curve.
    Run(PipelineRunArgs),
    /// Write the synthetic station fixture (hourly observations and
    /// metadata CSVs) for exercising the pipeline.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Logistic,
    HuslerReiss,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyArg {
    S41,
    S42,
    S43,
}

impl StudyArg {
    fn to_study(self) -> Study {
        match self {
            StudyArg::S41 => Study::S41,
            StudyArg::S42 => Study::S42,
            StudyArg::S43 => Study::S43,
        }
    }
    fn label(self) -> &'static str {
        match self {
            StudyArg::S41 => "s41",
            StudyArg::S42 => "s42",
            StudyArg::S43 => "s43",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FixtureKindArg {
    /// Dependence strength driven by inter-station distance.
    Distance,
    /// No covariate effect; all pairs asymptotically independent.
    NoEffect,
}

impl FixtureKindArg {
    fn to_kind(self) -> FixtureKind {
        match self {
            FixtureKindArg::Distance => FixtureKind::DistanceDriven,
            FixtureKindArg::NoEffect => FixtureKind::NoEffect,
        }
    }
    fn label(self) -> &'static str {
        match self {
            FixtureKindArg::Distance => "distance",
            FixtureKindArg::NoEffect => "no-effect",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    /// Few-valued covariates enter linearly, the rest as smooths.
    Auto,
    /// Every covariate enters linearly.
    AllLinear,
}

impl PolicyArg {
    fn to_policy(self) -> FormulaPolicy {
        match self {
            PolicyArg::Auto => FormulaPolicy::Auto,
            PolicyArg::AllLinear => FormulaPolicy::AllLinear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SmoothingArg {
    /// Data-driven smoothing selection.
    Gcv,
    /// One fixed lambda (from --lambda-margin) for every smooth term.
    Fixed,
}

#[derive(Args)]
struct SimulateArgs {
    /// Dependence family to sample from.
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Husler-Reiss dependence parameter (required for that family).
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of pairs to draw.
    #[arg(long, default_value_t = 1000)]
    n: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Which study the config drives; must match the config's `study`.
    #[arg(long, value_enum)]
    study: StudyArg,
    /// TOML config file mirroring the study settings.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct MarginsFitArgs {
    /// Hourly observations CSV (timestamp, station_id, value).
    #[arg(long, requires = "metadata")]
    observations: Option<PathBuf>,
    /// Station metadata CSV (station_id, site_type, latitude, longitude).
    #[arg(long, requires = "observations")]
    metadata: Option<PathBuf>,
    /// Generate the synthetic fixture instead of reading files.
    #[arg(long, value_enum, conflicts_with_all = ["observations", "metadata"])]
    fixture: Option<FixtureKindArg>,
    /// Weeks of fixture data when --fixture is used.
    #[arg(long, default_value_t = 420)]
    weeks: usize,
    /// Minimum hourly values for a week to count as complete.
    #[arg(long, default_value_t = DEFAULT_MIN_HOURLY_VALUES)]
    min_hourly: usize,
    /// Minimum fraction of complete weeks for a station to survive.
    #[arg(long, default_value_t = DEFAULT_WEEK_COVERAGE)]
    coverage: f64,
    /// Margin smoothing policy.
    #[arg(long, value_enum, default_value_t = SmoothingArg::Gcv)]
    smoothing: SmoothingArg,
    /// Smoothing strength used when --smoothing fixed.
    #[arg(long, default_value_t = 1.0)]
    lambda_margin: f64,
}

#[derive(Args)]
struct IcpRunArgs {
    /// CSV with an `env` column, a response (`y`, or `z1` and `z2` on
    /// the unit Frechet scale), and one column per covariate.
    #[arg(long)]
    data: PathBuf,
    /// How covariate subsets map to additive formulas.
    #[arg(long, value_enum, default_value_t = PolicyArg::Auto)]
    policy: PolicyArg,
    /// Test every subset instead of pruning supersets of accepted sets.
    #[arg(long)]
    no_prune: bool,
}

#[derive(Args)]
struct PipelineRunArgs {
    /// Optional TOML config; command-line flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hourly observations CSV.
    #[arg(long)]
    observations: Option<PathBuf>,
    /// Station metadata CSV.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Generate the synthetic fixture instead of reading files.
    #[arg(long, value_enum)]
    fixture: Option<FixtureKindArg>,
    /// Weeks of fixture data when the fixture is used.
    #[arg(long)]
    weeks: Option<usize>,
    /// Number of pairing draws.
    #[arg(long)]
    draws: Option<usize>,
    /// Minimum common weeks for a pair to be eligible.
    #[arg(long)]
    min_common_weeks: Option<usize>,
    /// Minimum hourly values for a week to count as complete.
    #[arg(long)]
    min_hourly: Option<usize>,
    /// Minimum fraction of complete weeks for a station to survive.
    #[arg(long)]
    coverage: Option<f64>,
    /// Grid size of the distance-effect curve; 0 skips the curve.
    #[arg(long)]
    curve_grid: Option<usize>,
    /// Margin smoothing policy.
    #[arg(long, value_enum)]
    smoothing: Option<SmoothingArg>,
    /// Smoothing strength used when the policy is fixed.
    #[arg(long)]
    lambda_margin: Option<f64>,
}

#[derive(Args)]
struct FixtureArgs {
    /// Which fixture to generate.
    #[arg(long, value_enum, default_value_t = FixtureKindArg::Distance)]
    kind: FixtureKindArg,
    /// Weeks of hourly data per station.
    #[arg(long, default_value_t = 420)]
    weeks: usize,
}

/// CLI failure carrying its exit code: validation problems exit 1,
/// runtime failures exit 2.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

fn validation(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

/// Library errors raised while computing: anything pointing at bad
/// input stays a validation failure, true numerical trouble and output
/// io are runtime failures.
fn lib_err(e: Error) -> Failure {
    match e {
        Error::NonConvergence(_) | Error::RankDeficient(_) | Error::Io { .. } => {
            runtime(e.to_string())
        }
        _ => validation(e.to_string()),
    }
}

/// Read an input file, naming it in the failure message.
fn read_input(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))
}

fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the fully resolved configuration for the manifest.
fn config_hash<T: Serialize>(resolved: &T) -> String {
    let canonical =
        serde_json::to_string(resolved).expect("resolved config serialization cannot fail");
    sha256_hex(&canonical)
}

/// Keep emitted file names safe to join onto the output directory.
fn sanitize_component(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Serialize, serde::Deserialize)]
struct RunManifest {
    command: String,
    config_sha256: String,
    master_seed: u64,
    version: String,
    start: String,
    end: String,
    outputs: Vec<String>,
}

/// Collects output files under the output directory and finishes by
/// writing the manifest; nothing is ever written outside that
/// directory.
struct Emitter {
    out_dir: PathBuf,
    outputs: Vec<String>,
    command: String,
    config_sha256: String,
    master_seed: u64,
    start: String,
}

impl Emitter {
    fn new(
        out_dir: &Path,
        command: String,
        config_sha256: String,
        master_seed: u64,
    ) -> Result<Self, Failure> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| runtime(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Emitter {
            out_dir: out_dir.to_path_buf(),
            outputs: Vec::new(),
            command,
            config_sha256,
            master_seed,
            start: now_rfc3339(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), Failure> {
        assert!(
            !name.contains('/') && !name.contains('\\'),
            "output names must be bare file names"
        );
        assert!(!content.is_empty(), "output files must be non-empty");
        let path = self.out_dir.join(name);
        write_atomic(&path, content).map_err(lib_err)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Verify every referenced file is present and non-empty, then
    /// write the manifest.
    fn finish(self) -> Result<(), Failure> {
        for name in &self.outputs {
            let path = self.out_dir.join(name);
            let meta = std::fs::metadata(&path)
                .map_err(|e| runtime(format!("missing output {}: {e}", path.display())))?;
            if meta.len() == 0 {
                return Err(runtime(format!("output {} is empty", path.display())));
            }
        }
        let manifest = RunManifest {
            command: self.command,
            config_sha256: self.config_sha256,
            master_seed: self.master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            start: self.start,
            end: now_rfc3339(),
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)
            .expect("manifest serialization cannot fail");
        write_atomic(&self.out_dir.join("manifest.json"), &text).map_err(lib_err)?;
        println!(
            "wrote {} files and manifest.json to {}",
            manifest.outputs.len(),
            self.out_dir.display()
        );
        Ok(())
    }
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            std::process::exit(if benign { 0 } else { 1 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init()
        .ok();
    match run(cli) {
        Ok(()) => {}
        Err(f) => {
            eprintln!("error: {}", f.message());
            std::process::exit(f.code());
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.threads == 0 {
        return Err(validation("--threads must be at least 1"));
    }
    if cli.threads > 1 {
        log::info!("--threads {} accepted; this build computes single-threaded", cli.threads);
    }
    let seed = cli.seed.unwrap_or(1);
    let command = std::env::args().collect::<Vec<_>>().join(" ");
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&cli.out_dir, command, seed, cli.alpha, args),
        Command::Experiment(args) => {
            cmd_experiment(&cli.out_dir, command, cli.seed, cli.alpha, args)
        }
        Command::Margins { action: MarginsCmd::Fit(args) } => {
            cmd_margins_fit(&cli.out_dir, command, seed, args)
        }
        Command::Icp { action: IcpCmd::Run(args) } => {
            cmd_icp_run(&cli.out_dir, command, seed, cli.alpha, args)
        }
        Command::Pipeline { action: PipelineCmd::Run(args) } => {
            cmd_pipeline_run(&cli.out_dir, command, cli.seed, cli.alpha, args)
        }
        Command::Pipeline { action: PipelineCmd::Fixture(args) } => {
            cmd_pipeline_fixture(&cli.out_dir, command, seed, args)
        }
    }
}

fn check_level(alpha: f64) -> Result<f64, Failure> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(validation(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Serialize)]
struct SimulateResolved {
    family: String,
    alpha: Option<f64>,
    lambda: Option<f64>,
    n: usize,
    seed: u64,
}

fn cmd_simulate(
    out_dir: &Path,
    command: String,
    seed: u64,
    alpha: Option<f64>,
    args: SimulateArgs,
) -> Result<(), Failure> {
    if args.n == 0 || args.n > 10_000_000 {
        return Err(validation(format!(
            "--n must lie in [1, 10000000], got {}",
            args.n
        )));
    }
    let (copula, family_label) = match args.family {
        FamilyArg::Logistic => {
            let a = alpha.ok_or_else(|| {
                validation("the logistic family needs --alpha (dependence strength in (0, 1])")
            })?;
            if args.lambda.is_some() {
                return Err(validation("--lambda only applies to --family husler-reiss"));
            }
            (CopulaSpec::logistic(a).map_err(lib_err)?, "logistic")
        }
        FamilyArg::HuslerReiss => {
            let l = args.lambda.ok_or_else(|| {
                validation("the husler-reiss family needs --lambda (positive dependence parameter)")
            })?;
            if alpha.is_some() {
                return Err(validation(
                    "--alpha only applies to --family logistic; use --lambda here",
                ));
            }
            (CopulaSpec::husler_reiss(l).map_err(lib_err)?, "husler_reiss")
        }
    };
    let resolved = SimulateResolved {
        family: family_label.to_string(),
        alpha,
        lambda: args.lambda,
        n: args.n,
        seed,
    };
    let mut emitter = Emitter::new(out_dir, command, config_hash(&resolved), seed)?;

    let mut rng = rng_from(seed, &[SIMULATE_STREAM]);
    let pairs = copula.sample_n(args.n, &mut rng);
    let mut csv = String::with_capacity(args.n * 16 + 8);
    csv.push_str("z1,z2\n");
    for p in &pairs {
        csv.push_str(&format!("{},{}\n", p.z1, p.z2));
    }
    emitter.write(&format!("draws_{family_label}.csv"), &csv)?;
    println!(
        "{} pairs from the {} family (extremal coefficient {:.4})",
        args.n,
        family_label,
        copula.extremal_coefficient()
    );
    emitter.finish()
}

fn cmd_experiment(
    out_dir: &Path,
    command: String,
    seed: Option<u64>,
    alpha: Option<f64>,
    args: ExperimentArgs,
) -> Result<(), Failure> {
    let text = read_input(&args.config)?;
    let mut cfg = StudyConfig::from_toml(&text).map_err(|e| {
        validation(format!("config {}: {e}", args.config.display()))
    })?;
    if cfg.study != args.study.to_study() {
        return Err(validation(format!(
            "config {} sets study = {}, but --study says {}",
            args.config.display(),
            match cfg.study {
                Study::S41 => "s41",
                Study::S42 => "s42",
                Study::S43 => "s43",
            },
            args.study.label()
        )));
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(a) = alpha {
        cfg.alpha = check_level(a)?;
    }
    cfg.validate().map_err(lib_err)?;

    let mut emitter = Emitter::new(out_dir, command, config_hash(&cfg), cfg.master_seed)?;
    let started = std::time::Instant::now();
    let outcome = run_study(&cfg).map_err(lib_err)?;
    let elapsed = started.elapsed().as_secs_f64();

    emitter.write(
        &format!("study_{}.csv", args.study.label()),
        &outcome.to_csv(),
    )?;
    emitter.write(
        &format!("study_{}.json", args.study.label()),
        &outcome.to_json(),
    )?;
    for cell in &outcome.cells {
        let labels: Vec<String> = cell
            .labels
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        println!(
            "cell {}: fraction_correct {:.3} ({} reps, {} errors)",
            labels.join(" "),
            cell.fraction_correct(),
            cell.reps,
            cell.errors
        );
    }
    println!("study {} finished in {elapsed:.1}s", args.study.label());
    emitter.finish()
}

#[derive(Serialize)]
struct MarginsResolved {
    observations: Option<String>,
    metadata: Option<String>,
    fixture: Option<String>,
    weeks: usize,
    min_hourly: usize,
    coverage: f64,
    smoothing: String,
    lambda_margin: f64,
    seed: u64,
}

fn resolve_smoothing(arg: SmoothingArg, lambda: f64) -> Result<Smoothing, Failure> {
    match arg {
        SmoothingArg::Gcv => Ok(Smoothing::Gcv),
        SmoothingArg::Fixed => {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(validation(format!(
                    "--lambda-margin must be a nonnegative number, got {lambda}"
                )));
            }
            // One value per possible smooth term; fits trim the list to
            // the terms actually present.
            Ok(Smoothing::Fixed(vec![lambda; 8]))
        }
    }
}

fn load_station_table(
    observations: &Option<PathBuf>,
    metadata: &Option<PathBuf>,
    fixture: Option<FixtureKindArg>,
    weeks: usize,
    seed: u64,
    min_hourly: usize,
    coverage: f64,
) -> Result<StationTable, Failure> {
    let (obs, meta) = match (observations, metadata, fixture) {
        (Some(o), Some(m), None) => (read_input(o)?, read_input(m)?),
        (None, None, Some(kind)) => {
            if weeks == 0 {
                return Err(validation("--weeks must be positive"));
            }
            let fx = generate_fixture(kind.to_kind(), weeks, seed).map_err(lib_err)?;
            (fx.observations_csv, fx.metadata_csv)
        }
        _ => {
            return Err(validation(
                "provide either --observations with --metadata, or --fixture",
            ))
        }
    };
    ingest(&obs, &meta, min_hourly, coverage).map_err(lib_err)
}

fn cmd_margins_fit(
    out_dir: &Path,
    command: String,
    seed: u64,
    args: MarginsFitArgs,
) -> Result<(), Failure> {
    let resolved = MarginsResolved {
        observations: args.observations.as_ref().map(|p| p.display().to_string()),
        metadata: args.metadata.as_ref().map(|p| p.display().to_string()),
        fixture: args.fixture.map(|f| f.label().to_string()),
        weeks: args.weeks,
        min_hourly: args.min_hourly,
        coverage: args.coverage,
        smoothing: format!("{:?}", args.smoothing).to_lowercase(),
        lambda_margin: args.lambda_margin,
        seed,
    };
    let smoothing = resolve_smoothing(args.smoothing, args.lambda_margin)?;
    let table = load_station_table(
        &args.observations,
        &args.metadata,
        args.fixture,
        args.weeks,
        seed,
        args.min_hourly,
        args.coverage,
    )?;
    let mut emitter = Emitter::new(out_dir, command, config_hash(&resolved), seed)?;

    let mut summary = String::from("station_id,weeks,edf,log_likelihood,ic,pit_ks_p,status\n");
    let mut kept = 0usize;
    for (id, weekly) in &table.weekly {
        match tailcause::pipeline::fit_and_transform(weekly, &smoothing) {
            Ok(outcome) => {
                let status = if outcome.pit_ks_p < tailcause::pipeline::PIT_KS_LEVEL {
                    "excluded: transform fails uniformity"
                } else {
                    kept += 1;
                    "kept"
                };
                summary.push_str(&format!(
                    "{id},{},{:.3},{:.3},{},{:.5},{status}\n",
                    weekly.len(),
                    outcome.model.fit.edf,
                    outcome.model.fit.log_likelihood,
                    outcome
                        .model
                        .fit
                        .gcv
                        .map(|v| format!("{v:.3}"))
                        .unwrap_or_default(),
                    outcome.pit_ks_p,
                ));
                emitter.write(
                    &format!("qq_{}.csv", sanitize_component(id)),
                    &qq_csv(&outcome),
                )?;
            }
            Err(e) => {
                let reason = e.to_string().replace([',', '\n'], ";");
                summary.push_str(&format!(
                    "{id},{},,,,,excluded: {reason}\n",
                    weekly.len()
                ));
            }
        }
    }
    if kept == 0 {
        return Err(runtime("no station margin could be fitted and kept"));
    }
    emitter.write("margins_summary.csv", &summary)?;
    if !table.exclusions.is_empty() {
        let mut excl = String::from("station_id,reason\n");
        for e in &table.exclusions {
            excl.push_str(&format!(
                "{},{}\n",
                e.station_id,
                e.reason.replace([',', '\n'], ";")
            ));
        }
        emitter.write("exclusions.csv", &excl)?;
    }
    println!(
        "fitted margins for {} stations ({} kept, {} ingest exclusions)",
        table.weekly.len(),
        kept,
        table.exclusions.len()
    );
    emitter.finish()
}

#[derive(Serialize)]
struct IcpResolved {
    data: String,
    alpha: f64,
    policy: String,
    prune: bool,
    seed: u64,
}

/// Parsed environment-labelled table: environments in first-appearance
/// order, covariate names from the header.
struct IcpData {
    envs: Vec<Environment>,
    covariates: Vec<String>,
}

fn parse_icp_csv(text: &str, origin: &str) -> Result<IcpData, Failure> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| validation(format!("{origin}: empty file")))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let env_col = find("env")
        .ok_or_else(|| validation(format!("{origin}: header needs an `env` column")))?;
    let y_col = find("y");
    let z_cols = match (find("z1"), find("z2")) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => {
            return Err(validation(format!(
                "{origin}: provide both `z1` and `z2`, or a single `y` column"
            )))
        }
    };
    if y_col.is_some() == z_cols.is_some() {
        return Err(validation(format!(
            "{origin}: provide exactly one response, either `y` or the pair `z1`,`z2`"
        )));
    }
    let mut reserved = vec![env_col];
    if let Some(c) = y_col {
        reserved.push(c);
    }
    if let Some((a, b)) = z_cols {
        reserved.extend([a, b]);
    }
    let x_cols: Vec<usize> = (0..cols.len()).filter(|c| !reserved.contains(c)).collect();
    let covariates: Vec<String> = x_cols.iter().map(|&c| cols[c].to_string()).collect();

    let mut order: Vec<String> = Vec::new();
    let mut by_env: BTreeMap<String, (Vec<Vec<f64>>, Vec<f64>)> = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(validation(format!(
                "{origin} line {}: expected {} fields, got {}",
                idx + 1,
                cols.len(),
                fields.len()
            )));
        }
        let number = |c: usize| -> Result<f64, Failure> {
            fields[c].parse::<f64>().map_err(|_| {
                validation(format!(
                    "{origin} line {}: `{}` is not a number in column {}",
                    idx + 1,
                    fields[c],
                    cols[c]
                ))
            })
        };
        let y = match (y_col, z_cols) {
            (Some(c), _) => number(c)?,
            (None, Some((a, b))) => logmax(number(a)?, number(b)?).map_err(|e| {
                validation(format!("{origin} line {}: {e}", idx + 1))
            })?,
            (None, None) => unreachable!("response column validated above"),
        };
        let row: Vec<f64> = x_cols
            .iter()
            .map(|&c| number(c))
            .collect::<Result<_, _>>()?;
        let env_id = fields[env_col].to_string();
        if !by_env.contains_key(&env_id) {
            order.push(env_id.clone());
        }
        let slot = by_env.entry(env_id).or_default();
        slot.0.push(row);
        slot.1.push(y);
    }
    let envs: Vec<Environment> = order
        .into_iter()
        .map(|id| {
            let (x, y) = by_env.remove(&id).expect("order tracks keys");
            Environment { id, x, y }
        })
        .collect();
    Ok(IcpData { envs, covariates })
}

#[derive(Serialize)]
struct SubsetRow {
    subset: String,
    indices: Vec<usize>,
    p_value: Option<f64>,
    p_clamped: bool,
    status: &'static str,
    error: Option<String>,
}

#[derive(Serialize)]
struct IcpReport {
    alpha: f64,
    covariates: Vec<String>,
    /// Selected covariates as 1-based indices.
    s_hat: Vec<String>,
    s_hat_label: String,
    all_rejected: bool,
    warnings: Vec<String>,
    subsets: Vec<SubsetRow>,
}

fn cmd_icp_run(
    out_dir: &Path,
    command: String,
    seed: u64,
    alpha: Option<f64>,
    args: IcpRunArgs,
) -> Result<(), Failure> {
    let alpha = check_level(alpha.unwrap_or(0.05))?;
    let resolved = IcpResolved {
        data: args.data.display().to_string(),
        alpha,
        policy: match args.policy {
            PolicyArg::Auto => "auto".to_string(),
            PolicyArg::AllLinear => "all_linear".to_string(),
        },
        prune: !args.no_prune,
        seed,
    };
    let text = read_input(&args.data)?;
    let data = parse_icp_csv(&text, &args.data.display().to_string())?;
    let mut emitter = Emitter::new(out_dir, command, config_hash(&resolved), seed)?;

    let result = icp_scan(&data.envs, alpha, !args.no_prune, args.policy.to_policy())
        .map_err(lib_err)?;
    let subsets: Vec<SubsetRow> = result
        .per_subset
        .iter()
        .map(|s| SubsetRow {
            subset: format_subset(&s.subset),
            indices: s.subset.clone(),
            p_value: s.p_value,
            p_clamped: s.p_clamped,
            status: match s.status {
                SubsetStatus::Accepted => "accepted",
                SubsetStatus::Rejected => "rejected",
                SubsetStatus::Pruned => "pruned",
                SubsetStatus::FitFailed => "fit_failed",
            },
            error: s.error.clone(),
        })
        .collect();
    let report = IcpReport {
        alpha: result.alpha,
        covariates: data.covariates,
        s_hat: result.s_hat.iter().map(|c| (c + 1).to_string()).collect(),
        s_hat_label: format_subset(&result.s_hat),
        all_rejected: result.all_rejected,
        warnings: result.warnings.clone(),
        subsets,
    };
    emitter.write(
        "icp_result.json",
        &serde_json::to_string_pretty(&report).expect("report serialization cannot fail"),
    )?;
    println!("s_hat = {}", report.s_hat_label);
    if report.all_rejected {
        println!("every subset rejected; the invariance assumption looks violated");
    }
    emitter.finish()
}

/// File-config for `pipeline run`; every key optional, command-line
/// flags win over it.
#[derive(Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PipelineFileConfig {
    observations: Option<String>,
    metadata: Option<String>,
    fixture: Option<String>,
    weeks: Option<usize>,
    draws: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    min_common_weeks: Option<usize>,
    min_hourly: Option<usize>,
    coverage: Option<f64>,
    curve_grid: Option<usize>,
    smoothing: Option<String>,
    lambda_margin: Option<f64>,
}

#[derive(Serialize)]
struct PipelineResolved {
    observations: Option<String>,
    metadata: Option<String>,
    fixture: Option<String>,
    weeks: usize,
    draws: usize,
    alpha: f64,
    seed: u64,
    min_common_weeks: usize,
    min_hourly: usize,
    coverage: f64,
    curve_grid: usize,
    smoothing: String,
    lambda_margin: f64,
}

fn parse_fixture_label(label: &str) -> Result<FixtureKindArg, Failure> {
    match label {
        "distance" => Ok(FixtureKindArg::Distance),
        "no-effect" | "no_effect" => Ok(FixtureKindArg::NoEffect),
        other => Err(validation(format!(
            "fixture must be `distance` or `no-effect`, got `{other}`"
        ))),
    }
}

fn cmd_pipeline_run(
    out_dir: &Path,
    command: String,
    seed_flag: Option<u64>,
    alpha_flag: Option<f64>,
    args: PipelineRunArgs,
) -> Result<(), Failure> {
    let file_cfg: PipelineFileConfig = match &args.config {
        Some(path) => {
            let text = read_input(path)?;
            toml::from_str(&text)
                .map_err(|e| validation(format!("config {}: {e}", path.display())))?
        }
        None => PipelineFileConfig::default(),
    };

    let observations = args
        .observations
        .as_ref()
        .map(|p| p.display().to_string())
        .or(file_cfg.observations);
    let metadata = args
        .metadata
        .as_ref()
        .map(|p| p.display().to_string())
        .or(file_cfg.metadata);
    let fixture = match (args.fixture, &file_cfg.fixture) {
        (Some(k), _) => Some(k),
        (None, Some(label)) => Some(parse_fixture_label(label)?),
        (None, None) => None,
    };
    let weeks = args.weeks.or(file_cfg.weeks).unwrap_or(420);
    let draws = args.draws.or(file_cfg.draws).unwrap_or(DEFAULT_DRAWS);
    let alpha = check_level(alpha_flag.or(file_cfg.alpha).unwrap_or(0.05))?;
    let seed = seed_flag.or(file_cfg.seed).unwrap_or(1);
    let min_common_weeks = args
        .min_common_weeks
        .or(file_cfg.min_common_weeks)
        .unwrap_or(DEFAULT_MIN_COMMON_WEEKS);
    let min_hourly = args
        .min_hourly
        .or(file_cfg.min_hourly)
        .unwrap_or(DEFAULT_MIN_HOURLY_VALUES);
    let coverage = args.coverage.or(file_cfg.coverage).unwrap_or(DEFAULT_WEEK_COVERAGE);
    let curve_grid = args.curve_grid.or(file_cfg.curve_grid).unwrap_or(40);
    let smoothing_arg = match args.smoothing {
        Some(s) => s,
        None => match file_cfg.smoothing.as_deref() {
            None | Some("gcv") => SmoothingArg::Gcv,
            Some("fixed") => SmoothingArg::Fixed,
            Some(other) => {
                return Err(validation(format!(
                    "smoothing must be `gcv` or `fixed`, got `{other}`"
                )))
            }
        },
    };
    let lambda_margin = args.lambda_margin.or(file_cfg.lambda_margin).unwrap_or(1.0);

    if observations.is_some() != metadata.is_some() {
        return Err(validation(
            "observations and metadata must be provided together",
        ));
    }
    if observations.is_some() && fixture.is_some() {
        return Err(validation(
            "choose either observation files or the fixture, not both",
        ));
    }

    let resolved = PipelineResolved {
        observations: observations.clone(),
        metadata: metadata.clone(),
        fixture: fixture.map(|f| f.label().to_string()),
        weeks,
        draws,
        alpha,
        seed,
        min_common_weeks,
        min_hourly,
        coverage,
        curve_grid,
        smoothing: match smoothing_arg {
            SmoothingArg::Gcv => "gcv".to_string(),
            SmoothingArg::Fixed => "fixed".to_string(),
        },
        lambda_margin,
    };

    let smoothing = resolve_smoothing(smoothing_arg, lambda_margin)?;
    let table = load_station_table(
        &observations.map(PathBuf::from),
        &metadata.map(PathBuf::from),
        fixture,
        weeks,
        seed,
        min_hourly,
        coverage,
    )?;
    let mut emitter = Emitter::new(out_dir, command, config_hash(&resolved), seed)?;

    let app_cfg = ApplicationConfig {
        draws,
        alpha,
        seed,
        min_common_weeks,
        margin_smoothing: smoothing,
    };
    let started = std::time::Instant::now();
    let run = run_application(&table, &app_cfg).map_err(lib_err)?;

    for (id, outcome) in &run.margins {
        emitter.write(&format!("qq_{}.csv", sanitize_component(id)), &qq_csv(outcome))?;
    }
    emitter.write("pvalues_boxplot.csv", &pvalues_csv(&run))?;
    emitter.write("shat_tally.csv", &tally_csv(&run))?;

    let mut draws_csv = String::from("draw,s_hat,pairs,error\n");
    for d in &run.draws {
        let s_hat = d
            .s_hat
            .as_ref()
            .map(|s| format_subset(s))
            .unwrap_or_default();
        let pairs: Vec<String> = d
            .pairs
            .iter()
            .map(|(a, b, km)| format!("{a}-{b}@{km:.1}km"))
            .collect();
        let error = d
            .error
            .as_deref()
            .unwrap_or("")
            .replace([',', '\n'], ";");
        draws_csv.push_str(&format!(
            "{},{s_hat},{},{error}\n",
            d.draw,
            pairs.join(";")
        ));
    }
    emitter.write("draws.csv", &draws_csv)?;

    let exclusions: Vec<_> = table
        .exclusions
        .iter()
        .chain(run.margin_exclusions.iter())
        .collect();
    if !exclusions.is_empty() {
        let mut excl = String::from("station_id,reason\n");
        for e in exclusions {
            excl.push_str(&format!(
                "{},{}\n",
                e.station_id,
                e.reason.replace([',', '\n'], ";")
            ));
        }
        emitter.write("exclusions.csv", &excl)?;
    }

    if curve_grid > 0 {
        match distance_effect_curve(&table, &run.margins, min_common_weeks, curve_grid) {
            Ok(points) => emitter.write("distance_effect.csv", &curve_csv(&points))?,
            Err(Error::InsufficientData(msg)) => {
                log::warn!("distance curve skipped: {msg}");
            }
            Err(e) => return Err(lib_err(e)),
        }
    }

    let failed = run.draws.iter().filter(|d| d.error.is_some()).count();
    let mut tally: Vec<(&String, &usize)> = run.tally.iter().collect();
    tally.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let head: Vec<String> = tally
        .iter()
        .take(4)
        .map(|(label, count)| format!("{label}:{count}"))
        .collect();
    println!(
        "{} stations retained, {} excluded; {} draws ({} failed) in {:.1}s; s_hat tally {}",
        run.margins.len(),
        table.exclusions.len() + run.margin_exclusions.len(),
        run.draws.len(),
        failed,
        started.elapsed().as_secs_f64(),
        head.join(" ")
    );
    emitter.finish()
}

#[derive(Serialize)]
struct FixtureResolved {
    kind: String,
    weeks: usize,
    seed: u64,
}

fn cmd_pipeline_fixture(
    out_dir: &Path,
    command: String,
    seed: u64,
    args: FixtureArgs,
) -> Result<(), Failure> {
    if args.weeks == 0 {
        return Err(validation("--weeks must be positive"));
    }
    let resolved = FixtureResolved {
        kind: args.kind.label().to_string(),
        weeks: args.weeks,
        seed,
    };
    let mut emitter = Emitter::new(out_dir, command, config_hash(&resolved), seed)?;
    let fx = generate_fixture(args.kind.to_kind(), args.weeks, seed).map_err(lib_err)?;
    emitter.write("observations.csv", &fx.observations_csv)?;
    emitter.write("metadata.csv", &fx.metadata_csv)?;
    let mut km = String::from("station_id,km\n");
    for (id, d) in &fx.station_km {
        km.push_str(&format!("{id},{d}\n"));
    }
    emitter.write("fixture_stations.csv", &km)?;
    println!(
        "fixture `{}`: {} weeks of hourly data for {} stations",
        args.kind.label(),
        args.weeks,
        fx.station_km.len()
    );
    emitter.finish()
}
