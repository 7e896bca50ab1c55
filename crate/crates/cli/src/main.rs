//! `seqtrials`: simulate, analyze and check causal survival pipelines.

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seqtrials::estimators::TreatmentForm;
use seqtrials::simgen::{default_horizons, Method, ScenarioParams};
use seqtrials::{Family, SurvivalTransform};

use config::{check_horizons, AnalyzeConfig, OracleConfig, RunConfig, SimulateConfig, TruthConfig};
use error::CliError;

const OUT_ENV: &str = "SEQTRIALS_OUT_DIR";

#[derive(Parser)]
#[command(name = "seqtrials", version = commands::VERSION, about = "Marginal structural models and sequential trials for survival outcomes")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated-sampling study on a simulated scenario.
    Simulate(SimulateArgs),
    /// Fit the pipelines to a cohort on disk.
    Analyze(AnalyzeArgs),
    /// True survival curves of a scenario by large-sample simulation.
    Truth(TruthArgs),
    /// Check the exact two-period estimators against each other.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    MsmIptw,
    MsmIptwL0,
    Sequential,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::MsmIptw => Method::MsmIptw,
            MethodArg::MsmIptwL0 => Method::MsmIptwL0,
            MethodArg::Sequential => Method::Sequential,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Aalen,
    Cox,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Aalen => Family::Aalen,
            FamilyArg::Cox => Family::Cox,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    Exponential,
    ProductLimit,
}

impl From<TransformArg> for SurvivalTransform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Exponential => SurvivalTransform::Exponential,
            TransformArg::ProductLimit => SurvivalTransform::ProductLimit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Current,
    Duration,
    PerVisit,
}

impl From<FormArg> for TreatmentForm {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Current => TreatmentForm::Current,
            FormArg::Duration => TreatmentForm::Duration,
            FormArg::PerVisit => TreatmentForm::PerVisit,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    /// Built-in scenario.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), conflicts_with = "scenario_file")]
    scenario: Option<u8>,

    /// JSON file with scenario parameters.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<(Option<u8>, ScenarioParams), CliError> {
        match (&self.scenario_file, self.scenario) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
                Ok((None, ScenarioParams::from_json(&text)?))
            }
            (None, id) => {
                let id = id.unwrap_or(1);
                Ok((Some(id), ScenarioParams::scenario(id)?))
            }
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Subjects per simulated cohort.
    #[arg(long, default_value_t = 1000)]
    n: usize,

    /// Number of simulated cohorts.
    #[arg(long, default_value_t = 1000)]
    reps: usize,

    /// Seed; repetition r uses seed + r.
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,

    #[arg(long, value_enum, value_delimiter = ',', default_values = ["msm-iptw", "msm-iptw-l0", "sequential"])]
    methods: Vec<MethodArg>,

    #[arg(long, value_enum, default_value = "aalen")]
    family: FamilyArg,

    #[arg(long, value_enum, default_value = "exponential")]
    transform: TransformArg,

    /// Truncate weights at this pooled percentile.
    #[arg(long)]
    truncate: Option<f64>,

    /// Subjects per arm for the true curves.
    #[arg(long, default_value_t = 1_000_000)]
    truth_n: usize,

    /// Seed for the true curves (default: --seed).
    #[arg(long)]
    truth_seed: Option<u64>,

    #[arg(long, env = OUT_ENV, default_value = ".")]
    out: PathBuf,

    /// Repeat the run stored in a summary.json.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Visits file: id,k,A,<covariates...>
    #[arg(long, required_unless_present = "config")]
    visits: Option<PathBuf>,

    /// Subjects file: id,t_end,status
    #[arg(long, required_unless_present = "config")]
    subjects: Option<PathBuf>,

    /// Administrative end of follow-up.
    #[arg(long, default_value_t = 5.0)]
    tau_max: f64,

    #[arg(long, value_enum, value_delimiter = ',', default_values = ["msm-iptw-l0", "sequential"])]
    methods: Vec<MethodArg>,

    #[arg(long, value_enum, default_value = "aalen")]
    family: FamilyArg,

    /// Treatment-history form in the outcome model (default depends on the method).
    #[arg(long, value_enum)]
    form: Option<FormArg>,

    #[arg(long, value_enum, default_value = "exponential")]
    transform: TransformArg,

    /// Truncate weights at this pooled percentile.
    #[arg(long)]
    truncate: Option<f64>,

    /// Comma-separated horizons (default: 1, 2, ... up to tau-max).
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,

    /// Bootstrap replicates for percentile bands.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,

    /// Seed for the bootstrap.
    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, env = OUT_ENV, default_value = ".")]
    out: PathBuf,

    /// Repeat the run stored in a summary.json.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TruthArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Subjects per arm.
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,

    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,

    /// Comma-separated horizons (default: 1, 2, ... up to tau_max).
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,

    #[arg(long, env = OUT_ENV, default_value = ".")]
    out: PathBuf,

    /// Repeat the run stored in a summary.json.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Number of random lattices.
    #[arg(long, default_value_t = 1000)]
    lattices: usize,

    /// Leaf counts are drawn from 1..=max-leaf.
    #[arg(long, default_value_t = 50)]
    max_leaf: u64,

    /// CSV of two-period records (l0,a0,y1,l1,a1,y2) to tabulate instead.
    #[arg(long)]
    lattice_file: Option<PathBuf>,
}

/// Loads a stored configuration for `name`, redirecting output when `--out`
/// or the environment names a different directory.
fn stored(path: &PathBuf, name: &str) -> Result<RunConfig, CliError> {
    let cfg = config::load_config(path)?;
    if cfg.name() != name {
        return Err(CliError::usage(format!("{} holds a {} run, not {name}", path.display(), cfg.name())));
    }
    Ok(cfg)
}

fn with_out(mut cfg: RunConfig, out: PathBuf) -> RunConfig {
    match &mut cfg {
        RunConfig::Simulate(c) => c.out_dir = out,
        RunConfig::Analyze(c) => c.out_dir = out,
        RunConfig::Truth(c) => c.out_dir = out,
        RunConfig::Oracle(_) => {}
    }
    cfg
}

fn resolve(command: Command) -> Result<RunConfig, CliError> {
    Ok(match command {
        Command::Simulate(a) => {
            if let Some(p) = &a.config {
                return Ok(with_out(stored(p, "simulate")?, a.out));
            }
            let (scenario, params) = a.scenario.resolve()?;
            let seed = a.seed.expect("required by clap");
            RunConfig::Simulate(SimulateConfig {
                scenario,
                params,
                n: a.n,
                reps: a.reps,
                seed,
                methods: a.methods.into_iter().map(Method::from).collect(),
                family: a.family.into(),
                transform: a.transform.into(),
                truncate: a.truncate,
                truth_n: a.truth_n,
                truth_seed: a.truth_seed.unwrap_or(seed),
                out_dir: a.out,
            })
        }
        Command::Analyze(a) => {
            if let Some(p) = &a.config {
                return Ok(with_out(stored(p, "analyze")?, a.out));
            }
            let horizons = a
                .horizons
                .unwrap_or_else(|| (1..=a.tau_max.floor() as usize).map(|t| t as f64).collect());
            check_horizons(&horizons)?;
            RunConfig::Analyze(AnalyzeConfig {
                visits: a.visits.expect("required by clap"),
                subjects: a.subjects.expect("required by clap"),
                tau_max: a.tau_max,
                methods: a.methods.into_iter().map(Method::from).collect(),
                family: a.family.into(),
                form: a.form.map(Into::into),
                transform: a.transform.into(),
                truncate: a.truncate,
                horizons,
                bootstrap: a.bootstrap,
                seed: a.seed,
                out_dir: a.out,
            })
        }
        Command::Truth(a) => {
            if let Some(p) = &a.config {
                return Ok(with_out(stored(p, "truth")?, a.out));
            }
            let (scenario, params) = a.scenario.resolve()?;
            let horizons = a.horizons.unwrap_or_else(|| default_horizons(&params));
            check_horizons(&horizons)?;
            RunConfig::Truth(TruthConfig {
                scenario,
                params,
                n: a.n,
                seed: a.seed.expect("required by clap"),
                horizons,
                out_dir: a.out,
            })
        }
        Command::Oracle(a) => RunConfig::Oracle(OracleConfig {
            seed: a.seed,
            lattices: a.lattices,
            max_leaf: a.max_leaf,
            lattice_file: a.lattice_file,
        }),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("{}", CliError::usage("--threads must be positive"));
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match resolve(cli.command).and_then(|cfg| commands::run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
