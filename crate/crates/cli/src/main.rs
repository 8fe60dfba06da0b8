//! Command-line driver: prep -> train -> phase1 -> phase2 -> phase3 ->
//! report, with a JSON config document and flag overrides. Exit codes:
//! 0 success, 1 usage error, 2 data error, 3 missing prerequisite.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fidelity_core::explainers::{ExplainError, ExplainerKind};
use fidelity_core::models::ModelError;
use fidelity_core::phase1::PhaseError;
use fidelity_core::tabular::{TabularError, TaskKind};

use config::{DatasetSection, ModelKind, RunConfig};
use manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    MissingPrerequisite(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::MissingPrerequisite(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::MissingPrerequisite(m) => write!(f, "{m}"),
        }
    }
}

impl From<TabularError> for CliError {
    fn from(e: TabularError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<PhaseError> for CliError {
    fn from(e: PhaseError) -> CliError {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ExplainerArg {
    Surrogate,
    TreeShapley,
}

#[derive(Parser)]
#[command(
    name = "fidelity",
    version,
    about = "Measure the fidelity of local feature-attribution explanations against tree models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a CSV, optionally balance classes, and split into train/test
    Prep(PrepArgs),
    /// Fit the configured model on the training split
    Train(CommonArgs),
    /// White-box agreement: recall and precision against path features
    Phase1(CommonArgs),
    /// Parameter search: optimal decile range and weight-bin size
    Phase2(CommonArgs),
    /// Perturbation fidelity: explanation-supporting and -contrary metrics
    Phase3(CommonArgs),
    /// Merge aggregates from one or more runs into cross-dataset tables
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON config file (prep), or overrides for the manifest snapshot
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    /// Output directory with the run's manifest and artifacts
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
    /// Seed for preprocessing and the evaluation phases
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// Model kind to train/evaluate
    #[arg(long, value_enum)]
    pub(crate) model: Option<ModelKind>,
    /// Explainer kind
    #[arg(long, value_enum)]
    pub(crate) explainer: Option<ExplainerArg>,
    /// Explanations averaged per instance
    #[arg(long)]
    pub(crate) k: Option<usize>,
    /// Decile range override for phase3
    #[arg(long)]
    pub(crate) d: Option<u8>,
    /// Weight-bin size override for phase3
    #[arg(long)]
    pub(crate) p: Option<f64>,
    /// Perturbed inputs per instance per mode
    #[arg(long)]
    pub(crate) repeats: Option<usize>,
    /// Worker threads (default: available processors)
    #[arg(long)]
    pub(crate) jobs: Option<usize>,
    /// Suppress progress lines
    #[arg(long, default_value_t = false)]
    pub(crate) quiet: bool,
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    #[command(flatten)]
    pub(crate) common: CommonArgs,
    /// Dataset CSV path (alternative to --config)
    #[arg(long)]
    pub(crate) data: Option<PathBuf>,
    /// Target column name
    #[arg(long)]
    pub(crate) target: Option<String>,
    /// Prediction task
    #[arg(long, value_enum)]
    pub(crate) task: Option<TaskArg>,
    /// Downsample the majority class to parity
    #[arg(long, default_value_t = false)]
    pub(crate) balance: bool,
    /// Training fraction of the split
    #[arg(long)]
    pub(crate) split: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories to merge
    pub(crate) runs: Vec<PathBuf>,
    /// Where the merged tables land (default: current directory)
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
}

impl CommonArgs {
    /// Fold flag overrides into the manifest's config snapshot.
    fn apply_overrides(&self, manifest: &mut RunManifest) -> Result<(), CliError> {
        let mut config = manifest.config.clone();
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(kind) = self.model {
            config.model.kind = kind;
        }
        if let Some(e) = self.explainer {
            config.explainer.kind = match e {
                ExplainerArg::Surrogate => ExplainerKind::Surrogate,
                ExplainerArg::TreeShapley => ExplainerKind::TreeShapley,
            };
        }
        if let Some(k) = self.k {
            if k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            config.explainer.k_repeats = k;
        }
        if let Some(d) = self.d {
            config.phase3.optimal_d = Some(d);
        }
        if let Some(p) = self.p {
            config.phase3.optimal_p = Some(p);
        }
        if let Some(r) = self.repeats {
            config.phase3.repeats = r;
        }
        manifest.set_config(config);
        Ok(())
    }
}

fn load_config_file(path: &PathBuf) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn prep_config(args: &PrepArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.common.config {
        Some(path) => load_config_file(path)?,
        None => {
            let data = args.data.clone().ok_or_else(|| {
                CliError::Usage("prep needs --config or --data with --target".into())
            })?;
            let target = args.target.clone().ok_or_else(|| {
                CliError::Usage("prep needs --target to name the label column".into())
            })?;
            RunConfig {
                dataset: DatasetSection {
                    path: data.display().to_string(),
                    target_column: target,
                    task: TaskKind::Classification,
                    balance: false,
                    split_fraction: 0.7,
                    seed: 42,
                },
                model: Default::default(),
                explainer: Default::default(),
                phase2: Default::default(),
                phase3: Default::default(),
                seed: 42,
                output_dir: None,
            }
        }
    };
    if let Some(data) = &args.data {
        config.dataset.path = data.display().to_string();
    }
    if let Some(target) = &args.target {
        config.dataset.target_column = target.clone();
    }
    if let Some(task) = args.task {
        config.dataset.task = match task {
            TaskArg::Classification => TaskKind::Classification,
            TaskArg::Regression => TaskKind::Regression,
        };
    }
    if args.balance {
        config.dataset.balance = true;
    }
    if let Some(split) = args.split {
        config.dataset.split_fraction = split;
    }
    if let Some(seed) = args.common.seed {
        config.dataset.seed = seed;
        config.seed = seed;
    }
    if let Some(kind) = args.common.model {
        config.model.kind = kind;
    }
    if let Some(e) = args.common.explainer {
        config.explainer.kind = match e {
            ExplainerArg::Surrogate => ExplainerKind::Surrogate,
            ExplainerArg::TreeShapley => ExplainerKind::TreeShapley,
        };
    }
    if let Some(k) = args.common.k {
        config.explainer.k_repeats = k;
    }
    if let Some(out) = &args.common.out {
        config.output_dir = Some(out.display().to_string());
    }
    Ok(config)
}

fn resolve_out_dir(flag: &Option<PathBuf>, config_dir: &Option<String>) -> PathBuf {
    flag.clone()
        .or_else(|| config_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Prep(args) => {
            let config = prep_config(args)?;
            let out_dir = resolve_out_dir(&args.common.out, &config.output_dir);
            with_jobs(args.common.jobs, || cmd(args, config, &out_dir))
        }
        Command::Train(args) => dispatch(args, commands::cmd_train),
        Command::Phase1(args) => dispatch(args, commands::cmd_phase1),
        Command::Phase2(args) => dispatch(args, commands::cmd_phase2),
        Command::Phase3(args) => dispatch(args, commands::cmd_phase3),
        Command::Report(args) => commands::cmd_report(args),
    }
}

fn cmd(args: &PrepArgs, config: RunConfig, out_dir: &std::path::Path) -> Result<(), CliError> {
    commands::cmd_prep(args, config, out_dir)
}

fn dispatch(
    args: &CommonArgs,
    f: fn(&CommonArgs, &std::path::Path) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let out_dir = resolve_out_dir(&args.out, &None);
    with_jobs(args.jobs, || f(args, &out_dir))
}

/// Run inside a bounded rayon pool when --jobs is given. Results are
/// deterministic regardless of the thread count.
fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version paths are successes, not usage errors
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
