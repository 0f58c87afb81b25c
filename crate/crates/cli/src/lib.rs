//! The `uvsr` command: degrade HR sequences, train, super-resolve, score
//! and self-check.

mod degrade;
mod eval;
mod infer;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use uvsr_core::degradation::SigmaSampler;
use uvsr_core::operators::ScaleFactor;
use uvsr_core::training::{self, DataConfig, TrainConfig};

pub use degrade::{DegradeConfig, DegradeManifest, ManifestEntry};
pub use eval::EvalConfig;
pub use infer::InferConfig;

/// Selects the compute device; only `cpu` exists.
pub const DEVICE_ENV: &str = "UVSR_DEVICE";

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] uvsr_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("unsupported device `{0}`; only `cpu` is available")]
    Device(String),

    #[error("self-test failed")]
    SelftestFailed,
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        use uvsr_core::Error as E;
        match self {
            CliError::SelftestFailed => 1,
            CliError::Usage(_) => 2,
            CliError::Core(E::Config(_)) => 3,
            CliError::Core(E::Io { .. } | E::Image { .. } | E::Csv(_)) => 4,
            CliError::MissingCheckpoint(_) | CliError::Core(E::Checkpoint(_) | E::Json(_)) => 5,
            CliError::Core(E::InvalidArgument(_) | E::InvalidState(_)) => 6,
            CliError::Device(_) => 7,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "uvsr", version, about = "Unrolled gradient-descent video super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blur and decimate HR frame directories into an LR dataset.
    Degrade(DegradeArgs),
    /// Train a model end to end.
    Train(TrainArgs),
    /// Super-resolve LR frame directories.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run the operator, adjoint and gradient property suites.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SigmaArgs {
    /// Fixed blur width.
    #[arg(long, conflicts_with = "sigma_range")]
    pub sigma: Option<f64>,
    /// Blur width drawn uniformly per sequence.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub sigma_range: Option<Vec<f64>>,
}

impl SigmaArgs {
    pub fn sampler(&self) -> CliResult<Option<SigmaSampler>> {
        Ok(match (&self.sigma, &self.sigma_range) {
            (Some(v), _) => Some(SigmaSampler::fixed(*v)?),
            (None, Some(r)) => Some(SigmaSampler::uniform(r[0], r[1])?),
            (None, None) => None,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// HR root; every directory of PNG frames below it is one sequence.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[command(flatten)]
    pub sigma: SigmaArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// HR frame directories to train on instead of synthetic textures.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub sigma: SigmaArgs,
    /// Print a progress line every this many steps.
    #[arg(long, default_value_t = 50)]
    pub log_every: u64,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// LR root; every directory of PNG frames below it is one sequence.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, conflicts_with = "classical")]
    pub checkpoint: Option<PathBuf>,
    /// Identity priors; no checkpoint needed.
    #[arg(long)]
    pub classical: bool,
    /// Unrolled blocks in classical mode.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Reconstruct each frame on its own.
    #[arg(long)]
    pub single_frame: bool,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Blur width assumed by the data steps.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Predicted frames root.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth frames root.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Model whose parameters are counted and whose runtime is measured.
    #[arg(long, conflicts_with = "classical")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub classical: bool,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Timed runs; 0 skips the benchmark.
    #[arg(long)]
    pub runtime_runs: Option<usize>,
    /// Dump this row of every frame as a temporal-profile strip.
    #[arg(long)]
    pub profile_row: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random cases per property.
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
}

pub fn check_device() -> CliResult<()> {
    match std::env::var(DEVICE_ENV) {
        Ok(d) if !d.eq_ignore_ascii_case("cpu") && !d.is_empty() => Err(CliError::Device(d)),
        _ => Ok(()),
    }
}

pub(crate) fn scale_arg(s: usize) -> CliResult<ScaleFactor> {
    Ok(ScaleFactor::new(s)?)
}

pub(crate) fn load_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| uvsr_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| uvsr_core::Error::Config(format!("{}: {e}", path.display())).into())
}

/// Writes `config` as `config.toml` inside `dir`.
pub(crate) fn write_resolved<T: Serialize>(dir: &Path, config: &T) -> CliResult<()> {
    write_text(dir, CONFIG_FILE, &toml::to_string(config).map_err(|e| uvsr_core::Error::Config(e.to_string()))?)
}

pub(crate) fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    let io = |e| uvsr_core::Error::Io {
        path: dir.join(name),
        source: e,
    };
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(name), text).map_err(io)?;
    Ok(())
}

pub(crate) fn required(value: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required (flag or config key)")))
}

pub fn resolve_train(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut c = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        c.seed = seed;
    }
    if let Some(s) = args.scale {
        c.model.scale = scale_arg(s)?;
    }
    if let Some(n) = args.steps {
        c.steps = n;
    }
    if let Some(path) = &args.data {
        c.data = DataConfig::Frames { path: path.clone() };
    }
    if let Some(sampler) = args.sigma.sampler()? {
        c.sigma = sampler;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let config = resolve_train(args)?;
    let source = config.data.open(config.model.channels)?;
    let every = args.log_every.max(1);
    let ckpt = training::train(&config, source, Some(&args.out), |r| {
        if r.step % every == 0 || r.step == config.steps {
            println!(
                "step {:>6}  loss {:.6}  sr {:.6}  flow {:.6}/{:.6}  lr {:.2e}",
                r.step, r.total, r.sr, r.flow_prev_to_t, r.flow_t_to_prev, r.lr
            );
        }
    })?;
    println!(
        "saved {} ({} parameters) to {}",
        ckpt.manifest.kind.as_str(),
        ckpt.manifest.parameter_count,
        args.out.join("checkpoint").display()
    );
    Ok(())
}

fn cmd_selftest(args: &SelftestArgs) -> CliResult<()> {
    let report = uvsr_core::selftest::run(args.seed, args.cases)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::SelftestFailed)
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Degrade(a) => degrade::run(&a),
        Command::Train(a) => {
            check_device()?;
            cmd_train(&a)
        }
        Command::Infer(a) => {
            check_device()?;
            infer::run(&a)
        }
        Command::Eval(a) => {
            check_device()?;
            eval::run(&a)
        }
        Command::Selftest(a) => cmd_selftest(&a),
    }
}
