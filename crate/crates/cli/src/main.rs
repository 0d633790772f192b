//! `polytope-scope <command> --config <path> [--out <dir>] [--seed N]`

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing input {}: {reason}", path.display())]
    MissingInput { path: PathBuf, reason: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Core(#[from] polytope_scope::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingInput { .. } => "missing_input",
            CliError::Unsupported(_) => "unsupported",
            CliError::Core(polytope_scope::Error::Degenerate { .. }) => "degenerate",
            CliError::Core(_) => "computation",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Unsupported(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "polytope-scope", version, about = "Polyhedral, spectral and homological analysis of small ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
struct WithEpoch {
    #[command(flatten)]
    common: Common,
    /// Checkpoint epoch; defaults to the last one.
    #[arg(long)]
    epoch: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the dataset or trajectory.
    GenData(Common),
    /// Train and write checkpoints and log.csv.
    Train(Common),
    /// Decompose one checkpoint's input box.
    Decompose(WithEpoch),
    /// Unweighted and weighted Fiedler partitions of one checkpoint.
    Fiedler(WithEpoch),
    /// Averaged Betti curves of one checkpoint.
    Homology(WithEpoch),
    /// Analyze every checkpoint: f-vectors, Betti heat maps, partitions.
    Sweep(Common),
    /// Render figures from sweep outputs.
    Plot(Common),
    /// gen-data, train, sweep and plot in sequence.
    All(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c)
            | Command::Train(c)
            | Command::Sweep(c)
            | Command::Plot(c)
            | Command::All(c) => c,
            Command::Decompose(w) | Command::Fiedler(w) | Command::Homology(w) => &w.common,
        }
    }

    fn epoch(&self) -> Option<usize> {
        match self {
            Command::Decompose(w) | Command::Fiedler(w) | Command::Homology(w) => w.epoch,
            _ => None,
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.homology.seed = None;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.resolve()
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli.command.common())?;
    if let Some(n) = cfg.sweep.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let epoch = cli.command.epoch();
    let step = |name: &str, f: fn(&mut commands::Run) -> Result<(), CliError>| {
        let mut r = commands::Run::new(cfg.clone());
        f(&mut r)?;
        r.finish(name)
    };
    let with_epoch =
        |name: &str, f: fn(&mut commands::Run, Option<usize>) -> Result<(), CliError>| {
            let mut r = commands::Run::new(cfg.clone());
            f(&mut r, epoch)?;
            r.finish(name)
        };
    match &cli.command {
        Command::GenData(_) => step("gen-data", commands::gen_data),
        Command::Train(_) => step("train", commands::train_cmd),
        Command::Decompose(_) => with_epoch("decompose", commands::decompose_cmd),
        Command::Fiedler(_) => with_epoch("fiedler", commands::fiedler_cmd),
        Command::Homology(_) => with_epoch("homology", commands::homology_cmd),
        Command::Sweep(_) => step("sweep", commands::sweep_cmd),
        Command::Plot(_) => step("plot", commands::plot_cmd),
        Command::All(_) => {
            step("gen-data", commands::gen_data)?;
            step("train", commands::train_cmd)?;
            step("sweep", commands::sweep_cmd)?;
            step("plot", commands::plot_cmd)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(e.exit_code())
        }
    }
}
