//! `specinject`: inject controlled angular content, probe it, and read the cliff.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use commands::Ctx;
use config::ConfigFile;

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const PARSE: u8 = 3;
    pub const DEGENERATE: u8 = 4;
    pub const GATE_LEAKAGE: u8 = 5;
    pub const RESOURCE: u8 = 6;
    pub const EMPTY: u8 = 7;
    pub const TRAINING: u8 = 8;
    pub const IO: u8 = 9;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{0}")]
    Core(#[from] specinject::Error),

    #[error("leakage gate failed: rho2_max = {rho2_max:.4} (gate {gate}); rerun with --force to accept")]
    GateLeakage { rho2_max: f64, gate: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn config(line: usize, msg: impl Into<String>) -> Self {
        CliError::Config { line, msg: msg.into() }
    }

    pub fn code(&self) -> u8 {
        use specinject::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config { .. } => exit::USAGE,
            CliError::GateLeakage { .. } => exit::GATE_LEAKAGE,
            CliError::Empty(_) => exit::EMPTY,
            CliError::Io(_) => exit::IO,
            CliError::Core(e) => match e {
                E::Parse { .. } => exit::PARSE,
                E::DegenerateFrame { .. } | E::DegenerateAnchor { .. } | E::RejectedFrames(_) => exit::DEGENERATE,
                E::Resource { .. } => exit::RESOURCE,
                E::Training { .. } => exit::TRAINING,
                E::Io(_) => exit::IO,
                E::Argument(_) => exit::USAGE,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "specinject", version, about = "Spectral injection and readout-ceiling diagnostics")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` file with optional `[command]` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the report JSON on stdout instead of a summary.
    #[arg(long, global = true)]
    json: bool,
    /// Override any config key, e.g. `--set ridge=1e-8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add a degree-ℓ body-frame energy (and its forces) to every frame.
    Inject(commands::inject::Flags),
    /// Polynomial-probe saturation grid over (L, d) cells.
    Grid(commands::grid::Flags),
    /// Linear probe against in-band and one-above-band targets.
    Hardceil(commands::grid::HardceilFlags),
    /// Train the spectral prediction head on samples or a synthetic task.
    SpnTrain(commands::spn::Flags),
    /// Recovery fractions, sharpness and cliff location from error triples.
    Diagnose(commands::diagnose::Flags),
    /// Per-atom angular bandwidth of neighbour densities.
    Bandwidth(commands::bandwidth::Flags),
    /// Angular power spectrum of natural energies in the body frame.
    Spectrum(commands::bandwidth::SpectrumFlags),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let file = cli.common.config.as_deref().map(ConfigFile::load).transpose()?;
    let mut overrides = Vec::new();
    if let Some(s) = cli.common.seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    let ctx = Ctx {
        out_dir: cli.common.out_dir,
        json: cli.common.json,
        file,
        overrides,
        set: cli
            .common
            .set
            .iter()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))
            })
            .collect::<Result<_, _>>()?,
    };
    match cli.command {
        Command::Inject(f) => commands::inject::run(&ctx, f),
        Command::Grid(f) => commands::grid::run(&ctx, f),
        Command::Hardceil(f) => commands::grid::run_hardceil(&ctx, f),
        Command::SpnTrain(f) => commands::spn::run(&ctx, f),
        Command::Diagnose(f) => commands::diagnose::run(&ctx, f),
        Command::Bandwidth(f) => commands::bandwidth::run(&ctx, f),
        Command::Spectrum(f) => commands::bandwidth::run_spectrum(&ctx, f),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
