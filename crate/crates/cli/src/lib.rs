//! Command-line front end: configuration handling and the experiment
//! subcommands.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use config::{ConfigError, RunConfig};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "kdiff", version, about = "Kernel-first blind deconvolution experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file; unspecified keys keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives the bit-exact sequential mode.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override a config key by dotted path, e.g. `--set train.iterations=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Projected joint-loss surface and sigma marginals of the 1D problem.
    #[command(name = "toy1d-surface")]
    Toy1dSurface,
    /// Multi-start alternating minimization versus the kernel-first estimate.
    #[command(name = "toy1d-compare")]
    Toy1dCompare,
    /// Synthesize the motion-kernel dataset.
    GenKernels,
    /// Train the noise predictor.
    Train,
    /// Estimate kernel and sharp image for `paths.input`.
    Deblur,
    /// Score `paths.input` against `paths.ground_truth`.
    Eval,
    /// Guided versus unguided sampling on held-out synthetic images.
    Ablate,
}

/// Failure classes with their exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<kernel_diff::Error> for CliError {
    fn from(e: kernel_diff::Error) -> Self {
        use kernel_diff::Error as E;
        let msg = e.to_string();
        match e {
            E::Domain(_) | E::Shape { .. } | E::Mismatch { .. } => CliError::Config(msg),
            E::Format { .. } | E::Io { .. } | E::Image(_) | E::Json(_) => CliError::Io(msg),
            E::NonFinite { .. } | E::NonFiniteExample { .. } | E::Diverged { .. } => CliError::Numerical(msg),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Io(format!("{}: {e}", cli.out.display())))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Toy1dSurface => commands::toy1d_surface(&cfg, out),
        Command::Toy1dCompare => commands::toy1d_compare(&cfg, out),
        Command::GenKernels => commands::gen_kernels(&cfg, out),
        Command::Train => commands::train_cmd(&cfg, out),
        Command::Deblur => commands::deblur(&cfg, out),
        Command::Eval => commands::eval(&cfg, out),
        Command::Ablate => commands::ablate(&cfg, out),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be >= 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(CliError::Config(format!("thread pool: {e}"))),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kdiff: {e}");
            e.exit_code()
        }
    }
}
