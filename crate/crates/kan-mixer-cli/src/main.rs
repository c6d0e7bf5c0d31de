//! Command-line entry point: training, evaluation, benchmark sweeps,
//! gradient checks, and dataset fetching for KAN-Mixer models.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 data/checkpoint error.

mod commands;
mod config;
mod fetch;

use clap::{Args, Parser, Subcommand};
use commands::GradCheckMode;
use config::{DatasetKind, Overrides, RunConfig};
use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "kan-mixer", version, about = "Train and evaluate KAN-Mixer image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags mirrored one-to-one by config-file keys; flags win over the file.
#[derive(Args, Debug, Default)]
struct ModelFlags {
    /// Config file: key=value lines or a JSON object.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    n_channels: Option<usize>,
    #[arg(long)]
    n_hiddens: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Output classes; must match the dataset when given.
    #[arg(long)]
    n_output: Option<usize>,
    /// Square image size; must match the dataset when given.
    #[arg(long)]
    image_size: Option<usize>,
    /// Image channels; must match the dataset when given.
    #[arg(long)]
    image_channels: Option<usize>,
    #[arg(long)]
    spline_order: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    /// Pre-norm residual mixer blocks (true) or the plain stack (false).
    #[arg(long)]
    residual: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Dataset directory (also: env DATA_DIR; default ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl ModelFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            dataset: self.dataset,
            patch_size: self.patch_size,
            n_channels: self.n_channels,
            n_hiddens: self.n_hiddens,
            depth: self.depth,
            n_output: self.n_output,
            image_size: self.image_size,
            image_channels: self.image_channels,
            spline_order: self.spline_order,
            grid_size: self.grid_size,
            residual: self.residual,
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            data_dir: self.data_dir.clone(),
        }
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(path) => Overrides::from_file(path)?,
            None => Overrides::default(),
        };
        RunConfig::resolve(&file.layered_under(self.overrides()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes a checkpoint and a metrics JSON document.
    Train {
        #[command(flatten)]
        flags: ModelFlags,
        /// Checkpoint output path (default out/<dataset>.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Metrics JSON output path (default out/<dataset>_metrics.json).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Append one results row to this CSV (header written if new).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Output directory for default paths.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: DatasetKind,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Run a sweep file: rows of dataset,n_channels,n_hiddens,epochs.
    /// Completed rows are skipped on rerun.
    Bench {
        sweep: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[command(flatten)]
        flags: ModelFlags,
    },
    /// Verify analytic gradients against central finite differences on the
    /// tiny configuration.
    Gradcheck {
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        /// Residual mode to check: both, true, or false.
        #[arg(long, default_value = "both")]
        residual: GradCheckMode,
    },
    /// Download datasets (with published-checksum verification) into the
    /// data directory.
    Fetch {
        /// mnist, cifar10, or cifar100; omit for all three.
        dataset: Option<DatasetKind>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Base URL override; file names are appended to it.
        #[arg(long)]
        mirror: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            flags,
            checkpoint,
            metrics,
            csv,
            out_dir,
        } => {
            let config = flags.resolve()?;
            let checkpoint =
                checkpoint.unwrap_or_else(|| out_dir.join(format!("{}.ckpt", config.dataset)));
            let metrics =
                metrics.unwrap_or_else(|| out_dir.join(format!("{}_metrics.json", config.dataset)));
            commands::cmd_train(&config, &checkpoint, &metrics, csv.as_deref())
        }
        Command::Eval {
            checkpoint,
            dataset,
            data_dir,
            batch_size,
        } => {
            let data_dir = data_dir
                .or_else(|| std::env::var_os("DATA_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("data"));
            commands::cmd_eval(&checkpoint, dataset, &data_dir, batch_size)
        }
        Command::Bench {
            sweep,
            out_dir,
            flags,
        } => {
            let mut overrides = flags.overrides();
            // Rows supply the dataset; a placeholder satisfies resolution.
            if overrides.dataset.is_none() {
                overrides.dataset = Some(DatasetKind::Mnist);
            }
            let file = match &flags.config {
                Some(path) => Overrides::from_file(path)?,
                None => Overrides::default(),
            };
            let base = RunConfig::resolve(&file.layered_under(overrides))?;
            commands::cmd_bench(&sweep, &out_dir, &base)
        }
        Command::Gradcheck {
            tolerance,
            residual,
        } => commands::cmd_gradcheck(tolerance, residual),
        Command::Fetch {
            dataset,
            data_dir,
            mirror,
        } => {
            let data_dir = data_dir
                .or_else(|| std::env::var_os("DATA_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("data"));
            fetch::cmd_fetch(dataset, &data_dir, mirror.as_deref())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
