//! Implementations of the train, eval, bench, and gradcheck subcommands.

use crate::config::{DatasetKind, RunConfig};
use crate::CliError;
use kan_mixer::checkpoint::{load_model, save_model};
use kan_mixer::dataset::Split;
use kan_mixer::gradcheck::grad_check_full;
use kan_mixer::mixer::{KanMixerModel, MixerConfig};
use kan_mixer::training::{evaluate, train, RunMetrics, TrainOptions};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const CSV_HEADER: &str = "dataset,epoch_time_s,test_time_s,est_memory_mb,test_accuracy";

/// Metrics JSON document: effective configuration plus run results.
#[derive(Debug, Serialize)]
struct MetricsDoc<'a> {
    dataset: &'a str,
    config: &'a MixerConfig,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    weight_decay: f64,
    metrics: &'a RunMetrics,
}

fn csv_row(dataset: &str, metrics: &RunMetrics) -> String {
    format!(
        "{dataset},{:.3},{:.3},{:.3},{:.4}",
        metrics.mean_epoch_time_s(),
        metrics.test_time_s,
        metrics.est_memory_mb,
        metrics.test_accuracy
    )
}

fn write_metrics_json(path: &Path, config: &RunConfig, metrics: &RunMetrics) -> Result<(), CliError> {
    let doc = MetricsDoc {
        dataset: config.dataset.name(),
        config: &config.model,
        epochs: config.epochs,
        batch_size: config.batch_size,
        lr: config.lr,
        weight_decay: config.weight_decay,
        metrics,
    };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Runtime(format!("serializing metrics: {e}")))?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("creating {}: {e}", parent.display())))?;
        }
    }
    fs::write(path, json)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

fn append_csv_row(path: &Path, row: &str) -> Result<(), CliError> {
    let needs_header = !path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Runtime(format!("opening {}: {e}", path.display())))?;
    if needs_header {
        writeln!(file, "{CSV_HEADER}").map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    writeln!(file, "{row}").map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

pub fn run_training(config: &RunConfig) -> Result<(KanMixerModel, RunMetrics), CliError> {
    let train_ds = config.dataset.load(&config.data_dir, Split::Train)?;
    let test_ds = config.dataset.load(&config.data_dir, Split::Test)?;
    let mut model =
        KanMixerModel::new(config.model.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "training {} on {}: {} params, {} epochs, batch {}, lr {}",
        config.dataset,
        config.data_dir.display(),
        model.param_count(),
        config.epochs,
        config.batch_size,
        config.lr
    );
    let opts = TrainOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.model.seed,
        adam: config.adam(),
    };
    let total = config.epochs;
    let metrics = train(&mut model, &train_ds, &test_ds, &opts, &mut |e| {
        println!(
            "epoch {}/{}: train loss {:.4} ({:.1}s)",
            e.epoch + 1,
            total,
            e.train_loss,
            e.epoch_time_s
        );
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "test accuracy {:.4} (test time {:.1}s, est memory {:.1} MB)",
        metrics.test_accuracy, metrics.test_time_s, metrics.est_memory_mb
    );
    Ok((model, metrics))
}

pub fn cmd_train(
    config: &RunConfig,
    checkpoint: &Path,
    metrics_path: &Path,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let (model, metrics) = run_training(config)?;
    if let Some(parent) = checkpoint.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("creating {}: {e}", parent.display())))?;
        }
    }
    save_model(&model, checkpoint).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_metrics_json(metrics_path, config, &metrics)?;
    if let Some(csv) = csv {
        append_csv_row(csv, &csv_row(config.dataset.name(), &metrics))?;
    }
    println!(
        "wrote checkpoint {} and metrics {}",
        checkpoint.display(),
        metrics_path.display()
    );
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    dataset: DatasetKind,
    data_dir: &Path,
    batch_size: usize,
) -> Result<(), CliError> {
    let mut model = load_model(checkpoint).map_err(|e| {
        CliError::Data(format!("loading checkpoint {}: {e}", checkpoint.display()))
    })?;
    let test_ds = dataset.load(data_dir, Split::Test)?;
    if model.config.in_channels != test_ds.channels
        || model.config.image_h != test_ds.height
        || model.config.image_w != test_ds.width
        || model.config.n_output != test_ds.n_classes
    {
        return Err(CliError::Data(format!(
            "checkpoint expects {}x{}x{} images with {} classes, {dataset} has {}x{}x{} with {}",
            model.config.in_channels,
            model.config.image_h,
            model.config.image_w,
            model.config.n_output,
            test_ds.channels,
            test_ds.height,
            test_ds.width,
            test_ds.n_classes
        )));
    }
    let (accuracy, elapsed) =
        evaluate(&mut model, &test_ds, batch_size).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("accuracy {accuracy:.4} test_time_s {elapsed:.3}");
    Ok(())
}

#[derive(Debug, Clone)]
struct SweepRow {
    dataset: DatasetKind,
    n_channels: usize,
    n_hiddens: usize,
    epochs: usize,
}

impl SweepRow {
    fn key(&self) -> String {
        format!(
            "{}_{}x{}_{}ep",
            self.dataset.name(),
            self.n_channels,
            self.n_hiddens,
            self.epochs
        )
    }
}

fn parse_sweep(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reading sweep {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line_no == 0 && line.to_ascii_lowercase().starts_with("dataset") {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(CliError::Config(format!(
                "sweep line {}: expected dataset,n_channels,n_hiddens,epochs",
                line_no + 1
            )));
        }
        let parse_num = |what: &str, s: &str| -> Result<usize, CliError> {
            s.parse()
                .map_err(|e| CliError::Config(format!("sweep line {}: {what}: {e}", line_no + 1)))
        };
        rows.push(SweepRow {
            dataset: fields[0]
                .parse()
                .map_err(|e| CliError::Config(format!("sweep line {}: {e}", line_no + 1)))?,
            n_channels: parse_num("n_channels", fields[1])?,
            n_hiddens: parse_num("n_hiddens", fields[2])?,
            epochs: parse_num("epochs", fields[3])?,
        });
    }
    Ok(rows)
}

/// Runs every sweep row, resuming past completed rows (their metrics JSON
/// already exists), and rewrites the results CSV from all completed rows in
/// sweep order. Per-row failures are logged and the remaining rows continue.
pub fn cmd_bench(
    sweep: &Path,
    out_dir: &Path,
    base: &RunConfig,
) -> Result<(), CliError> {
    let rows = parse_sweep(sweep)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", out_dir.display())))?;
    let mut any_failed = false;

    for row in &rows {
        let key = row.key();
        let metrics_path = out_dir.join(format!("bench_{key}.json"));
        if metrics_path.exists() {
            println!("skipping {key}: {} exists", metrics_path.display());
            continue;
        }
        let mut config = base.clone();
        config.dataset = row.dataset;
        config.epochs = row.epochs;
        config.model.n_channels = row.n_channels;
        config.model.n_hiddens = row.n_hiddens;
        let (channels, height, width, classes) = row.dataset.dims();
        config.model.in_channels = channels;
        config.model.image_h = height;
        config.model.image_w = width;
        config.model.n_output = classes;

        println!("bench row {key}");
        match run_training(&config) {
            Ok((model, metrics)) => {
                if let Err(e) = save_model(&model, out_dir.join(format!("bench_{key}.ckpt"))) {
                    eprintln!("bench row {key}: saving checkpoint failed: {e}");
                }
                write_metrics_json(&metrics_path, &config, &metrics)?;
            }
            Err(e) => {
                eprintln!("bench row {key} FAILED: {e}");
                any_failed = true;
            }
        }
    }

    // Regenerate the CSV from completed rows, in sweep order.
    let csv_path = out_dir.join("bench.csv");
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        let metrics_path = out_dir.join(format!("bench_{}.json", row.key()));
        if !metrics_path.exists() {
            continue;
        }
        let text = fs::read_to_string(&metrics_path)
            .map_err(|e| CliError::Runtime(format!("reading {}: {e}", metrics_path.display())))?;
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(format!("parsing {}: {e}", metrics_path.display())))?;
        let metrics: RunMetrics = serde_json::from_value(doc["metrics"].clone())
            .map_err(|e| CliError::Runtime(format!("parsing {}: {e}", metrics_path.display())))?;
        csv.push_str(&csv_row(row.dataset.name(), &metrics));
        csv.push('\n');
    }
    fs::write(&csv_path, csv)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", csv_path.display())))?;
    println!("results table: {}", csv_path.display());

    if any_failed {
        Err(CliError::Runtime("one or more bench rows failed".to_string()))
    } else {
        Ok(())
    }
}

/// Residual modes a gradcheck invocation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheckMode {
    Both,
    Residual(bool),
}

impl std::str::FromStr for GradCheckMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "both" => Ok(GradCheckMode::Both),
            "true" => Ok(GradCheckMode::Residual(true)),
            "false" => Ok(GradCheckMode::Residual(false)),
            other => Err(format!("expected both, true, or false, got '{other}'")),
        }
    }
}

pub fn cmd_gradcheck(tolerance: f64, mode: GradCheckMode) -> Result<(), CliError> {
    let modes: &[bool] = match mode {
        GradCheckMode::Both => &[false, true],
        GradCheckMode::Residual(r) => if r { &[true] } else { &[false] },
    };
    let mut all_passed = true;
    for &residual in modes {
        let mut config = MixerConfig::tiny();
        config.residual = residual;
        let report =
            grad_check_full(&config, tolerance).map_err(|e| CliError::Runtime(e.to_string()))?;
        println!(
            "residual={residual} max_rel_err={:.6e} worst={} params={} {}",
            report.max_rel_err,
            report.worst_param,
            report.param_count,
            if report.passed { "PASS" } else { "FAIL" }
        );
        all_passed &= report.passed;
    }
    if all_passed {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check exceeded tolerance {tolerance}"
        )))
    }
}
