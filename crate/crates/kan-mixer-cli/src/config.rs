//! Run configuration: dataset selection, architecture hyperparameters, and
//! training settings, resolved from defaults, an optional config file, and
//! command-line flags (flags win).
//!
//! Config files are either flat `key=value` lines (`#` comments allowed) or
//! a JSON object with the same keys; both map one-to-one to the flags.

use crate::CliError;
use kan_mixer::dataset::{load_cifar10, load_cifar100, load_mnist, Dataset, Split};
use kan_mixer::mixer::{
    MixerConfig, DEFAULT_DEPTH, DEFAULT_GRID_SIZE, DEFAULT_PATCH_SIZE, DEFAULT_SPLINE_ORDER,
};
use kan_mixer::training::AdamParams;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
        }
    }

    /// (channels, height, width, classes) implied by the dataset.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        match self {
            DatasetKind::Mnist => (1, 28, 28, 10),
            DatasetKind::Cifar10 => (3, 32, 32, 10),
            DatasetKind::Cifar100 => (3, 32, 32, 100),
        }
    }

    pub fn load(&self, data_dir: &Path, split: Split) -> Result<Dataset, CliError> {
        let mut ds = match self {
            DatasetKind::Mnist => {
                let (images, labels) = match split {
                    Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                    Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
                };
                load_mnist(data_dir.join(images), data_dir.join(labels))
            }
            DatasetKind::Cifar10 => {
                let dir = data_dir.join("cifar-10-batches-bin");
                let paths: Vec<PathBuf> = match split {
                    Split::Train => (1..=5)
                        .map(|i| dir.join(format!("data_batch_{i}.bin")))
                        .collect(),
                    Split::Test => vec![dir.join("test_batch.bin")],
                };
                load_cifar10(&paths)
            }
            DatasetKind::Cifar100 => {
                let dir = data_dir.join("cifar-100-binary");
                let file = match split {
                    Split::Train => "train.bin",
                    Split::Test => "test.bin",
                };
                load_cifar100(dir.join(file), true)
            }
        }
        .map_err(|e| {
            CliError::Data(format!(
                "loading {} {} split from {}: {e} (run `kan-mixer fetch {}`)",
                self.name(),
                match split {
                    Split::Train => "train",
                    Split::Test => "test",
                },
                data_dir.display(),
                self.name()
            ))
        })?;
        ds.split = split;
        Ok(ds)
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            "cifar100" | "cifar-100" => Ok(DatasetKind::Cifar100),
            other => Err(format!(
                "unknown dataset '{other}' (expected mnist, cifar10, or cifar100)"
            )),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Values a config file or the command line may set; `None` means "not
/// given". Flags overwrite file values field by field.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<DatasetKind>,
    pub patch_size: Option<usize>,
    pub n_channels: Option<usize>,
    pub n_hiddens: Option<usize>,
    pub depth: Option<usize>,
    pub n_output: Option<usize>,
    pub image_size: Option<usize>,
    pub image_channels: Option<usize>,
    pub spline_order: Option<usize>,
    pub grid_size: Option<usize>,
    pub residual: Option<bool>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub data_dir: Option<PathBuf>,
}

impl Overrides {
    /// Later values win field by field.
    pub fn layered_under(self, over: Overrides) -> Overrides {
        macro_rules! pick {
            ($field:ident) => {
                over.$field.or(self.$field)
            };
        }
        Overrides {
            dataset: pick!(dataset),
            patch_size: pick!(patch_size),
            n_channels: pick!(n_channels),
            n_hiddens: pick!(n_hiddens),
            depth: pick!(depth),
            n_output: pick!(n_output),
            image_size: pick!(image_size),
            image_channels: pick!(image_channels),
            spline_order: pick!(spline_order),
            grid_size: pick!(grid_size),
            residual: pick!(residual),
            seed: pick!(seed),
            epochs: pick!(epochs),
            batch_size: pick!(batch_size),
            lr: pick!(lr),
            weight_decay: pick!(weight_decay),
            data_dir: pick!(data_dir),
        }
    }

    pub fn from_file(path: &Path) -> Result<Overrides, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let pairs = if text.trim_start().starts_with('{') {
            parse_json_pairs(&text)?
        } else {
            parse_kv_pairs(&text)?
        };
        let mut o = Overrides::default();
        for (key, value) in pairs {
            o.set(&key, &value)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        }
        Ok(o)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            value
                .parse()
                .map_err(|e| format!("bad value '{value}' for {key}: {e}"))
        }
        match key {
            "dataset" => self.dataset = Some(value.parse()?),
            "patch_size" => self.patch_size = Some(num(key, value)?),
            "n_channels" => self.n_channels = Some(num(key, value)?),
            "n_hiddens" => self.n_hiddens = Some(num(key, value)?),
            "depth" => self.depth = Some(num(key, value)?),
            "n_output" => self.n_output = Some(num(key, value)?),
            "image_size" => self.image_size = Some(num(key, value)?),
            "image_channels" => self.image_channels = Some(num(key, value)?),
            "spline_order" => self.spline_order = Some(num(key, value)?),
            "grid_size" => self.grid_size = Some(num(key, value)?),
            "residual" => self.residual = Some(num(key, value)?),
            "seed" => self.seed = Some(num(key, value)?),
            "epochs" => self.epochs = Some(num(key, value)?),
            "batch_size" => self.batch_size = Some(num(key, value)?),
            "lr" => self.lr = Some(num(key, value)?),
            "weight_decay" => self.weight_decay = Some(num(key, value)?),
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }
}

fn parse_kv_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("line {}: expected key=value, got '{line}'", line_no + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_json_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let map: BTreeMap<String, serde_json::Value> = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("bad JSON config: {e}")))?;
    map.into_iter()
        .map(|(key, value)| {
            let value = match value {
                serde_json::Value::String(s) => s,
                serde_json::Value::Bool(b) => b.to_string(),
                serde_json::Value::Number(n) => n.to_string(),
                other => {
                    return Err(CliError::Config(format!(
                        "config key '{key}' has unsupported JSON value {other}"
                    )))
                }
            };
            Ok((key, value))
        })
        .collect()
}

/// Fully resolved run configuration, echoed into metrics output.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    #[serde(flatten)]
    pub model: MixerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    #[serde(skip)]
    pub data_dir: PathBuf,
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<RunConfig, CliError> {
        let dataset = o
            .dataset
            .ok_or_else(|| CliError::Config("no dataset given (--dataset)".to_string()))?;
        let (channels, height, width, classes) = dataset.dims();

        // Dataset-implied dims must not conflict with explicit overrides.
        if let Some(size) = o.image_size {
            if size != height || size != width {
                return Err(CliError::Config(format!(
                    "--image-size {size} conflicts with {dataset} images ({height}x{width})"
                )));
            }
        }
        if let Some(c) = o.image_channels {
            if c != channels {
                return Err(CliError::Config(format!(
                    "--image-channels {c} conflicts with {dataset} ({channels} channels)"
                )));
            }
        }
        if let Some(k) = o.n_output {
            if k != classes {
                return Err(CliError::Config(format!(
                    "--n-output {k} conflicts with {dataset} ({classes} classes)"
                )));
            }
        }

        let model = MixerConfig {
            patch_size: o.patch_size.unwrap_or(DEFAULT_PATCH_SIZE),
            n_channels: o.n_channels.unwrap_or(16),
            n_hiddens: o.n_hiddens.unwrap_or(32),
            depth: o.depth.unwrap_or(DEFAULT_DEPTH),
            n_output: classes,
            in_channels: channels,
            image_h: height,
            image_w: width,
            spline_order: o.spline_order.unwrap_or(DEFAULT_SPLINE_ORDER),
            grid_size: o.grid_size.unwrap_or(DEFAULT_GRID_SIZE),
            residual: o.residual.unwrap_or(false),
            seed: o.seed.unwrap_or(42),
        };
        model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let data_dir = o
            .data_dir
            .clone()
            .or_else(|| std::env::var_os("DATA_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));

        Ok(RunConfig {
            dataset,
            model,
            epochs: o.epochs.unwrap_or(10),
            batch_size: o.batch_size.unwrap_or(32),
            lr: o.lr.unwrap_or(1e-3),
            weight_decay: o.weight_decay.unwrap_or(0.0),
            data_dir,
        })
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamParams::default()
        }
    }
}
