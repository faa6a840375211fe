//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use feh_core::catalog::{ColumnMap, SelectionCriteria, SplitSpec};
use feh_core::grid::GridSpec;
use feh_core::preprocess::{PreprocessConfig, Variant};
use feh_core::train::TrainConfig;
use feh_core::weighting::WeightConfig;
use feh_nn::zoo::{self, ZooParams};
use feh_nn::{ModelKind, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const OUTPUT_ENV: &str = "FEH_FORGE_OUTPUT";
pub const DEFAULT_OUTPUT: &str = "feh-forge-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub catalog: Option<PathBuf>,
    pub photometry: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Snapshot read by `predict`.
    pub snapshot: Option<PathBuf>,
    /// Container read by `predict`.
    pub input: Option<PathBuf>,
    /// Model spec a snapshot must match in `predict`.
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSize {
    #[default]
    Standard,
    Tiny,
}

impl std::str::FromStr for ModelSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(ModelSize::Standard),
            "tiny" => Ok(ModelSize::Tiny),
            _ => Err(format!("unknown model size '{s}' (expected standard or tiny)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream: split, folds, initialisation, shuffling, dropout.
    pub seed: u64,
    /// A model name or `all`.
    pub model: String,
    /// A variant name or `all`.
    pub variant: String,
    pub model_size: ModelSize,
    pub paths: Paths,
    pub columns: ColumnMap,
    pub selection: SelectionCriteria,
    pub split: SplitSpec,
    pub preprocess: PreprocessConfig,
    pub weights: WeightConfig,
    pub train: TrainConfig,
    pub grid: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            model: "GRU".into(),
            variant: "full".into(),
            model_size: ModelSize::Standard,
            paths: Paths::default(),
            columns: ColumnMap::default(),
            selection: SelectionCriteria::default(),
            split: SplitSpec::default(),
            preprocess: PreprocessConfig::default(),
            weights: WeightConfig::default(),
            train: TrainConfig::default(),
            grid: GridSpec::default(),
        }
    }
}

/// Values given on the command line; each one replaces its file setting.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Catalog file (CSV, or TSV by extension).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Photometry file with source_id, time_bjd, mag_g columns.
    #[arg(long)]
    pub photometry: Option<PathBuf>,
    /// Output directory; falls back to the config file, then $FEH_FORGE_OUTPUT.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Model name (FCN, ResNet, InceptionTime, LSTM, BiLSTM, GRU, BiGRU, ConvLSTM, ConvGRU) or all.
    #[arg(long)]
    pub model: Option<String>,
    /// Dataset variant (raw_padded, spline_no_mean, full) or all.
    #[arg(long)]
    pub variant: Option<String>,
    /// Layer widths: standard or tiny.
    #[arg(long)]
    pub model_size: Option<ModelSize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Snapshot to load in predict.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Dataset container to predict on.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Model spec (TOML) the snapshot must match.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Reads `path` when given, applies `flags`, fills the output directory
    /// from `env_output` when neither names one, and checks the result.
    pub fn resolve(path: Option<&Path>, flags: &Overrides, env_output: Option<PathBuf>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(CliError::MissingInput(p.to_path_buf()));
                }
                let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply(flags);
        if cfg.paths.output.is_none() {
            cfg.paths.output = Some(env_output.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)));
        }
        cfg.split.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.models()?;
        cfg.variants()?;
        cfg.train.validate()?;
        cfg.grid.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, f: &Overrides) {
        let p = &mut self.paths;
        for (slot, v) in [
            (&mut p.catalog, &f.catalog),
            (&mut p.photometry, &f.photometry),
            (&mut p.output, &f.output),
            (&mut p.snapshot, &f.snapshot),
            (&mut p.input, &f.input),
            (&mut p.spec, &f.spec),
        ] {
            if v.is_some() {
                *slot = v.clone();
            }
        }
        if let Some(v) = &f.model {
            self.model = v.clone();
        }
        if let Some(v) = &f.variant {
            self.variant = v.clone();
        }
        if let Some(v) = f.model_size {
            self.model_size = v;
        }
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if f.threads.is_some() {
            self.train.threads = f.threads;
        }
        let t = &mut self.train;
        if let Some(v) = f.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = f.patience {
            t.patience = v;
        }
        if let Some(v) = f.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = f.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = f.folds {
            t.folds = v;
        }
        if let Some(v) = f.repeats {
            t.repeats = v;
        }
    }

    pub fn output(&self) -> &Path {
        self.paths.output.as_deref().expect("resolved config has an output directory")
    }

    pub fn models(&self) -> Result<Vec<ModelKind>, CliError> {
        if self.model.eq_ignore_ascii_case("all") {
            return Ok(ModelKind::ALL.to_vec());
        }
        self.model.parse::<ModelKind>().map(|m| vec![m]).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn variants(&self) -> Result<Vec<Variant>, CliError> {
        if self.variant.eq_ignore_ascii_case("all") {
            return Ok(Variant::ALL.to_vec());
        }
        self.variant.parse::<Variant>().map(|v| vec![v]).map_err(CliError::Config)
    }

    pub fn zoo_params(&self) -> ZooParams {
        match self.model_size {
            ModelSize::Standard => ZooParams::standard(),
            ModelSize::Tiny => ZooParams::tiny(),
        }
    }

    pub fn model_spec(&self, kind: ModelKind) -> ModelSpec {
        zoo::build(kind, &self.zoo_params())
    }

    /// Required input path, checked for existence.
    pub fn input_path(&self, p: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
        match p {
            Some(p) if p.exists() => Ok(p.clone()),
            Some(p) => Err(CliError::MissingInput(p.clone())),
            None => Err(CliError::Config(format!("no {what} path configured"))),
        }
    }
}
