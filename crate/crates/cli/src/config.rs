//! Experiment configuration file (JSON).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stockcast_core::pipeline::{DEFAULT_TRAIN_FRACTION, SWEEP_SEQ_LENS};
use stockcast_core::trainer::DEFAULT_SEED;
use stockcast_core::xai::XaiOptions;
use stockcast_core::{default_config, ModelKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub symbol: String,
    pub path: PathBuf,
}

/// Partial [`TrainConfig`]; unset fields keep the model's defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

impl TrainOverride {
    pub fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.seq_len {
            c.seq_len = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        c
    }
}

fn all_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_sweep() -> Vec<usize> {
    SWEEP_SEQ_LENS.to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_train_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub inputs: Vec<InputSpec>,
    #[serde(default = "all_models")]
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub overrides: BTreeMap<ModelKind, TrainOverride>,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seeds training and every attribution method.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub xai: XaiOptions,
    #[serde(default)]
    pub plots: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).context("malformed experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for input in &mut cfg.inputs {
            if input.path.is_relative() {
                input.path = base.join(&input.path);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            bail!("config lists no inputs");
        }
        if self.models.is_empty() {
            bail!("config lists no models");
        }
        let mut seen = BTreeSet::new();
        for input in &self.inputs {
            if input.symbol.is_empty() || input.symbol.contains(['/', '\\']) || input.symbol.starts_with('.') {
                bail!("symbol `{}` cannot be used as a directory name", input.symbol);
            }
            if !seen.insert(&input.symbol) {
                bail!("symbol `{}` listed twice", input.symbol);
            }
        }
        if self.models.iter().collect::<BTreeSet<_>>().len() != self.models.len() {
            bail!("model listed twice");
        }
        if self.sweep.contains(&0) {
            bail!("sweep contains a zero sequence length");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction must lie in (0, 1), got {}", self.train_fraction);
        }
        for kind in &self.models {
            self.train_config(*kind)
                .validate()
                .with_context(|| format!("training config for {kind}"))?;
        }
        Ok(())
    }

    /// Defaults for `kind`, then overrides, then the experiment seed.
    pub fn train_config(&self, kind: ModelKind) -> TrainConfig {
        let base = default_config(kind);
        let mut c = self.overrides.get(&kind).map_or(base, |o| o.apply(base));
        c.seed = self.seed;
        c
    }

    /// Attribution options seeded from the experiment seed.
    pub fn xai_options(&self) -> XaiOptions {
        let mut x = self.xai;
        x.seed = self.seed;
        x.lime.seed = self.seed;
        x
    }
}
