//! Multi-objective training of the scorer and checkpoint persistence.

mod batch;
mod checkpoint;
mod loss;
mod trainer;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedError, EmbedderConfig};
use crate::eval::EvalError;
use crate::numerics::NumericsError;
use crate::scorer::{ScorerConfig, ScorerError};

pub use batch::{batch_loss, prepare_groups, Batch, TrainGroup};
pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION};
pub use loss::{bpr_loss, plackett_luce_loss, pointwise_loss, sample_pairs, total_loss, LossWeights};
pub use trainer::{build_bank, train, EpochLog, RngStreams};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the training split has no evaluation group with at least two models")]
    NoTrainGroups,
    #[error("non-finite {what} at epoch {epoch}, step {step}; batch groups: {batch_keys:?}; parameter norms: {param_norms:?}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
        batch_keys: Vec<String>,
        param_norms: Vec<(String, f64)>,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

impl TrainError {
    /// True when training diverged to NaN or infinity.
    pub fn is_numeric(&self) -> bool {
        let nonfinite = |e: &NumericsError| matches!(e, NumericsError::NonFinite { .. });
        match self {
            TrainError::NonFinite { .. } => true,
            TrainError::Numerics(e) | TrainError::Scorer(ScorerError::Numerics(e)) => nonfinite(e),
            TrainError::Eval(EvalError::Scorer(ScorerError::Numerics(e))) => nonfinite(e),
            _ => false,
        }
    }
}

/// Training hyperparameters. Every field has a default, so a config file
/// only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_list: f64,
    pub lambda_pair: f64,
    pub lambda_point: f64,
    /// Groups per listwise batch.
    pub batch_lists: usize,
    /// Pairs per pairwise batch.
    pub batch_pairs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub p_model_dropout: f64,
    pub p_dataset_dropout: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Listwise groups longer than this keep only their best members.
    pub max_list_len: usize,
    /// Keep AdamW moments in the checkpoint.
    pub save_optimizer: bool,
    pub scorer: ScorerConfig,
    pub embedder: EmbedderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_list: 0.5,
            lambda_pair: 1.0,
            lambda_point: 0.1,
            batch_lists: 8,
            batch_pairs: 1024,
            lr: 1e-3,
            weight_decay: 1e-4,
            clip_norm: 5.0,
            patience: 20,
            p_model_dropout: 0.1,
            p_dataset_dropout: 0.1,
            max_epochs: 200,
            seed: 0,
            max_list_len: 512,
            save_optimizer: false,
            scorer: ScorerConfig::default(),
            embedder: EmbedderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { list: self.lambda_list, pair: self.lambda_pair, point: self.lambda_point }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [("lambda_list", self.lambda_list), ("lambda_pair", self.lambda_pair), ("lambda_point", self.lambda_point)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.batch_lists == 0 || self.batch_pairs == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        for (name, p) in [
            ("p_model_dropout", self.p_model_dropout),
            ("p_dataset_dropout", self.p_dataset_dropout),
            ("scorer.dropout", self.scorer.dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) {
            return bad("lr and clip_norm must be positive, weight_decay non-negative".into());
        }
        if self.max_list_len < 2 {
            return bad("max_list_len must be at least 2".into());
        }
        if self.embedder.dim() != self.scorer.dims.desc {
            return bad(format!(
                "embedder produces {} dimensions but the scorer expects {}",
                self.embedder.dim(),
                self.scorer.dims.desc
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
