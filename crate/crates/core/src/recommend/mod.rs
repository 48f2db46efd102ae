//! Inference-time services on a trained checkpoint: cold-start ranking,
//! pool replacement, prior probing and empirical advantage analysis.

mod advantage;
mod pool;
mod probe;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_key, Corpus, ModelMeta};
use crate::embed::{fnv1a64, DescriptionEmbedder, EmbedError, FeatureBank, ItemRef};
use crate::eval::{EvalError, RankingReport};
use crate::scorer::{Scorer, ScorerError};
use crate::train::{Checkpoint, TrainError};

pub use advantage::{standardized_advantage, AdvantageBin, Grouping, DEFAULT_MIN_MODELS};
pub use pool::{replace_pool, PoolEntry, Replacement, DEFAULT_BUCKET_TOLERANCE, SCALE_CAP};
pub use probe::{probe_prior, spearman, PriorBin, PriorProbeReport};

#[derive(Debug, thiserror::Error)]
pub enum RecommendError {
    #[error("no candidates to rank")]
    EmptyCandidates,
    #[error("unknown model '{0}'; supply its metadata as a cold candidate")]
    UnknownModel(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, RecommendError>;

/// One ranked candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub model_key: String,
    pub s_tilde: f64,
    pub z_hat: f64,
    /// Temperature-free score `s_residual + s_prior`; orders the ranking so
    /// that rescaling τ can never reorder candidates through rounding.
    #[serde(skip)]
    pub raw: f64,
}

/// Which models to rank.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Candidates {
    /// Restrict the known catalog to these keys; `None` means every model
    /// the recommender knows.
    pub keys: Option<Vec<String>>,
    /// Additional models described only by metadata (scored cold unless the
    /// checkpoint has trained on them).
    pub extra: Vec<ModelMeta>,
}

/// A checkpoint loaded for inference, with features for every known model.
pub struct Recommender {
    scorer: Scorer<f32>,
    bank: FeatureBank,
    embedder: Box<dyn DescriptionEmbedder>,
    /// Known model keys, sorted.
    models: Vec<String>,
}

impl Recommender {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        let embedder = ckpt.config.embedder.build()?;
        Self::with_embedder(ckpt, embedder)
    }

    pub fn with_embedder(ckpt: &Checkpoint, embedder: Box<dyn DescriptionEmbedder>) -> Result<Self> {
        let bank = ckpt.feature_bank(embedder.as_ref())?;
        let mut models: Vec<String> = ckpt.models.iter().map(|m| m.model_key.clone()).collect();
        models.sort();
        Ok(Self { scorer: ckpt.scorer()?, bank, embedder, models })
    }

    pub fn scorer(&self) -> &Scorer<f32> {
        &self.scorer
    }

    pub fn bank(&self) -> &FeatureBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut FeatureBank {
        &mut self.bank
    }

    pub fn embedder(&self) -> &dyn DescriptionEmbedder {
        self.embedder.as_ref()
    }

    /// Keys of every model that can be ranked without extra metadata.
    pub fn model_keys(&self) -> &[String] {
        &self.models
    }

    /// Registers models; ones the checkpoint never trained on score cold.
    pub fn add_models(&mut self, metas: &[ModelMeta]) -> Result<()> {
        for m in metas {
            self.bank.add_model(m, &self.scorer.vocab, &self.scorer.config.dims, self.embedder.as_ref())?;
            if let Err(pos) = self.models.binary_search(&m.model_key) {
                self.models.insert(pos, m.model_key.clone());
            }
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.scorer.tau() as f64
    }

    pub fn set_tau(&mut self, tau: f64) {
        self.scorer.set_tau(tau as f32);
    }

    fn resolve(&mut self, candidates: &Candidates) -> Result<Vec<usize>> {
        self.add_models(&candidates.extra)?;
        let mut keys: Vec<String> = match &candidates.keys {
            Some(k) => k.iter().map(|k| normalize_key(k)).collect(),
            None => self.models.clone(),
        };
        if candidates.keys.is_some() {
            keys.extend(candidates.extra.iter().map(|m| m.model_key.clone()));
        }
        keys.sort();
        keys.dedup();
        keys.iter()
            .map(|k| self.bank.model_index(k).ok_or_else(|| RecommendError::UnknownModel(k.clone())))
            .collect()
    }

    /// Scores `candidates` (bank model indices) for a dataset known only by
    /// its description. Returned in input order.
    pub fn score_cold(&mut self, description: &str, task: &str, metric: &str, candidates: &[usize]) -> Result<Vec<Recommendation>> {
        if candidates.is_empty() {
            return Err(RecommendError::EmptyCandidates);
        }
        let key = format!("query:{:016x}", fnv1a64(description.as_bytes()));
        let dataset = self.bank.add_cold_dataset(&key, description, self.embedder.as_ref())?;
        let vocab = &self.scorer.vocab;
        let task = vocab.tasks.index_or_unk(&normalize_key(task));
        let metric = vocab.metrics.index_or_unk(&normalize_key(metric));
        let items: Vec<ItemRef> = candidates.iter().map(|&model| ItemRef { model, dataset, task, metric }).collect();
        let scores = self.scorer.score_items(&self.bank, &items)?;
        Ok(candidates
            .iter()
            .zip(scores)
            .map(|(&m, s)| Recommendation {
                model_key: self.bank.model(m).key.clone(),
                s_tilde: s.s_tilde,
                z_hat: s.z_hat,
                raw: s.s_residual + s.s_prior,
            })
            .collect())
    }

    /// Scores and evaluates every group of `corpus`. Entities the checkpoint
    /// never trained on are scored through their metadata.
    pub fn evaluate_corpus(&mut self, corpus: &Corpus, ks: &[usize]) -> Result<RankingReport> {
        let cat = corpus.catalog();
        let (vocab, dims) = (&self.scorer.vocab, &self.scorer.config.dims);
        self.bank.add_all(cat.models(), cat.datasets(), vocab, dims, self.embedder.as_ref())?;
        Ok(crate::eval::evaluate(&self.scorer, &self.bank, cat, corpus.groups(), ks)?)
    }

    /// Ranks candidates for a new dataset described by `description`.
    /// Sorted by `s̃` descending, ties by key; at most `k` entries.
    pub fn recommend_top_k(
        &mut self,
        description: &str,
        task: &str,
        metric: &str,
        candidates: &Candidates,
        k: usize,
    ) -> Result<Vec<Recommendation>> {
        if k == 0 {
            return Err(RecommendError::Invalid("K must be at least 1".into()));
        }
        let idx = self.resolve(candidates)?;
        let mut ranked = self.score_cold(description, task, metric, &idx)?;
        sort_ranked(&mut ranked);
        ranked.truncate(k);
        Ok(ranked)
    }
}

/// Sorts by score descending, ties by key. `s_tilde` is a monotone rescale
/// of `raw`, so ordering by `raw` agrees with it wherever it is not tied.
pub fn sort_ranked(r: &mut [Recommendation]) {
    r.sort_by(|a, b| {
        let by = |x: f64, y: f64| y.partial_cmp(&x).unwrap_or(Ordering::Equal);
        by(a.s_tilde, b.s_tilde).then_with(|| by(a.raw, b.raw)).then_with(|| a.model_key.cmp(&b.model_key))
    });
}
