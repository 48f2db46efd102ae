//! Synthetic model ecosystem with planted structure.
//!
//! Latent quality of model `m` on dataset `d` is
//! `q = α·log10(params_m) + A[fam_m, task_d] + b_d + ε`. Observed metric
//! values are monotone transforms of `q`, and the corpus is produced by
//! serializing to JSONL and running the regular ingestion path.
//!
//! By default the task cluster is latent: every record carries the task key
//! [`HIDDEN_TASK`], so a dataset's cluster can only be learned from its
//! identity or read from its description.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{ingest, Corpus, CorpusError, DatasetMeta, EntityCatalog, EvaluationGroup, GroupKey, InteractionRecord, MetricRegistry, ModelMeta, SourceTier};
use crate::eval::weighted_kendall_tau;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Vocabulary that each task cluster's descriptions draw from.
const CLUSTERS: [(&str, [&str; 6]); 5] = [
    ("text", ["text", "sentence", "language", "document", "reading", "paragraph"]),
    ("vision", ["image", "pixel", "visual", "photo", "object", "scene"]),
    ("speech", ["audio", "speech", "spoken", "acoustic", "recording", "utterance"]),
    ("code", ["code", "program", "function", "software", "syntax", "compiler"]),
    ("tabular", ["table", "column", "feature", "row", "spreadsheet", "record"]),
];

const FILLER: [&str; 8] = ["benchmark", "evaluation", "collection", "suite", "curated", "challenging", "diverse", "public"];

/// How a metric's observed value relates to latent quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Identity,
    Logistic,
    /// Negated; lower is better.
    Negated,
}

impl MetricKind {
    fn apply(self, q: f64) -> f64 {
        match self {
            Self::Identity => q,
            Self::Logistic => 1.0 / (1.0 + (-q).exp()),
            Self::Negated => 10.0 - q,
        }
    }
}

/// The metric key and kind of the `k`-th metric of every dataset.
pub fn metric_spec(k: usize) -> (String, MetricKind) {
    match k {
        0 => ("score".into(), MetricKind::Identity),
        1 => ("accuracy".into(), MetricKind::Logistic),
        2 => ("loss".into(), MetricKind::Negated),
        _ => (format!("score_{k}"), MetricKind::Identity),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_models: usize,
    pub n_datasets: usize,
    pub n_tasks: usize,
    pub n_families: usize,
    pub n_metrics_per_dataset: usize,
    /// Quality gained per decade of parameters.
    pub alpha: f64,
    /// Std of the family × task affinity entries.
    pub sigma_a: f64,
    /// Std of the per-dataset offsets.
    pub sigma_b: f64,
    /// Std of per-record noise.
    pub sigma_eps: f64,
    /// Probability that a (model, dataset, metric) record is observed.
    pub rho_obs: f64,
    /// Record the task cluster as each record's task key instead of
    /// [`HIDDEN_TASK`].
    pub reveal_task: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_models: 500,
            n_datasets: 60,
            n_tasks: 3,
            n_families: 8,
            n_metrics_per_dataset: 3,
            alpha: 0.4,
            sigma_a: 0.8,
            sigma_b: 0.5,
            sigma_eps: 0.3,
            rho_obs: 0.4,
            reveal_task: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.n_models, self.n_datasets, self.n_tasks, self.n_families, self.n_metrics_per_dataset].contains(&0) {
            return Err(SynthError::Config("all counts must be at least 1".into()));
        }
        if !(self.rho_obs > 0.0 && self.rho_obs <= 1.0) {
            return Err(SynthError::Config(format!("rho_obs must be in (0, 1], got {}", self.rho_obs)));
        }
        for (name, v) in [("sigma_a", self.sigma_a), ("sigma_b", self.sigma_b), ("sigma_eps", self.sigma_eps)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SynthError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !self.alpha.is_finite() {
            return Err(SynthError::Config("alpha must be finite".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| SynthError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// Task key of every record when the cluster is latent.
pub const HIDDEN_TASK: &str = "general";

/// Name of task cluster `t`.
pub fn cluster_name(t: usize) -> String {
    CLUSTERS.get(t).map_or_else(|| format!("cluster{t}"), |c| c.0.to_string())
}

fn cluster_words(t: usize) -> Vec<String> {
    match CLUSTERS.get(t) {
        Some((_, words)) => words.iter().map(|w| w.to_string()).collect(),
        None => (0..6).map(|i| format!("cluster{t}word{i}")).collect(),
    }
}

/// A templated dataset description for task cluster `t`.
pub fn describe_dataset<R: Rng + ?Sized>(t: usize, rng: &mut R) -> String {
    let words = cluster_words(t);
    let mut picked: Vec<String> = (0..4).map(|_| words[rng.random_range(0..words.len())].clone()).collect();
    picked.dedup();
    let filler = FILLER[rng.random_range(0..FILLER.len())];
    format!("A {filler} {} dataset of {} data, with {} examples.", cluster_name(t), picked.join(" and "), words[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub key: String,
    pub params: u64,
    pub family: usize,
    /// Task cluster with the family's highest affinity.
    pub specialty: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDataset {
    pub key: String,
    pub task: usize,
    pub offset: f64,
}

/// Everything needed to recompute noise-free quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub config: SynthConfig,
    pub models: Vec<PlantedModel>,
    pub datasets: Vec<PlantedDataset>,
    /// `affinity[family][task]`.
    pub affinity: Vec<Vec<f64>>,
    pub metrics: Vec<(String, MetricKind)>,
}

impl PlantedTruth {
    fn model_index(&self) -> HashMap<&str, usize> {
        self.models.iter().enumerate().map(|(i, m)| (m.key.as_str(), i)).collect()
    }

    /// Noise-free quality of a model on a dataset (including the offset).
    pub fn quality(&self, model: usize, dataset: usize) -> f64 {
        let m = &self.models[model];
        let d = &self.datasets[dataset];
        self.config.alpha * (m.params as f64).log10() + self.affinity[m.family][d.task] + d.offset
    }

    /// Quality on an arbitrary task cluster, without a dataset offset.
    pub fn task_quality(&self, model: usize, task: usize) -> f64 {
        let m = &self.models[model];
        self.config.alpha * (m.params as f64).log10() + self.affinity[m.family][task]
    }

    /// Orders `model_keys` by noise-free quality on `dataset_key`, best
    /// first, ties broken by key.
    pub fn oracle_order(&self, dataset_key: &str, model_keys: &[String]) -> Result<Vec<String>> {
        let d = self
            .datasets
            .iter()
            .position(|d| d.key == dataset_key)
            .ok_or_else(|| SynthError::UnknownGroup(dataset_key.to_string()))?;
        let idx = self.model_index();
        let mut scored = model_keys
            .iter()
            .map(|k| {
                let m = *idx.get(k.as_str()).ok_or_else(|| SynthError::UnknownGroup(format!("model {k}")))?;
                Ok((self.quality(m, d), k.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        Ok(scored.into_iter().map(|(_, k)| k).collect())
    }

    /// Noise-free ordering of the members of group `key` in `corpus`.
    pub fn oracle_rank(&self, corpus: &Corpus, key: &GroupKey) -> Result<Vec<String>> {
        let g = corpus.group(key).ok_or_else(|| SynthError::UnknownGroup(key.to_string()))?;
        let keys: Vec<String> = g.members.iter().map(|m| corpus.catalog().models()[m.model].model_key.clone()).collect();
        self.oracle_order(&key.dataset, &keys)
    }

    /// `1/M`-weighted mean τ_w of the observed rankings against the oracle
    /// rankings over `groups`: how well a perfect scorer of latent quality
    /// can agree with the noisy observations.
    pub fn noise_ceiling(&self, catalog: &EntityCatalog, groups: &[EvaluationGroup]) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for g in groups {
            let keys: Vec<String> = g.members.iter().map(|m| catalog.models()[m.model].model_key.clone()).collect();
            let oracle = self.oracle_order(&g.key.dataset, &keys)?;
            let pos: HashMap<&str, usize> = oracle.iter().enumerate().map(|(i, k)| (k.as_str(), i + 1)).collect();
            let truth: Vec<usize> = keys.iter().map(|k| pos[k.as_str()]).collect();
            let pred: Vec<f64> = g.members.iter().map(|m| m.z).collect();
            let tau = weighted_kendall_tau(&pred, &truth).expect("groups have at least two members");
            let w = 1.0 / g.len() as f64;
            num += w * tau;
            den += w;
        }
        Ok(if den > 0.0 { num / den } else { 0.0 })
    }
}

/// Raw generated tables before ingestion.
#[derive(Debug, Clone)]
pub struct SynthTables {
    pub records: Vec<InteractionRecord>,
    pub models: Vec<ModelMeta>,
    pub datasets: Vec<DatasetMeta>,
    pub truth: PlantedTruth,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite non-negative std")
}

/// Draws the planted parameters and observed records.
pub fn generate_tables(config: &SynthConfig) -> Result<SynthTables> {
    config.validate()?;
    let c = config;
    let mut arng = stream(c.seed, 1);
    let affinity: Vec<Vec<f64>> =
        (0..c.n_families).map(|_| (0..c.n_tasks).map(|_| normal(c.sigma_a).sample(&mut arng)).collect()).collect();
    let specialty = |f: usize| (0..c.n_tasks).max_by(|&a, &b| affinity[f][a].total_cmp(&affinity[f][b]).then(b.cmp(&a))).unwrap_or(0);

    let mut mrng = stream(c.seed, 0);
    let width = c.n_models.to_string().len();
    let mut models = Vec::with_capacity(c.n_models);
    let mut planted_models = Vec::with_capacity(c.n_models);
    for i in 0..c.n_models {
        let log_p: f64 = mrng.random_range(7.0..11.0);
        let params = 10f64.powf(log_p).round() as u64;
        let family = mrng.random_range(0..c.n_families);
        let spec = specialty(family);
        let key = format!("fam{family}-m{i:0width$}");
        let billions = params as f64 / 1e9;
        let words = cluster_words(spec);
        models.push(ModelMeta {
            model_key: key.clone(),
            display_name: format!("fam{family}-m{i}-{billions:.2}b"),
            description: format!(
                "A fam{family} family model with {billions:.2} billion parameters, tuned for {} tasks such as {} and {}.",
                cluster_name(spec),
                words[1],
                words[2]
            ),
            param_count: Some(params),
            family_key: Some(format!("fam{family}")),
        });
        planted_models.push(PlantedModel { key, params, family, specialty: spec });
    }

    let mut drng = stream(c.seed, 2);
    let mut datasets = Vec::with_capacity(c.n_datasets);
    let mut planted_datasets = Vec::with_capacity(c.n_datasets);
    for d in 0..c.n_datasets {
        let task = drng.random_range(0..c.n_tasks);
        let offset = normal(c.sigma_b).sample(&mut drng);
        let key = format!("ds{d:03}");
        datasets.push(DatasetMeta {
            dataset_key: key.clone(),
            display_name: format!("Dataset {d}"),
            description: describe_dataset(task, &mut drng),
        });
        planted_datasets.push(PlantedDataset { key, task, offset });
    }

    let metrics: Vec<(String, MetricKind)> = (0..c.n_metrics_per_dataset).map(metric_spec).collect();
    let truth = PlantedTruth { config: c.clone(), models: planted_models, datasets: planted_datasets, affinity, metrics };

    let eps = normal(c.sigma_eps);
    let task_key = |t: usize| if c.reveal_task { cluster_name(t) } else { HIDDEN_TASK.to_string() };
    let mut records = Vec::new();
    for (d, pd) in truth.datasets.iter().enumerate() {
        let mut rng = stream(c.seed, 100 + d as u64);
        for (m, pm) in truth.models.iter().enumerate() {
            let q = truth.quality(m, d);
            for (metric, kind) in &truth.metrics {
                // Both draws happen for every cell so the noise does not
                // depend on which cells are observed.
                let keep = rng.random::<f64>() < c.rho_obs;
                let noise = eps.sample(&mut rng);
                if keep {
                    records.push(InteractionRecord {
                        model_key: pm.key.clone(),
                        dataset_key: pd.key.clone(),
                        task_key: task_key(pd.task),
                        metric_key: metric.clone(),
                        value: kind.apply(q + noise),
                        source_tier: SourceTier::Leaderboard,
                    });
                }
            }
        }
    }
    Ok(SynthTables { records, models, datasets, truth })
}

impl SynthTables {
    pub fn write_jsonl<W1: Write, W2: Write, W3: Write>(&self, mut records: W1, mut models: W2, mut datasets: W3) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(records, "{}", serde_json::to_string(r)?)?;
        }
        for m in &self.models {
            writeln!(models, "{}", serde_json::to_string(m)?)?;
        }
        for d in &self.datasets {
            writeln!(datasets, "{}", serde_json::to_string(d)?)?;
        }
        Ok(())
    }

    /// Writes `records.jsonl`, `models.jsonl`, `datasets.jsonl` and
    /// `planted_truth.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let open = |name: &str| fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
        self.write_jsonl(open("records.jsonl")?, open("models.jsonl")?, open("datasets.jsonl")?)?;
        fs::write(dir.join("planted_truth.json"), serde_json::to_string_pretty(&self.truth).expect("truth serializes"))?;
        Ok(())
    }
}

/// Generates a corpus through the standard JSONL ingestion path.
pub fn generate(config: &SynthConfig) -> Result<(Corpus, PlantedTruth)> {
    let tables = generate_tables(config)?;
    let (mut r, mut m, mut d) = (Vec::new(), Vec::new(), Vec::new());
    tables.write_jsonl(&mut r, &mut m, &mut d)?;
    let (corpus, report) = ingest(&r[..], &m[..], &d[..], MetricRegistry::default())?;
    debug_assert!(report.errors.is_empty());
    Ok((corpus, tables.truth))
}

#[cfg(test)]
mod tests;
