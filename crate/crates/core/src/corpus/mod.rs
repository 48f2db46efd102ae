//! Interaction records, entity metadata and evaluation groups.
//!
//! A [`Corpus`] is built once (by [`ingest`] or [`Corpus::from_records`]) and
//! is immutable afterwards; every derived view (groups, splits) is rebuilt
//! from its records.

mod group;
mod ingest;
mod meta;
mod split;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use group::{orient_and_zscore, EvaluationGroup, GroupKey, GroupMember, MetricRegistry, Orientation};
pub use ingest::{deduplicate, ingest, ingest_files, IngestReport, LineError};
pub use meta::{family_key, resolve_family, size_bucket, FamilyVocab, N_SIZE_BUCKETS, UNKNOWN_SIZE_BUCKET};
pub use split::{split, SplitMode, SplitSpec, Splits, DEFAULT_VAL_FRACTION};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("evaluation group {0} has fewer than 2 members")]
    GroupTooSmall(String),
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("invalid metadata: {0}")]
    InvalidMeta(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("malformed corpus file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Ingestion provenance, ordered by reliability (`Leaderboard` highest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceTier {
    #[default]
    Parsed,
    Structured,
    Leaderboard,
}

/// One observed `(model, dataset, task, metric, value)` tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    #[serde(rename = "model")]
    pub model_key: String,
    #[serde(rename = "dataset")]
    pub dataset_key: String,
    #[serde(rename = "task")]
    pub task_key: String,
    #[serde(rename = "metric")]
    pub metric_key: String,
    pub value: f64,
    #[serde(rename = "tier", default)]
    pub source_tier: SourceTier,
}

pub type RecordKey = (String, String, String, String);

impl InteractionRecord {
    pub fn key(&self) -> RecordKey {
        (self.model_key.clone(), self.dataset_key.clone(), self.task_key.clone(), self.metric_key.clone())
    }

    pub fn group_key(&self) -> GroupKey {
        GroupKey {
            dataset: self.dataset_key.clone(),
            task: self.task_key.clone(),
            metric: self.metric_key.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(rename = "key")]
    pub model_key: String,
    #[serde(rename = "name")]
    pub display_name: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "params", default, skip_serializing_if = "Option::is_none")]
    pub param_count: Option<u64>,
    #[serde(rename = "family", default, skip_serializing_if = "Option::is_none")]
    pub family_key: Option<String>,
}

impl ModelMeta {
    /// Metadata for a model known only by key.
    pub fn stub(key: &str) -> Self {
        Self {
            model_key: key.to_string(),
            display_name: key.to_string(),
            description: String::new(),
            param_count: None,
            family_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "key")]
    pub dataset_key: String,
    #[serde(rename = "name")]
    pub display_name: String,
    #[serde(default)]
    pub description: String,
}

impl DatasetMeta {
    pub fn stub(key: &str) -> Self {
        Self { dataset_key: key.to_string(), display_name: key.to_string(), description: String::new() }
    }
}

/// Model and dataset metadata, each sorted by key.
#[derive(Debug, Clone, Default)]
pub struct EntityCatalog {
    models: Vec<ModelMeta>,
    datasets: Vec<DatasetMeta>,
    model_index: HashMap<String, usize>,
    dataset_index: HashMap<String, usize>,
}

impl PartialEq for EntityCatalog {
    fn eq(&self, other: &Self) -> bool {
        self.models == other.models && self.datasets == other.datasets
    }
}

impl EntityCatalog {
    pub fn new(mut models: Vec<ModelMeta>, mut datasets: Vec<DatasetMeta>) -> Self {
        models.sort_by(|a, b| a.model_key.cmp(&b.model_key));
        models.dedup_by(|a, b| a.model_key == b.model_key);
        datasets.sort_by(|a, b| a.dataset_key.cmp(&b.dataset_key));
        datasets.dedup_by(|a, b| a.dataset_key == b.dataset_key);
        let model_index = models.iter().enumerate().map(|(i, m)| (m.model_key.clone(), i)).collect();
        let dataset_index = datasets.iter().enumerate().map(|(i, d)| (d.dataset_key.clone(), i)).collect();
        Self { models, datasets, model_index, dataset_index }
    }

    pub fn models(&self) -> &[ModelMeta] {
        &self.models
    }

    pub fn datasets(&self) -> &[DatasetMeta] {
        &self.datasets
    }

    pub fn model_index(&self, key: &str) -> Option<usize> {
        self.model_index.get(key).copied()
    }

    pub fn dataset_index(&self, key: &str) -> Option<usize> {
        self.dataset_index.get(key).copied()
    }

    pub fn model(&self, key: &str) -> Option<&ModelMeta> {
        self.model_index(key).map(|i| &self.models[i])
    }

    pub fn dataset(&self, key: &str) -> Option<&DatasetMeta> {
        self.dataset_index(key).map(|i| &self.datasets[i])
    }
}

/// Deduplicated records plus their catalog and evaluation groups.
#[derive(Debug, Clone)]
pub struct Corpus {
    catalog: EntityCatalog,
    records: Vec<InteractionRecord>,
    groups: Vec<EvaluationGroup>,
    registry: MetricRegistry,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.catalog == other.catalog && self.records == other.records && self.registry == other.registry
    }
}

const CORPUS_FORMAT: &str = "modelrec-corpus";
const CORPUS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    format: String,
    version: u32,
    lower_is_better: Vec<String>,
    models: Vec<ModelMeta>,
    datasets: Vec<DatasetMeta>,
    records: Vec<InteractionRecord>,
}

impl Corpus {
    /// Builds a corpus from already-normalized, deduplicated records.
    ///
    /// Entities referenced by records but missing from `models`/`datasets`
    /// get stub metadata; catalog entries not referenced by any record are
    /// dropped.
    pub fn from_records(
        records: Vec<InteractionRecord>,
        models: &[ModelMeta],
        datasets: &[DatasetMeta],
        registry: MetricRegistry,
    ) -> Self {
        Self::assemble(records, models, datasets, registry).0
    }

    /// Like [`Corpus::from_records`], also returning the number of stubbed
    /// models and datasets.
    pub(crate) fn assemble(
        mut records: Vec<InteractionRecord>,
        models: &[ModelMeta],
        datasets: &[DatasetMeta],
        registry: MetricRegistry,
    ) -> (Self, usize, usize) {
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        let known_m: HashMap<&str, &ModelMeta> = models.iter().map(|m| (m.model_key.as_str(), m)).collect();
        let known_d: HashMap<&str, &DatasetMeta> = datasets.iter().map(|d| (d.dataset_key.as_str(), d)).collect();
        let used_m: BTreeSet<&str> = records.iter().map(|r| r.model_key.as_str()).collect();
        let used_d: BTreeSet<&str> = records.iter().map(|r| r.dataset_key.as_str()).collect();
        let (mut stub_m, mut stub_d) = (0, 0);
        let ms = used_m
            .iter()
            .map(|k| {
                known_m.get(k).map(|m| (*m).clone()).unwrap_or_else(|| {
                    stub_m += 1;
                    ModelMeta::stub(k)
                })
            })
            .collect();
        let ds = used_d
            .iter()
            .map(|k| {
                known_d.get(k).map(|d| (*d).clone()).unwrap_or_else(|| {
                    stub_d += 1;
                    DatasetMeta::stub(k)
                })
            })
            .collect();
        let catalog = EntityCatalog::new(ms, ds);
        let groups = group::build_groups(&records, &catalog, &registry);
        (Self { catalog, records, groups, registry }, stub_m, stub_d)
    }

    pub fn empty(registry: MetricRegistry) -> Self {
        Self::from_records(Vec::new(), &[], &[], registry)
    }

    pub fn catalog(&self) -> &EntityCatalog {
        &self.catalog
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    /// Groups with at least two members, sorted by key.
    pub fn groups(&self) -> &[EvaluationGroup] {
        &self.groups
    }

    pub fn registry(&self) -> &MetricRegistry {
        &self.registry
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn group(&self, key: &GroupKey) -> Option<&EvaluationGroup> {
        self.groups.binary_search_by(|g| g.key.cmp(key)).ok().map(|i| &self.groups[i])
    }

    /// Distinct task and metric keys over all records, sorted.
    pub fn task_keys(&self) -> Vec<String> {
        let s: BTreeSet<&str> = self.records.iter().map(|r| r.task_key.as_str()).collect();
        s.into_iter().map(String::from).collect()
    }

    pub fn metric_keys(&self) -> Vec<String> {
        let s: BTreeSet<&str> = self.records.iter().map(|r| r.metric_key.as_str()).collect();
        s.into_iter().map(String::from).collect()
    }

    /// Number of groups each model appears in.
    pub fn model_group_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for g in &self.groups {
            for m in &g.members {
                *counts.entry(m.model).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn to_json(&self) -> String {
        let file = CorpusFile {
            format: CORPUS_FORMAT.into(),
            version: CORPUS_VERSION,
            lower_is_better: self.registry.lower_is_better().to_vec(),
            models: self.catalog.models.clone(),
            datasets: self.catalog.datasets.clone(),
            records: self.records.clone(),
        };
        serde_json::to_string(&file).expect("corpus serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CorpusFile = serde_json::from_str(s).map_err(|e| CorpusError::Format(e.to_string()))?;
        if file.format != CORPUS_FORMAT || file.version != CORPUS_VERSION {
            return Err(CorpusError::Format(format!("unsupported corpus {} v{}", file.format, file.version)));
        }
        let registry = MetricRegistry::with_patterns(file.lower_is_better);
        Ok(Self::from_records(file.records, &file.models, &file.datasets, registry))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes the corpus back out in the line-delimited ingestion format.
    pub fn write_jsonl<W1: Write, W2: Write, W3: Write>(
        &self,
        mut records: W1,
        mut models: W2,
        mut datasets: W3,
    ) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(records, "{}", serde_json::to_string(r)?)?;
        }
        for m in &self.catalog.models {
            writeln!(models, "{}", serde_json::to_string(m)?)?;
        }
        for d in &self.catalog.datasets {
            writeln!(datasets, "{}", serde_json::to_string(d)?)?;
        }
        Ok(())
    }
}

/// Lowercases, trims and collapses internal whitespace runs to `_`.
pub fn normalize_key(raw: &str) -> String {
    raw.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join("_")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_normalization() {
        assert_eq!(normalize_key("  Image   Classification "), "image_classification");
        assert_eq!(normalize_key("Top-1\tAcc"), "top-1_acc");
        assert_eq!(normalize_key("   "), "");
    }

    #[test]
    fn tier_priority_order() {
        assert!(SourceTier::Leaderboard > SourceTier::Structured);
        assert!(SourceTier::Structured > SourceTier::Parsed);
    }

    #[test]
    fn corpus_json_round_trip() {
        let recs = vec![
            InteractionRecord {
                model_key: "a".into(),
                dataset_key: "d".into(),
                task_key: "t".into(),
                metric_key: "acc".into(),
                value: 0.5,
                source_tier: SourceTier::Structured,
            },
            InteractionRecord {
                model_key: "b".into(),
                dataset_key: "d".into(),
                task_key: "t".into(),
                metric_key: "acc".into(),
                value: 0.7,
                source_tier: SourceTier::Parsed,
            },
        ];
        let c = Corpus::from_records(recs, &[], &[], MetricRegistry::default());
        assert_eq!(c.groups().len(), 1);
        let back = Corpus::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.groups(), c.groups());
    }
}
