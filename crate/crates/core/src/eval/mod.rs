//! Ranking evaluation: per-group metrics and their aggregation.

mod metrics;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityCatalog, EvaluationGroup};
use crate::embed::{FeatureBank, ItemRef, Vocab};
use crate::numerics::Real;
use crate::scorer::{Scorer, ScorerError};

pub use metrics::{hit_at_k, ndcg_at_k, predicted_order, recall_at_k, weighted_kendall_tau};

pub const DEFAULT_KS: [usize; 4] = [1, 10, 30, 50];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("group has {0} candidates; at least 2 are needed")]
    GroupTooSmall(usize),
    #[error("prediction has {pred} entries but truth has {truth}")]
    Length { pred: usize, truth: usize },
    #[error("K = {k} is not applicable to a group of {m}")]
    IneligibleK { m: usize, k: usize },
    #[error("{kind} '{key}' has no features; add it to the feature bank first")]
    MissingFeatures { kind: &'static str, key: String },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Predictions for one group, ready to be scored against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGroup {
    pub key: String,
    pub model_keys: Vec<String>,
    /// 1-based ground-truth ranks, aligned with `model_keys`.
    pub truth: Vec<usize>,
    pub pred: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsAtK {
    pub k: usize,
    pub ndcg: f64,
    pub hit: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub m: usize,
    pub tau_w: f64,
    /// Only the K values with `K ≤ m`.
    pub at_k: Vec<MetricsAtK>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateAtK {
    pub k: usize,
    pub eligible: usize,
    pub ndcg: f64,
    pub hit: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_groups: usize,
    /// Group average of τ_w with weight `1/M`.
    pub tau_w: f64,
    /// Plain group average of τ_w.
    pub tau_w_mean: f64,
    pub at_k: Vec<AggregateAtK>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub aggregate: Aggregate,
    pub groups: Vec<GroupReport>,
}

/// Metrics of one group for every applicable K.
pub fn evaluate_group(g: &ScoredGroup, ks: &[usize]) -> Result<GroupReport> {
    let tau_w = weighted_kendall_tau(&g.pred, &g.truth)?;
    let keys: Vec<&str> = g.model_keys.iter().map(String::as_str).collect();
    let order = predicted_order(&g.pred, &keys);
    let m = g.truth.len();
    let mut at_k = Vec::new();
    for &k in ks.iter().filter(|&&k| k >= 1 && k <= m) {
        at_k.push(MetricsAtK {
            k,
            ndcg: ndcg_at_k(&order, &g.truth, k)?,
            hit: hit_at_k(&order, &g.truth, k)?,
            recall: recall_at_k(&order, &g.truth, k)?,
        });
    }
    Ok(GroupReport { group: g.key.clone(), m, tau_w, at_k })
}

/// Recomputes the aggregate block from per-group records.
pub fn aggregate(groups: &[GroupReport], ks: &[usize]) -> Aggregate {
    let (mut wsum, mut wtau, mut tsum) = (0.0, 0.0, 0.0);
    for g in groups {
        let w = 1.0 / g.m as f64;
        wsum += w;
        wtau += w * g.tau_w;
        tsum += g.tau_w;
    }
    let n = groups.len();
    let mut at_k = Vec::new();
    let mut notes = Vec::new();
    for &k in ks {
        let rows: Vec<&MetricsAtK> = groups.iter().filter_map(|g| g.at_k.iter().find(|r| r.k == k)).collect();
        if rows.is_empty() {
            notes.push(format!("K={k} omitted: no group has at least {k} candidates"));
            continue;
        }
        let c = rows.len() as f64;
        at_k.push(AggregateAtK {
            k,
            eligible: rows.len(),
            ndcg: rows.iter().map(|r| r.ndcg).sum::<f64>() / c,
            hit: rows.iter().map(|r| r.hit).sum::<f64>() / c,
            recall: rows.iter().map(|r| r.recall).sum::<f64>() / c,
        });
    }
    if n == 0 {
        notes.push("no groups evaluated".to_string());
    }
    Aggregate {
        n_groups: n,
        tau_w: if n > 0 { wtau / wsum } else { 0.0 },
        tau_w_mean: if n > 0 { tsum / n as f64 } else { 0.0 },
        at_k,
        notes,
    }
}

pub fn evaluate_scored(groups: &[ScoredGroup], ks: &[usize]) -> Result<RankingReport> {
    let reports = groups.iter().map(|g| evaluate_group(g, ks)).collect::<Result<Vec<_>>>()?;
    Ok(RankingReport { aggregate: aggregate(&reports, ks), groups: reports })
}

/// Maps a group's members to scoring items. Every model and the dataset must
/// already be in `bank`.
pub fn group_items(group: &EvaluationGroup, catalog: &EntityCatalog, bank: &FeatureBank, vocab: &Vocab) -> Result<Vec<ItemRef>> {
    let dataset = bank
        .dataset_index(&group.key.dataset)
        .ok_or_else(|| EvalError::MissingFeatures { kind: "dataset", key: group.key.dataset.clone() })?;
    let task = vocab.tasks.index_or_unk(&group.key.task);
    let metric = vocab.metrics.index_or_unk(&group.key.metric);
    group
        .members
        .iter()
        .map(|mem| {
            let key = &catalog.models()[mem.model].model_key;
            let model = bank.model_index(key).ok_or_else(|| EvalError::MissingFeatures { kind: "model", key: key.clone() })?;
            Ok(ItemRef { model, dataset, task, metric })
        })
        .collect()
}

/// Scores every group's candidates in inference mode.
pub fn score_groups<T: Real>(
    scorer: &Scorer<T>,
    bank: &FeatureBank,
    catalog: &EntityCatalog,
    groups: &[EvaluationGroup],
) -> Result<Vec<ScoredGroup>> {
    groups
        .iter()
        .map(|g| {
            let items = group_items(g, catalog, bank, &scorer.vocab)?;
            let scores = scorer.score_items(bank, &items)?;
            Ok(ScoredGroup {
                key: g.key.to_string(),
                model_keys: g.members.iter().map(|m| catalog.models()[m.model].model_key.clone()).collect(),
                truth: g.members.iter().map(|m| m.rank).collect(),
                pred: scores.iter().map(|s| s.s_tilde).collect(),
            })
        })
        .collect()
}

/// Scores and evaluates `groups`.
pub fn evaluate<T: Real>(
    scorer: &Scorer<T>,
    bank: &FeatureBank,
    catalog: &EntityCatalog,
    groups: &[EvaluationGroup],
    ks: &[usize],
) -> Result<RankingReport> {
    evaluate_scored(&score_groups(scorer, bank, catalog, groups)?, ks)
}

impl RankingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table of the aggregates.
    pub fn to_table(&self) -> String {
        let a = &self.aggregate;
        let mut s = String::new();
        let _ = writeln!(s, "groups           {}", a.n_groups);
        let _ = writeln!(s, "tau_w (1/M)      {:.4}", a.tau_w);
        let _ = writeln!(s, "tau_w (mean)     {:.4}", a.tau_w_mean);
        let _ = writeln!(s, "{:>4}  {:>8}  {:>8}  {:>8}  {:>8}", "K", "eligible", "NDCG", "Hit", "Recall");
        for r in &a.at_k {
            let _ = writeln!(s, "{:>4}  {:>8}  {:>8.4}  {:>8.4}  {:>8.4}", r.k, r.eligible, r.ndcg, r.hit, r.recall);
        }
        for n in &a.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}
