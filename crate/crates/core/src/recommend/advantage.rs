//! Empirical standardized advantage of model cohorts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{family_key, size_bucket, Corpus};

pub const DEFAULT_MIN_MODELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    SizeBucket,
    Family,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBin {
    pub bin: String,
    pub n_models: usize,
    /// Mean over the bin's models of each model's mean standardized score.
    pub advantage: f64,
}

/// Per-bin mean of `z̄_m`, where `z̄_m` is model `m`'s average z-score over
/// all groups it appears in. Bins with fewer than `min_models` models are
/// dropped. Size bins are labelled by bucket index, family bins by key
/// (`"unknown"` when no family can be derived).
pub fn standardized_advantage(corpus: &Corpus, grouping: Grouping, min_models: usize) -> Vec<AdvantageBin> {
    let mut per_model: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for g in corpus.groups() {
        for m in &g.members {
            let e = per_model.entry(m.model).or_insert((0.0, 0));
            e.0 += m.z;
            e.1 += 1;
        }
    }
    let models = corpus.catalog().models();
    let mut bins: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (&m, &(sum, n)) in &per_model {
        let meta = &models[m];
        let label = match grouping {
            Grouping::SizeBucket => {
                format!("{:02}", size_bucket(meta.param_count.filter(|&p| p > 0)).expect("positive or absent"))
            }
            Grouping::Family => family_key(meta).unwrap_or_else(|| "unknown".into()),
        };
        bins.entry(label).or_default().push(sum / n as f64);
    }
    bins.into_iter()
        .filter(|(_, v)| v.len() >= min_models)
        .map(|(bin, v)| AdvantageBin { bin, n_models: v.len(), advantage: v.iter().sum::<f64>() / v.len() as f64 })
        .collect()
}
