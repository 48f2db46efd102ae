//! Scale-constrained replacement of a model pool.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Candidates, Recommender, RecommendError, Result};
use crate::corpus::{normalize_key, size_bucket};

pub const DEFAULT_BUCKET_TOLERANCE: usize = 1;
/// A replacement may be at most this many times the original's scale.
pub const SCALE_CAP: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    #[serde(rename = "model")]
    pub model_key: String,
    /// Parameter count, or active parameters for mixture-of-experts models.
    pub scale: u64,
    /// Free-form availability tag, e.g. the name of a serving catalog.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub original: String,
    pub original_scale: u64,
    pub selected: String,
    pub selected_scale: u64,
    /// No catalog model qualified, so the original was kept.
    pub kept_original: bool,
    /// Score of the selected model; absent when the original was kept and
    /// is not in the catalog.
    pub s_tilde: Option<f64>,
}

fn bucket(scale: u64) -> Result<usize> {
    size_bucket(Some(scale)).map_err(|_| RecommendError::Invalid("pool and catalog scales must be at least 1".into()))
}

/// Replaces every pool member with a top-ranked catalog model of comparable
/// scale for the described dataset.
///
/// The catalog is ranked once. Originals are processed from largest to
/// smallest scale; each takes the best-ranked unused catalog model whose
/// size bucket is within `tolerance` of its own and whose scale is at most
/// `1.1×` its own. Originals without a qualifying candidate are kept.
/// When `require_tag` is set only catalog entries with that availability
/// tag are considered. Output follows the pool order.
#[allow(clippy::too_many_arguments)]
pub fn replace_pool(
    rec: &mut Recommender,
    pool: &[PoolEntry],
    description: &str,
    task: &str,
    metric: &str,
    catalog: &[PoolEntry],
    tolerance: usize,
    require_tag: Option<&str>,
) -> Result<Vec<Replacement>> {
    if pool.is_empty() {
        return Err(RecommendError::Invalid("the pool is empty".into()));
    }
    let catalog: Vec<PoolEntry> = catalog
        .iter()
        .filter(|e| require_tag.is_none() || e.availability.as_deref() == require_tag)
        .map(|e| PoolEntry { model_key: normalize_key(&e.model_key), ..e.clone() })
        .collect();
    if catalog.is_empty() {
        return Err(RecommendError::EmptyCandidates);
    }
    let scale_of: HashMap<&str, u64> = catalog.iter().map(|e| (e.model_key.as_str(), e.scale)).collect();
    let keys: Vec<String> = catalog.iter().map(|e| e.model_key.clone()).collect();
    let ranked = rec.recommend_top_k(description, task, metric, &Candidates { keys: Some(keys), extra: vec![] }, catalog.len())?;

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[b].scale.cmp(&pool[a].scale).then_with(|| pool[a].model_key.cmp(&pool[b].model_key)));
    let mut used: HashSet<String> = HashSet::new();
    let mut out: Vec<Option<Replacement>> = vec![None; pool.len()];
    for i in order {
        let orig = &pool[i];
        let ob = bucket(orig.scale)?;
        let cap = orig.scale as f64 * SCALE_CAP;
        let mut pick = None;
        for r in &ranked {
            let s = scale_of[r.model_key.as_str()];
            if used.contains(&r.model_key) || s as f64 > cap || bucket(s)?.abs_diff(ob) > tolerance {
                continue;
            }
            pick = Some((r, s));
            break;
        }
        let key = normalize_key(&orig.model_key);
        out[i] = Some(match pick {
            Some((r, s)) => {
                used.insert(r.model_key.clone());
                Replacement {
                    original: key,
                    original_scale: orig.scale,
                    selected: r.model_key.clone(),
                    selected_scale: s,
                    kept_original: false,
                    s_tilde: Some(r.s_tilde),
                }
            }
            None => {
                used.insert(key.clone());
                let s_tilde = ranked.iter().find(|r| r.model_key == key).map(|r| r.s_tilde);
                Replacement {
                    original: key.clone(),
                    original_scale: orig.scale,
                    selected: key,
                    selected_scale: orig.scale,
                    kept_original: true,
                    s_tilde,
                }
            }
        });
    }
    Ok(out.into_iter().map(|r| r.expect("every slot processed")).collect())
}
