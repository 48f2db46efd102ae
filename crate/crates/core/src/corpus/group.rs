use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CorpusError, EntityCatalog, InteractionRecord, Result};

/// Standardized targets are clipped to `[-Z_CLIP, Z_CLIP]`.
pub const Z_CLIP: f64 = 3.0;

const DEFAULT_LOWER_IS_BETTER: [&str; 8] = ["wer", "cer", "perplexity", "loss", "fid", "mae", "mse", "rmse"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub dataset: String,
    pub task: String,
    pub metric: String,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.dataset, self.task, self.metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

/// Decides metric orientation by substring match against a list of
/// lower-is-better patterns; everything else is higher-is-better.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricRegistry {
    lower_is_better: Vec<String>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        Self::with_patterns(DEFAULT_LOWER_IS_BETTER.iter().map(|s| s.to_string()).collect())
    }
}

#[derive(Deserialize)]
struct RegistryConfig {
    #[serde(default)]
    lower_is_better: Vec<String>,
}

impl MetricRegistry {
    pub fn with_patterns(mut patterns: Vec<String>) -> Self {
        for p in &mut patterns {
            *p = super::normalize_key(p);
        }
        patterns.retain(|p| !p.is_empty());
        patterns.sort();
        patterns.dedup();
        Self { lower_is_better: patterns }
    }

    /// Parses a `lower_is_better = [...]` config; its patterns extend the
    /// built-in list.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let cfg: RegistryConfig =
            toml::from_str(text).map_err(|e| CorpusError::Format(format!("metrics config: {e}")))?;
        let mut all: Vec<String> = DEFAULT_LOWER_IS_BETTER.iter().map(|s| s.to_string()).collect();
        all.extend(cfg.lower_is_better);
        Ok(Self::with_patterns(all))
    }

    pub fn lower_is_better(&self) -> &[String] {
        &self.lower_is_better
    }

    pub fn orientation(&self, metric_key: &str) -> Orientation {
        if self.lower_is_better.iter().any(|p| metric_key.contains(p.as_str())) {
            Orientation::LowerBetter
        } else {
            Orientation::HigherBetter
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    /// Index into the corpus catalog's model list.
    pub model: usize,
    pub raw: f64,
    pub z: f64,
    /// 1-based ground-truth rank.
    pub rank: usize,
}

/// All records sharing a `(dataset, task, metric)` key. Members are stored in
/// rank order (best first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGroup {
    pub key: GroupKey,
    pub orientation: Orientation,
    pub members: Vec<GroupMember>,
}

impl EvaluationGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Orients raw values, z-scores them (population std, clipped to ±3) and
/// assigns ranks by decreasing oriented value, ties broken by model key.
///
/// `entries` are `(catalog model index, raw value)` pairs.
pub fn orient_and_zscore(
    key: GroupKey,
    entries: &[(usize, f64)],
    catalog: &EntityCatalog,
    registry: &MetricRegistry,
) -> Result<EvaluationGroup> {
    if entries.len() < 2 {
        return Err(CorpusError::GroupTooSmall(key.to_string()));
    }
    let orientation = registry.orientation(&key.metric);
    let sign = match orientation {
        Orientation::HigherBetter => 1.0,
        Orientation::LowerBetter => -1.0,
    };
    let oriented: Vec<f64> = entries.iter().map(|&(_, v)| sign * v).collect();
    let n = oriented.len() as f64;
    let all_equal = oriented.iter().all(|&v| v == oriented[0]);
    let z: Vec<f64> = if all_equal {
        vec![0.0; oriented.len()]
    } else {
        let mean = oriented.iter().sum::<f64>() / n;
        let var = oriented.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        oriented.iter().map(|v| ((v - mean) / std).clamp(-Z_CLIP, Z_CLIP)).collect()
    };

    let model_key = |i: usize| catalog.models()[entries[i].0].model_key.as_str();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        oriented[b].partial_cmp(&oriented[a]).expect("finite values").then_with(|| model_key(a).cmp(model_key(b)))
    });
    let members = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| GroupMember { model: entries[i].0, raw: entries[i].1, z: z[i], rank: pos + 1 })
        .collect();
    Ok(EvaluationGroup { key, orientation, members })
}

/// Groups records by `(dataset, task, metric)`, skipping singletons.
pub(super) fn build_groups(
    records: &[InteractionRecord],
    catalog: &EntityCatalog,
    registry: &MetricRegistry,
) -> Vec<EvaluationGroup> {
    let mut by_key: BTreeMap<GroupKey, Vec<(usize, f64)>> = BTreeMap::new();
    for r in records {
        let m = catalog.model_index(&r.model_key).expect("catalog covers every record");
        by_key.entry(r.group_key()).or_default().push((m, r.value));
    }
    by_key
        .into_iter()
        .filter(|(_, e)| e.len() >= 2)
        .map(|(k, e)| orient_and_zscore(k, &e, catalog, registry).expect("size checked"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ModelMeta;
    use proptest::prelude::*;

    fn catalog(n: usize) -> EntityCatalog {
        EntityCatalog::new((0..n).map(|i| ModelMeta::stub(&format!("m{i:02}"))).collect(), vec![])
    }

    fn key(metric: &str) -> GroupKey {
        GroupKey { dataset: "d".into(), task: "t".into(), metric: metric.into() }
    }

    #[test]
    fn two_point_group() {
        let g = orient_and_zscore(key("acc"), &[(0, 0.2), (1, 0.8)], &catalog(2), &MetricRegistry::default()).unwrap();
        assert_eq!(g.orientation, Orientation::HigherBetter);
        let by_model: Vec<(usize, usize)> = g.members.iter().map(|m| (m.model, m.rank)).collect();
        assert_eq!(by_model, vec![(1, 1), (0, 2)]);
        assert!((g.members[0].z - 1.0).abs() < 1e-12 && (g.members[1].z + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_ranks_by_key() {
        let g = orient_and_zscore(key("acc"), &[(2, 10.0), (0, 10.0), (1, 10.0)], &catalog(3), &MetricRegistry::default())
            .unwrap();
        assert!(g.members.iter().all(|m| m.z == 0.0));
        assert_eq!(g.members.iter().map(|m| m.model).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn lower_is_better_is_negated() {
        let g = orient_and_zscore(key("test_wer"), &[(0, 5.0), (1, 20.0)], &catalog(2), &MetricRegistry::default())
            .unwrap();
        assert_eq!(g.orientation, Orientation::LowerBetter);
        assert_eq!(g.members[0].model, 0);
        assert_eq!(g.members[0].z, 1.0);
        assert_eq!(g.members[0].rank, 1);
    }

    #[test]
    fn singleton_rejected() {
        let e = orient_and_zscore(key("acc"), &[(0, 1.0)], &catalog(1), &MetricRegistry::default());
        assert!(matches!(e, Err(CorpusError::GroupTooSmall(_))));
    }

    #[test]
    fn clipping_bounds() {
        // One outlier among many equal values has z = sqrt(n-1) before clipping.
        let mut e: Vec<(usize, f64)> = (0..20).map(|i| (i, 0.0)).collect();
        e[7].1 = 100.0;
        let g = orient_and_zscore(key("acc"), &e, &catalog(20), &MetricRegistry::default()).unwrap();
        assert_eq!(g.members[0].z, 3.0);
    }

    #[test]
    fn registry_config_extends_defaults() {
        let r = MetricRegistry::from_config_str("lower_is_better = [\"Latency\", \"bpb\"]").unwrap();
        assert_eq!(r.orientation("p50_latency_ms"), Orientation::LowerBetter);
        assert_eq!(r.orientation("val_bpb"), Orientation::LowerBetter);
        assert_eq!(r.orientation("eval_loss"), Orientation::LowerBetter);
        assert_eq!(r.orientation("accuracy"), Orientation::HigherBetter);
        assert!(MetricRegistry::from_config_str("lower_is_better = 3").is_err());
    }

    proptest! {
        #[test]
        fn ranks_are_a_permutation(values in prop::collection::vec(-1e3f64..1e3, 2..40)) {
            let e: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
            let g = orient_and_zscore(key("acc"), &e, &catalog(values.len()), &MetricRegistry::default()).unwrap();
            let mut ranks: Vec<usize> = g.members.iter().map(|m| m.rank).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=values.len()).collect::<Vec<_>>());
            prop_assert!(g.members.iter().all(|m| m.z.abs() <= 3.0));
        }

        #[test]
        fn zscore_affine_invariant(
            values in prop::collection::vec(-1e3f64..1e3, 2..30),
            a in 0.01f64..100.0,
            b in -1e3f64..1e3,
        ) {
            let e: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
            let t: Vec<(usize, f64)> = values.iter().map(|v| a * v + b).enumerate().collect();
            let cat = catalog(values.len());
            let reg = MetricRegistry::default();
            let g1 = orient_and_zscore(key("acc"), &e, &cat, &reg).unwrap();
            let g2 = orient_and_zscore(key("acc"), &t, &cat, &reg).unwrap();
            let z = |g: &EvaluationGroup| {
                let mut v: Vec<(usize, f64)> = g.members.iter().map(|m| (m.model, m.z)).collect();
                v.sort_by_key(|x| x.0);
                v
            };
            let spread = values.iter().cloned().fold(f64::MIN, f64::max) - values.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-6);
            for (x, y) in z(&g1).iter().zip(z(&g2).iter()) {
                prop_assert!((x.1 - y.1).abs() < 1e-9, "{} vs {}", x.1, y.1);
            }
        }

        #[test]
        fn standardized_before_clipping(vals in prop::collection::vec(-1.0f64..1.0, 2..10)) {
            // With n ≤ 10 no |z| can exceed sqrt(n-1) < 3, so nothing is clipped.
            let e: Vec<(usize, f64)> = vals.iter().copied().enumerate().collect();
            let g = orient_and_zscore(key("acc"), &e, &catalog(vals.len()), &MetricRegistry::default()).unwrap();
            let n = g.members.len() as f64;
            let mean = g.members.iter().map(|m| m.z).sum::<f64>() / n;
            let var = g.members.iter().map(|m| (m.z - mean).powi(2)).sum::<f64>() / n;
            prop_assume!(vals.iter().any(|&v| v != vals[0]));
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }
}
