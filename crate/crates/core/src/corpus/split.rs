use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_key, Corpus, CorpusError, InteractionRecord, Result};

/// Share of training-pool models moved to the validation split.
pub const DEFAULT_VAL_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    MaskEntries,
    HoldoutDatasets,
    HoldoutModels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_keys: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_val_fraction() -> f64 {
    DEFAULT_VAL_FRACTION
}

impl SplitSpec {
    pub fn fraction(mode: SplitMode, fraction: f64, seed: u64) -> Self {
        Self { mode, fraction: Some(fraction), holdout_keys: None, seed, val_fraction: DEFAULT_VAL_FRACTION }
    }

    pub fn keys(mode: SplitMode, keys: Vec<String>, seed: u64) -> Self {
        Self { mode, fraction: None, holdout_keys: Some(keys), seed, val_fraction: DEFAULT_VAL_FRACTION }
    }

    fn validate(&self) -> Result<()> {
        match (&self.fraction, &self.holdout_keys) {
            (Some(f), None) => {
                if !(*f > 0.0 && *f <= 1.0) {
                    return Err(CorpusError::InvalidSpec(format!("fraction {f} outside (0, 1]")));
                }
            }
            (None, Some(_)) => {
                if self.mode == SplitMode::MaskEntries {
                    return Err(CorpusError::InvalidSpec("mask_entries takes a fraction, not keys".into()));
                }
            }
            _ => return Err(CorpusError::InvalidSpec("exactly one of fraction / holdout_keys must be set".into())),
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(CorpusError::InvalidSpec(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Selects `round(fraction·n)` keys (at least one) or resolves explicit keys.
fn pick_keys(all: &[&str], spec: &SplitSpec, rng: &mut ChaCha8Rng, what: &str) -> Result<HashSet<String>> {
    if let Some(keys) = &spec.holdout_keys {
        let known: HashSet<&str> = all.iter().copied().collect();
        let mut out = HashSet::new();
        for k in keys {
            let k = normalize_key(k);
            if !known.contains(k.as_str()) {
                return Err(CorpusError::InvalidSpec(format!("unknown {what} key {k:?}")));
            }
            out.insert(k);
        }
        return Ok(out);
    }
    let f = spec.fraction.expect("validated");
    let n = all.len();
    let k = ((f * n as f64).round() as usize).clamp(1, n);
    Ok(sample(rng, n, k).into_iter().map(|i| all[i].to_string()).collect())
}

/// Splits a corpus into train / model-disjoint validation / test parts.
///
/// Test selection depends on the mode; afterwards `val_fraction` of the
/// models that still have training records are moved, with all their
/// training records, to validation. Every record lands in exactly one part.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let records = corpus.records();
    let catalog = corpus.catalog();

    let in_test: Vec<bool> = match spec.mode {
        SplitMode::MaskEntries => {
            let f = spec.fraction.expect("validated");
            // Records are sorted by (model, dataset, task, metric), so one
            // draw per record in order is a fixed per-member coin flip.
            records.iter().map(|_| rng.random::<f64>() < f).collect()
        }
        SplitMode::HoldoutDatasets => {
            let all: Vec<&str> = catalog.datasets().iter().map(|d| d.dataset_key.as_str()).collect();
            let held = pick_keys(&all, spec, &mut rng, "dataset")?;
            records.iter().map(|r| held.contains(&r.dataset_key)).collect()
        }
        SplitMode::HoldoutModels => {
            let all: Vec<&str> = catalog.models().iter().map(|m| m.model_key.as_str()).collect();
            let held = pick_keys(&all, spec, &mut rng, "model")?;
            records.iter().map(|r| held.contains(&r.model_key)).collect()
        }
    };

    let pool: Vec<&str> = records
        .iter()
        .zip(&in_test)
        .filter(|(_, &t)| !t)
        .map(|(r, _)| r.model_key.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_val = (spec.val_fraction * pool.len() as f64).round() as usize;
    let val_models: HashSet<&str> = if n_val == 0 || pool.len() < 2 {
        HashSet::new()
    } else {
        sample(&mut rng, pool.len(), n_val.min(pool.len() - 1)).into_iter().map(|i| pool[i]).collect()
    };

    let (mut train, mut val, mut test): (Vec<InteractionRecord>, Vec<_>, Vec<_>) = Default::default();
    for (r, &t) in records.iter().zip(&in_test) {
        if t {
            test.push(r.clone());
        } else if val_models.contains(r.model_key.as_str()) {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    let build = |recs: Vec<InteractionRecord>| {
        Corpus::from_records(recs, catalog.models(), catalog.datasets(), corpus.registry().clone())
    };
    log::info!("split: train {} / val {} / test {} records", train.len(), val.len(), test.len());
    Ok(Splits { train: build(train), val: build(val), test: build(test) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MetricRegistry, RecordKey, SourceTier};

    fn toy(n_models: usize, n_datasets: usize) -> Corpus {
        let mut recs = Vec::new();
        for m in 0..n_models {
            for d in 0..n_datasets {
                recs.push(InteractionRecord {
                    model_key: format!("m{m:03}"),
                    dataset_key: format!("d{d:02}"),
                    task_key: "t".into(),
                    metric_key: "acc".into(),
                    value: (m * 7 + d * 3) as f64 % 11.0,
                    source_tier: SourceTier::Parsed,
                });
            }
        }
        Corpus::from_records(recs, &[], &[], MetricRegistry::default())
    }

    fn keys(c: &Corpus) -> BTreeSet<RecordKey> {
        c.records().iter().map(|r| r.key()).collect()
    }

    #[test]
    fn full_dataset_holdout() {
        let c = toy(10, 4);
        let s = split(&c, &SplitSpec::fraction(SplitMode::HoldoutDatasets, 1.0, 3)).unwrap();
        assert!(s.train.is_empty() && s.val.is_empty());
        assert_eq!(keys(&s.test), keys(&c));
    }

    #[test]
    fn bad_fractions() {
        let c = toy(3, 2);
        for f in [0.0, -0.5, 1.5, f64::NAN] {
            let e = split(&c, &SplitSpec::fraction(SplitMode::MaskEntries, f, 0));
            assert!(matches!(e, Err(CorpusError::InvalidSpec(_))), "{f}");
        }
        let mut both = SplitSpec::fraction(SplitMode::HoldoutModels, 0.5, 0);
        both.holdout_keys = Some(vec!["m000".into()]);
        assert!(matches!(split(&c, &both), Err(CorpusError::InvalidSpec(_))));
        let unknown = SplitSpec::keys(SplitMode::HoldoutModels, vec!["nope".into()], 0);
        assert!(matches!(split(&c, &unknown), Err(CorpusError::InvalidSpec(_))));
    }

    #[test]
    fn empty_corpus_rejected() {
        let c = Corpus::empty(MetricRegistry::default());
        assert!(matches!(split(&c, &SplitSpec::fraction(SplitMode::MaskEntries, 0.2, 0)), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn deterministic() {
        let c = toy(40, 5);
        let spec = SplitSpec::fraction(SplitMode::MaskEntries, 0.3, 11);
        let (a, b) = (split(&c, &spec).unwrap(), split(&c, &spec).unwrap());
        assert_eq!(keys(&a.train), keys(&b.train));
        assert_eq!(keys(&a.val), keys(&b.val));
        assert_eq!(keys(&a.test), keys(&b.test));
    }

    #[test]
    fn mask_entries_partitions_records() {
        let c = toy(60, 6);
        let s = split(&c, &SplitSpec::fraction(SplitMode::MaskEntries, 0.25, 5)).unwrap();
        let (tr, va, te) = (keys(&s.train), keys(&s.val), keys(&s.test));
        assert!(tr.is_disjoint(&te) && va.is_disjoint(&te) && tr.is_disjoint(&va));
        let all: BTreeSet<_> = tr.union(&va).chain(te.iter()).cloned().collect();
        assert_eq!(all, keys(&c));
        let frac = te.len() as f64 / c.records().len() as f64;
        assert!((frac - 0.25).abs() < 0.08, "{frac}");
    }

    #[test]
    fn validation_is_model_disjoint() {
        let c = toy(100, 3);
        let s = split(&c, &SplitSpec::fraction(SplitMode::HoldoutDatasets, 0.34, 1)).unwrap();
        let train_models: BTreeSet<_> = s.train.records().iter().map(|r| r.model_key.clone()).collect();
        let val_models: BTreeSet<_> = s.val.records().iter().map(|r| r.model_key.clone()).collect();
        assert_eq!(val_models.len(), 5);
        assert!(train_models.is_disjoint(&val_models));
        let test_ds: BTreeSet<_> = s.test.records().iter().map(|r| r.dataset_key.clone()).collect();
        assert_eq!(test_ds.len(), 1);
    }

    #[test]
    fn explicit_model_keys() {
        let c = toy(20, 3);
        let s = split(&c, &SplitSpec::keys(SplitMode::HoldoutModels, vec!["M001".into(), "m007".into()], 0)).unwrap();
        let test_models: BTreeSet<_> = s.test.records().iter().map(|r| r.model_key.as_str()).collect();
        assert_eq!(test_models.into_iter().collect::<Vec<_>>(), vec!["m001", "m007"]);
        assert_eq!(s.test.records().len(), 6);
    }
}
