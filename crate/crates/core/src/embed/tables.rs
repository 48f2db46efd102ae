use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EmbedError, Result};
use crate::corpus::{Corpus, FamilyVocab, N_SIZE_BUCKETS};
use crate::numerics::{ParamId, ParamStore, Real};

/// Reserved row for unknown / dropped-out IDs and unseen task or metric keys.
pub const UNK: usize = 0;

/// Standard deviation of the embedding initialization.
pub const EMBED_INIT_STD: f64 = 0.02;

/// Widths of every feature segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedDims {
    pub model_id: usize,
    pub name: usize,
    pub name_buckets: usize,
    pub desc: usize,
    pub dataset_id: usize,
    pub task: usize,
    pub metric: usize,
    pub size: usize,
    pub family: usize,
}

impl Default for EmbedDims {
    fn default() -> Self {
        Self {
            model_id: 256,
            name: 512,
            name_buckets: super::NAME_BUCKETS,
            desc: super::DESC_DIM,
            dataset_id: 256,
            task: 256,
            metric: 64,
            size: 64,
            family: 64,
        }
    }
}

impl EmbedDims {
    pub fn h_model(&self) -> usize {
        self.model_id + self.name + self.desc
    }

    pub fn h_dataset(&self) -> usize {
        self.dataset_id + self.desc
    }

    /// Width of the joint input `[h_m ‖ h_d ‖ e_size ‖ e_fam ‖ e_task ‖ e_metric]`.
    pub fn joint(&self) -> usize {
        self.h_model() + self.h_dataset() + self.size + self.family + self.task + self.metric
    }

    /// Column ranges of each segment inside the joint input, in order.
    pub fn segments(&self) -> Segments {
        let mut at = 0;
        let mut next = |w: usize| {
            let r = at..at + w;
            at += w;
            r
        };
        Segments {
            model_id: next(self.model_id),
            name: next(self.name),
            model_desc: next(self.desc),
            dataset_id: next(self.dataset_id),
            dataset_desc: next(self.desc),
            size: next(self.size),
            family: next(self.family),
            task: next(self.task),
            metric: next(self.metric),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub model_id: std::ops::Range<usize>,
    pub name: std::ops::Range<usize>,
    pub model_desc: std::ops::Range<usize>,
    pub dataset_id: std::ops::Range<usize>,
    pub dataset_desc: std::ops::Range<usize>,
    pub size: std::ops::Range<usize>,
    pub family: std::ops::Range<usize>,
    pub task: std::ops::Range<usize>,
    pub metric: std::ops::Range<usize>,
}

/// Sorted keys with index 0 reserved for "unknown".
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeyVocab {
    keys: Vec<String>,
}

impl KeyVocab {
    pub fn new<I: IntoIterator<Item = String>>(keys: I) -> Self {
        let set: BTreeSet<String> = keys.into_iter().collect();
        Self { keys: set.into_iter().collect() }
    }

    /// Table rows needed, including the reserved row.
    pub fn rows(&self) -> usize {
        self.keys.len() + 1
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.keys.binary_search_by(|k| k.as_str().cmp(key)).ok().map(|i| i + 1)
    }

    pub fn index_or_unk(&self, key: &str) -> usize {
        self.get(key).unwrap_or(UNK)
    }
}

/// Every vocabulary the scorer indexes by.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocab {
    pub models: KeyVocab,
    pub datasets: KeyVocab,
    pub tasks: KeyVocab,
    pub metrics: KeyVocab,
    pub families: FamilyVocab,
}

impl Vocab {
    /// Built from the training split only; anything else is cold.
    pub fn from_corpus(train: &Corpus) -> Self {
        let recs = train.records();
        Self {
            models: KeyVocab::new(recs.iter().map(|r| r.model_key.clone())),
            datasets: KeyVocab::new(recs.iter().map(|r| r.dataset_key.clone())),
            tasks: KeyVocab::new(recs.iter().map(|r| r.task_key.clone())),
            metrics: KeyVocab::new(recs.iter().map(|r| r.metric_key.clone())),
            families: FamilyVocab::build(train.catalog().models()),
        }
    }
}

/// Parameter ids of the embedding tables inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableIds {
    pub model_id: ParamId,
    pub name: ParamId,
    pub dataset_id: ParamId,
    pub task: ParamId,
    pub metric: ParamId,
    pub size: ParamId,
    pub family: ParamId,
}

fn normal_table<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<T> {
    let n = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
    (0..rows * cols).map(|_| T::of(n.sample(rng))).collect()
}

/// Adds all embedding tables to `store`, drawn from N(0, 0.02²).
pub fn init_tables<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    dims: &EmbedDims,
    vocab: &Vocab,
    rng: &mut R,
) -> TableIds {
    let mut table = |name: &str, rows: usize, cols: usize| {
        let data = normal_table(rows, cols, rng);
        store.add(name, rows, cols, data)
    };
    TableIds {
        model_id: table("emb.model_id", vocab.models.rows(), dims.model_id),
        name: table("emb.name", dims.name_buckets, dims.name),
        dataset_id: table("emb.dataset_id", vocab.datasets.rows(), dims.dataset_id),
        task: table("emb.task", vocab.tasks.rows(), dims.task),
        metric: table("emb.metric", vocab.metrics.rows(), dims.metric),
        size: table("emb.size", N_SIZE_BUCKETS, dims.size),
        family: table("emb.family", vocab.families.len(), dims.family),
    }
}

/// Resolves which row an ID lookup reads.
///
/// In training each lookup independently returns [`UNK`] with probability
/// `p`; at inference the entity row is always used.
pub fn dropout_id<R: Rng + ?Sized>(index: usize, p: f64, rng: &mut R, training: bool) -> usize {
    if training && p > 0.0 && rng.random::<f64>() < p {
        UNK
    } else {
        index
    }
}

/// Row of `table` for an entity, after ID dropout.
pub fn lookup_id_with_dropout<'a, T: Real, R: Rng + ?Sized>(
    index: usize,
    table: &'a crate::numerics::Param<T>,
    p: f64,
    rng: &mut R,
    training: bool,
) -> Result<&'a [T]> {
    if !(0.0..1.0).contains(&p) && !(training && p == 1.0) {
        return Err(EmbedError::Config(format!("id dropout rate {p} outside [0, 1)")));
    }
    if index >= table.rows {
        return Err(EmbedError::UnknownEntity { table: table.name.clone(), index });
    }
    Ok(table.row(dropout_id(index, p, rng, training)))
}

/// Mean of the token rows; an empty token list gives zeros.
pub fn embed_name<T: Real>(tokens: &[usize], table: &crate::numerics::Param<T>) -> Vec<T> {
    let mut out = vec![T::zero(); table.cols];
    if tokens.is_empty() {
        return out;
    }
    for &t in tokens {
        for (o, &v) in out.iter_mut().zip(table.row(t)) {
            *o += v;
        }
    }
    let n = T::of(tokens.len() as f64);
    out.iter_mut().for_each(|o| *o /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("t", 4, 3, (0..12).map(|x| x as f64).collect());
        s
    }

    #[test]
    fn default_dims() {
        let d = EmbedDims::default();
        assert_eq!((d.h_model(), d.h_dataset(), d.joint()), (2304, 1792, 4544));
        let s = d.segments();
        assert_eq!(s.metric.end, 4544);
        assert_eq!(s.dataset_id, 2304..2560);
    }

    #[test]
    fn dropout_rates() {
        let s = table();
        let t = s.get(ParamId(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(lookup_id_with_dropout(2, t, 0.0, &mut rng, true).unwrap(), t.row(2));
            assert_eq!(lookup_id_with_dropout(2, t, 1.0, &mut rng, true).unwrap(), t.row(UNK));
            assert_eq!(lookup_id_with_dropout(2, t, 0.5, &mut rng, false).unwrap(), t.row(2));
        }
        assert!(matches!(lookup_id_with_dropout(9, t, 0.0, &mut rng, false), Err(EmbedError::UnknownEntity { .. })));
        assert!(lookup_id_with_dropout(1, t, 1.0, &mut rng, false).is_err());
    }

    #[test]
    fn dropout_frequency_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let unk = (0..n).filter(|_| dropout_id(3, 0.1, &mut rng, true) == UNK).count();
        let frac = unk as f64 / n as f64;
        assert!((0.094..=0.106).contains(&frac), "{frac}");
    }

    #[test]
    fn name_mean() {
        let s = table();
        let t = s.get(ParamId(0));
        assert_eq!(embed_name(&[1], t), t.row(1));
        assert_eq!(embed_name(&[1, 1], t), t.row(1));
        assert_eq!(embed_name(&[1, 3], t), vec![6.0, 7.0, 8.0]);
        assert_eq!(embed_name(&[], t), vec![0.0; 3]);
    }

    #[test]
    fn vocab_reserves_zero() {
        let v = KeyVocab::new(vec!["b".to_string(), "a".into(), "b".into()]);
        assert_eq!(v.rows(), 3);
        assert_eq!(v.get("a"), Some(1));
        assert_eq!(v.index_or_unk("zzz"), UNK);
    }

    #[test]
    fn init_shapes_and_scale() {
        let mut s = ParamStore::<f32>::new();
        let vocab = Vocab { models: KeyVocab::new(vec!["m".to_string()]), ..Default::default() };
        let ids = init_tables(&mut s, &EmbedDims::default(), &vocab, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.get(ids.model_id).rows, 2);
        assert_eq!(s.get(ids.name).rows, 32768);
        assert_eq!(s.get(ids.size).rows, 21);
        let d = &s.get(ids.name).data;
        let std = (d.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std - 0.02).abs() < 1e-4, "{std}");
    }
}
