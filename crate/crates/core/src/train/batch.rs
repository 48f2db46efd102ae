//! Listwise and pairwise batch assembly and the tape loss over a batch.

use std::ops::Range;

use rand::Rng;

use super::{sample_pairs, LossWeights, Result, TrainError};
use crate::corpus::Corpus;
use crate::embed::{FeatureBank, ItemRef, Vocab};
use crate::eval::group_items;
use crate::numerics::{Real, Tape, Var};
use crate::scorer::{forward_batch, DropoutPlan, Scorer};

/// One training group with its members in ground-truth order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainGroup {
    pub key: String,
    pub items: Vec<ItemRef>,
    pub z: Vec<f64>,
}

pub fn prepare_groups(corpus: &Corpus, bank: &FeatureBank, vocab: &Vocab) -> Result<Vec<TrainGroup>> {
    corpus
        .groups()
        .iter()
        .map(|g| {
            Ok(TrainGroup {
                key: g.key.to_string(),
                items: group_items(g, corpus.catalog(), bank, vocab)?,
                z: g.members.iter().map(|m| m.z).collect(),
            })
        })
        .collect()
}

/// Items of one optimizer step. List members come first, in group order and
/// best first; pair items follow.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub items: Vec<ItemRef>,
    /// Item ranges of the listwise groups.
    pub lists: Vec<Range<usize>>,
    /// `(better, worse)` item indices.
    pub pairs: Vec<(usize, usize)>,
    /// Standardized targets of the list members.
    pub z_targets: Vec<f64>,
    /// Keys of the groups that contributed, for diagnostics.
    pub keys: Vec<String>,
}

impl Batch {
    /// Builds a batch from the given listwise groups plus `n_pairs` pairs,
    /// each from a group drawn uniformly from `pool`.
    pub fn assemble<R: Rng + ?Sized>(
        lists: &[&TrainGroup],
        pool: &[TrainGroup],
        n_pairs: usize,
        max_list_len: usize,
        pair_rng: &mut R,
    ) -> Self {
        let mut b = Batch::default();
        for g in lists {
            let len = g.items.len().min(max_list_len);
            let start = b.items.len();
            b.items.extend_from_slice(&g.items[..len]);
            b.z_targets.extend_from_slice(&g.z[..len]);
            b.lists.push(start..start + len);
            b.keys.push(g.key.clone());
        }
        if !pool.is_empty() {
            for _ in 0..n_pairs {
                let g = &pool[pair_rng.random_range(0..pool.len())];
                if let Some(&(i, j)) = sample_pairs(&g.z, pair_rng, 1).first() {
                    let at = b.items.len();
                    b.items.push(g.items[i]);
                    b.items.push(g.items[j]);
                    b.pairs.push((at, at + 1));
                    if b.keys.last() != Some(&g.key) {
                        b.keys.push(g.key.clone());
                    }
                }
            }
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty() && self.pairs.is_empty()
    }
}

/// Records the forward pass and the weighted objective of `batch` on `tape`.
pub fn batch_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    scorer: &Scorer<T>,
    bank: &FeatureBank,
    batch: &Batch,
    plan: &DropoutPlan<T>,
    w: LossWeights,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(TrainError::Contract("both the listwise and the pairwise batch are empty".into()));
    }
    let s = forward_batch(tape, scorer, bank, &batch.items, plan)?;
    let mut terms = Vec::new();
    if !batch.lists.is_empty() {
        let pl = tape.plackett_luce(s.s_tilde, batch.lists.clone())?;
        terms.push((pl, T::of(w.list)));
        let n_list = batch.z_targets.len();
        let zh = tape.gather(s.z_hat, (0..n_list).collect())?;
        let mse = tape.mse(zh, batch.z_targets.iter().map(|&z| T::of(z)).collect())?;
        terms.push((mse, T::of(w.point)));
    }
    if !batch.pairs.is_empty() {
        let bpr = tape.bpr(s.s_tilde, batch.pairs.clone())?;
        terms.push((bpr, T::of(w.pair)));
    }
    Ok(tape.lin_comb(terms)?)
}
