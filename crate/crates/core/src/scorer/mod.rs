//! Prior + residual scoring network.
//!
//! `s̃ = (s_residual + s_prior) / max(τ, ε)`, where the prior is a small MLP
//! over `[e_size ‖ e_fam]` and the residual comes from a two-layer backbone
//! over the full joint input followed by a linear head. A second head on the
//! same hidden vector regresses the standardized score `ẑ`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{init_tables, EmbedDims, FeatureBank, ItemRef, TableIds, Vocab, UNK};
use crate::numerics::{dropout_mask, NumericsError, ParamId, ParamStore, Real, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("no candidates to score")]
    EmptyCandidates,
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ScorerError>;

/// Items scored per tape at inference.
const INFERENCE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub dims: EmbedDims,
    pub prior_hidden: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub tau_init: f64,
    pub eps: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self { dims: EmbedDims::default(), prior_hidden: 64, hidden: 512, dropout: 0.02, tau_init: 10.0, eps: 1e-3 }
    }
}

/// Parameter ids of every scorer array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerIds {
    pub tables: TableIds,
    pub prior_w1: ParamId,
    pub prior_b1: ParamId,
    pub prior_w2: ParamId,
    pub prior_b2: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w_pair: ParamId,
    pub b_pair: ParamId,
    pub w_point: ParamId,
    pub b_point: ParamId,
    pub tau: ParamId,
}

impl ScorerIds {
    /// Finds every array by name, e.g. after loading a checkpoint.
    pub fn locate<T: Real>(store: &ParamStore<T>) -> Result<Self> {
        let f = |n: &str| store.find(n).ok_or_else(|| ScorerError::MissingParam(n.to_string()));
        Ok(Self {
            tables: TableIds {
                model_id: f("emb.model_id")?,
                name: f("emb.name")?,
                dataset_id: f("emb.dataset_id")?,
                task: f("emb.task")?,
                metric: f("emb.metric")?,
                size: f("emb.size")?,
                family: f("emb.family")?,
            },
            prior_w1: f("prior.w1")?,
            prior_b1: f("prior.b1")?,
            prior_w2: f("prior.w2")?,
            prior_b2: f("prior.b2")?,
            w1: f("backbone.w1")?,
            b1: f("backbone.b1")?,
            w2: f("backbone.w2")?,
            b2: f("backbone.b2")?,
            w_pair: f("head.w_pair")?,
            b_pair: f("head.b_pair")?,
            w_point: f("head.w_point")?,
            b_point: f("head.b_point")?,
            tau: f("tau")?,
        })
    }
}

/// Uniform(±√(6/fan_in)) weights stored `fan_in × fan_out`.
fn linear<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
    let a = (6.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::of(rng.random_range(-a..a))).collect();
    store.add(name, fan_in, fan_out, data)
}

/// Names and shapes of every parameter array, in store order.
pub fn param_shapes(config: &ScorerConfig, vocab: &Vocab) -> Vec<(&'static str, usize, usize)> {
    let d = config.dims;
    let (ph, h) = (config.prior_hidden, config.hidden);
    vec![
        ("emb.model_id", vocab.models.rows(), d.model_id),
        ("emb.name", d.name_buckets, d.name),
        ("emb.dataset_id", vocab.datasets.rows(), d.dataset_id),
        ("emb.task", vocab.tasks.rows(), d.task),
        ("emb.metric", vocab.metrics.rows(), d.metric),
        ("emb.size", crate::corpus::N_SIZE_BUCKETS, d.size),
        ("emb.family", vocab.families.len(), d.family),
        ("prior.w1", d.size + d.family, ph),
        ("prior.b1", 1, ph),
        ("prior.w2", ph, 1),
        ("prior.b2", 1, 1),
        ("backbone.w1", d.joint(), h),
        ("backbone.b1", 1, h),
        ("backbone.w2", h, h),
        ("backbone.b2", 1, h),
        ("head.w_pair", h, 1),
        ("head.b_pair", 1, 1),
        ("head.w_point", h, 1),
        ("head.b_point", 1, 1),
        ("tau", 1, 1),
    ]
}

/// A parameter store plus the ids and shapes that make it a scorer.
#[derive(Debug, Clone)]
pub struct Scorer<T> {
    pub config: ScorerConfig,
    pub vocab: Vocab,
    pub store: ParamStore<T>,
    pub ids: ScorerIds,
}

impl<T: Real> Scorer<T> {
    /// Fresh parameters: embeddings N(0, 0.02²), linear weights uniform,
    /// biases zero, τ = `tau_init`.
    pub fn init<R: Rng + ?Sized>(config: ScorerConfig, vocab: Vocab, rng: &mut R) -> Self {
        let d = config.dims;
        let mut store = ParamStore::new();
        let tables = init_tables(&mut store, &d, &vocab, rng);
        let ph = config.prior_hidden;
        let h = config.hidden;
        let prior_w1 = linear(&mut store, "prior.w1", d.size + d.family, ph, rng);
        let prior_b1 = store.zeros("prior.b1", 1, ph);
        let prior_w2 = linear(&mut store, "prior.w2", ph, 1, rng);
        let prior_b2 = store.zeros("prior.b2", 1, 1);
        let w1 = linear(&mut store, "backbone.w1", d.joint(), h, rng);
        let b1 = store.zeros("backbone.b1", 1, h);
        let w2 = linear(&mut store, "backbone.w2", h, h, rng);
        let b2 = store.zeros("backbone.b2", 1, h);
        let w_pair = linear(&mut store, "head.w_pair", h, 1, rng);
        let b_pair = store.zeros("head.b_pair", 1, 1);
        let w_point = linear(&mut store, "head.w_point", h, 1, rng);
        let b_point = store.zeros("head.b_point", 1, 1);
        let tau = store.add("tau", 1, 1, vec![T::of(config.tau_init)]);
        let ids = ScorerIds {
            tables,
            prior_w1,
            prior_b1,
            prior_w2,
            prior_b2,
            w1,
            b1,
            w2,
            b2,
            w_pair,
            b_pair,
            w_point,
            b_point,
            tau,
        };
        Self { config, vocab, store, ids }
    }

    pub fn from_parts(config: ScorerConfig, vocab: Vocab, store: ParamStore<T>) -> Result<Self> {
        let ids = ScorerIds::locate(&store)?;
        Ok(Self { config, vocab, store, ids })
    }

    pub fn cast<U: Real>(&self) -> Scorer<U> {
        Scorer { config: self.config, vocab: self.vocab.clone(), store: self.store.cast(), ids: self.ids }
    }

    pub fn tau(&self) -> T {
        self.store.get(self.ids.tau).data[0]
    }

    pub fn set_tau(&mut self, tau: T) {
        self.store.get_mut(self.ids.tau).data[0] = tau;
    }

    /// Prior score for explicit size and family embedding rows.
    pub fn prior_score(&self, e_size: &[T], e_fam: &[T]) -> T {
        let s = &self.store;
        let w1 = s.get(self.ids.prior_w1);
        let input: Vec<T> = e_size.iter().chain(e_fam).copied().collect();
        let mut hidden = s.get(self.ids.prior_b1).data.clone();
        affine_into(&input, &w1.data, w1.cols, &mut hidden);
        hidden.iter_mut().for_each(|x| *x = x.max(T::zero()));
        dot(&hidden, &s.get(self.ids.prior_w2).data) + s.get(self.ids.prior_b2).data[0]
    }

    /// Prior score of a size bucket and family index.
    pub fn prior_for(&self, size: usize, family: usize) -> T {
        let t = self.ids.tables;
        self.prior_score(self.store.get(t.size).row(size), self.store.get(t.family).row(family))
    }

    /// Backbone and heads on one materialized joint input.
    ///
    /// Returns `(h, s_residual, ẑ)`; in training, hidden dropout is drawn
    /// from `rng`.
    pub fn residual_forward<R: Rng + ?Sized>(&self, x: &[T], training: bool, rng: &mut R) -> Result<(Vec<T>, T, T)> {
        let s = &self.store;
        let w1 = s.get(self.ids.w1);
        if x.len() != w1.rows {
            return Err(NumericsError::Shape { op: "residual_forward", detail: format!("input {} != {}", x.len(), w1.rows) }.into());
        }
        let mut a = s.get(self.ids.b1).data.clone();
        affine_into(x, &w1.data, w1.cols, &mut a);
        a.iter_mut().for_each(|v| *v = v.max(T::zero()));
        if training && self.config.dropout > 0.0 {
            let mask: Vec<T> = dropout_mask(a.len(), self.config.dropout, rng);
            a.iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        }
        let w2 = s.get(self.ids.w2);
        let mut h = s.get(self.ids.b2).data.clone();
        affine_into(&a, &w2.data, w2.cols, &mut h);
        let s_res = dot(&h, &s.get(self.ids.w_pair).data) + s.get(self.ids.b_pair).data[0];
        let z_hat = dot(&h, &s.get(self.ids.w_point).data) + s.get(self.ids.b_point).data[0];
        Ok((h, s_res, z_hat))
    }
}

/// `out += x · W` for a row vector `x` and row-major `W` with `cols` columns.
fn affine_into<T: Real>(x: &[T], w: &[T], cols: usize, out: &mut [T]) {
    for (xi, row) in x.iter().zip(w.chunks(cols)) {
        if *xi == T::zero() {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += *xi * wij;
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `s̃ = (s_residual + s_prior) / max(τ, ε)`.
pub fn compose<T: Real>(s_residual: T, s_prior: T, tau: T, eps: T) -> T {
    (s_residual + s_prior) / tau.max(eps)
}

/// Stochastic choices for one forward pass, drawn up front so a pass can be
/// replayed exactly (e.g. under finite differences).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutPlan<T> {
    /// Per item: read the UNK model-ID row instead of the model's own.
    pub model_unk: Vec<bool>,
    pub dataset_unk: Vec<bool>,
    /// Inverted-dropout mask for the backbone hidden layer (`N × hidden`).
    pub hidden_mask: Option<Vec<T>>,
}

impl<T: Real> DropoutPlan<T> {
    /// No dropout of any kind.
    pub fn inference(n: usize) -> Self {
        Self { model_unk: vec![false; n], dataset_unk: vec![false; n], hidden_mask: None }
    }

    /// Draws ID dropout with probabilities `p_model`/`p_dataset` from
    /// `id_rng` and the hidden mask from `hidden_rng`.
    pub fn draw<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        n: usize,
        p_model: f64,
        p_dataset: f64,
        hidden: usize,
        hidden_rate: f64,
        id_rng: &mut R1,
        hidden_rng: &mut R2,
    ) -> Self {
        let mut model_unk = Vec::with_capacity(n);
        let mut dataset_unk = Vec::with_capacity(n);
        for _ in 0..n {
            model_unk.push(p_model > 0.0 && id_rng.random::<f64>() < p_model);
            dataset_unk.push(p_dataset > 0.0 && id_rng.random::<f64>() < p_dataset);
        }
        let hidden_mask = (hidden_rate > 0.0).then(|| dropout_mask(n * hidden, hidden_rate, hidden_rng));
        Self { model_unk, dataset_unk, hidden_mask }
    }
}

/// Tape nodes produced by [`forward_batch`], each `N × 1`.
#[derive(Debug, Clone, Copy)]
pub struct BatchScores {
    pub s_tilde: Var,
    pub s_residual: Var,
    pub s_prior: Var,
    pub z_hat: Var,
}

/// Distinct values of `keys` in first-seen order, plus each key's position.
fn dedup_index(keys: impl Iterator<Item = usize>) -> (Vec<usize>, Vec<usize>) {
    let mut pos: HashMap<usize, usize> = HashMap::new();
    let mut uniq = Vec::new();
    let idx = keys
        .map(|k| {
            *pos.entry(k).or_insert_with(|| {
                uniq.push(k);
                uniq.len() - 1
            })
        })
        .collect();
    (uniq, idx)
}

/// Scores a batch of items on `tape`.
///
/// The first backbone layer is linear in its input, so `x·W1` is computed
/// as a sum of per-segment projections: each distinct table row or
/// description vector is multiplied by its block of `W1` once, and items
/// gather-add the projected rows. This is exact and avoids materializing the
/// `N × 4544` joint input.
pub fn forward_batch<T: Real>(
    tape: &mut Tape<'_, T>,
    scorer: &Scorer<T>,
    bank: &FeatureBank,
    items: &[ItemRef],
    plan: &DropoutPlan<T>,
) -> Result<BatchScores> {
    let n = items.len();
    if n == 0 {
        return Err(ScorerError::EmptyCandidates);
    }
    if plan.model_unk.len() != n || plan.dataset_unk.len() != n {
        return Err(NumericsError::Contract("dropout plan length differs from batch".into()).into());
    }
    let ids = &scorer.ids;
    let t = ids.tables;
    let seg = scorer.config.dims.segments();
    let conv = |v: &[f32]| v.iter().map(|&x| T::of(x as f64)).collect::<Vec<T>>();

    // Model-side inputs.
    let (umodels, m_of) = dedup_index(items.iter().map(|it| it.model));
    let (uid, mid_of) = dedup_index(
        items.iter().zip(&plan.model_unk).map(|(it, &unk)| if unk { UNK } else { bank.model(it.model).id }),
    );
    let model_id_table = tape.param(t.model_id);
    let mid_rows = tape.gather(model_id_table, uid)?;
    let w_mid = tape.param_rows(ids.w1, seg.model_id.clone())?;
    let p_mid = tape.matmul(mid_rows, w_mid)?;

    let name_table = tape.param(t.name);
    let names = tape.segment_mean(name_table, umodels.iter().map(|&m| bank.model(m).tokens.clone()).collect())?;
    let w_name = tape.param_rows(ids.w1, seg.name.clone())?;
    let p_name = tape.matmul(names, w_name)?;

    let desc_dim = scorer.config.dims.desc;
    let mdesc: Vec<T> = umodels.iter().flat_map(|&m| conv(&bank.model(m).desc)).collect();
    let mdesc = tape.constant(umodels.len(), desc_dim, mdesc)?;
    let w_mdesc = tape.param_rows(ids.w1, seg.model_desc.clone())?;
    let p_mdesc = tape.matmul(mdesc, w_mdesc)?;

    // Dataset-side inputs.
    let (udatasets, d_of) = dedup_index(items.iter().map(|it| it.dataset));
    let (udid, did_of) = dedup_index(
        items.iter().zip(&plan.dataset_unk).map(|(it, &unk)| if unk { UNK } else { bank.dataset(it.dataset).id }),
    );
    let dataset_id_table = tape.param(t.dataset_id);
    let did_rows = tape.gather(dataset_id_table, udid)?;
    let w_did = tape.param_rows(ids.w1, seg.dataset_id.clone())?;
    let p_did = tape.matmul(did_rows, w_did)?;

    let ddesc: Vec<T> = udatasets.iter().flat_map(|&d| conv(&bank.dataset(d).desc)).collect();
    let ddesc = tape.constant(udatasets.len(), desc_dim, ddesc)?;
    let w_ddesc = tape.param_rows(ids.w1, seg.dataset_desc.clone())?;
    let p_ddesc = tape.matmul(ddesc, w_ddesc)?;

    // Small tables are projected whole.
    let size_table = tape.param(t.size);
    let fam_table = tape.param(t.family);
    let task_table = tape.param(t.task);
    let metric_table = tape.param(t.metric);
    let w_size = tape.param_rows(ids.w1, seg.size.clone())?;
    let w_fam = tape.param_rows(ids.w1, seg.family.clone())?;
    let w_task = tape.param_rows(ids.w1, seg.task.clone())?;
    let w_metric = tape.param_rows(ids.w1, seg.metric.clone())?;
    let p_size = tape.matmul(size_table, w_size)?;
    let p_fam = tape.matmul(fam_table, w_fam)?;
    let p_task = tape.matmul(task_table, w_task)?;
    let p_metric = tape.matmul(metric_table, w_metric)?;

    let size_of: Vec<usize> = items.iter().map(|it| bank.model(it.model).size).collect();
    let fam_of: Vec<usize> = items.iter().map(|it| bank.model(it.model).family).collect();
    let pre = tape.gather_sum(vec![
        (p_mid, mid_of),
        (p_name, m_of.clone()),
        (p_mdesc, m_of),
        (p_did, did_of),
        (p_ddesc, d_of),
        (p_size, size_of.clone()),
        (p_fam, fam_of.clone()),
        (p_task, items.iter().map(|it| it.task).collect()),
        (p_metric, items.iter().map(|it| it.metric).collect()),
    ])?;
    let b1 = tape.param(ids.b1);
    let pre = tape.add_bias(pre, b1)?;
    let mut a = tape.relu(pre)?;
    if let Some(mask) = &plan.hidden_mask {
        a = tape.mask(a, mask.clone())?;
    }
    let w2 = tape.param(ids.w2);
    let b2 = tape.param(ids.b2);
    let h = tape.matmul(a, w2)?;
    let h = tape.add_bias(h, b2)?;

    let w_pair = tape.param(ids.w_pair);
    let b_pair = tape.param(ids.b_pair);
    let s_res = tape.matmul(h, w_pair)?;
    let s_residual = tape.add_bias(s_res, b_pair)?;
    let w_point = tape.param(ids.w_point);
    let b_point = tape.param(ids.b_point);
    let z = tape.matmul(h, w_point)?;
    let z_hat = tape.add_bias(z, b_point)?;

    // Prior over [e_size ‖ e_fam], decomposed the same way.
    let d = scorer.config.dims;
    let pw_size = tape.param_rows(ids.prior_w1, 0..d.size)?;
    let pw_fam = tape.param_rows(ids.prior_w1, d.size..d.size + d.family)?;
    let q_size = tape.matmul(size_table, pw_size)?;
    let q_fam = tape.matmul(fam_table, pw_fam)?;
    let ppre = tape.gather_sum(vec![(q_size, size_of), (q_fam, fam_of)])?;
    let pb1 = tape.param(ids.prior_b1);
    let ppre = tape.add_bias(ppre, pb1)?;
    let pa = tape.relu(ppre)?;
    let pw2 = tape.param(ids.prior_w2);
    let pb2 = tape.param(ids.prior_b2);
    let sp = tape.matmul(pa, pw2)?;
    let s_prior = tape.add_bias(sp, pb2)?;

    let total = tape.add(s_residual, s_prior)?;
    let tau = tape.param(ids.tau);
    let s_tilde = tape.div_clamped(total, tau, T::of(scorer.config.eps))?;
    Ok(BatchScores { s_tilde, s_residual, s_prior, z_hat })
}

/// Inference-mode outputs for one item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemScore {
    pub s_tilde: f64,
    pub s_residual: f64,
    pub s_prior: f64,
    pub z_hat: f64,
}

impl<T: Real> Scorer<T> {
    /// Scores items in inference mode (no dropout), chunked.
    pub fn score_items(&self, bank: &FeatureBank, items: &[ItemRef]) -> Result<Vec<ItemScore>> {
        if items.is_empty() {
            return Err(ScorerError::EmptyCandidates);
        }
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new(&self.store);
            let b = forward_batch(&mut tape, self, bank, chunk, &DropoutPlan::inference(chunk.len()))?;
            let vals = |v: Var| tape.value(v).iter().map(|x| x.f64()).collect::<Vec<f64>>();
            let (st, sr, sp, z) = (vals(b.s_tilde), vals(b.s_residual), vals(b.s_prior), vals(b.z_hat));
            for i in 0..chunk.len() {
                out.push(ItemScore { s_tilde: st[i], s_residual: sr[i], s_prior: sp[i], z_hat: z[i] });
            }
        }
        Ok(out)
    }

    /// Scores `candidates` (feature-bank model indices) for one dataset /
    /// task / metric query.
    pub fn score_candidates(
        &self,
        bank: &FeatureBank,
        dataset: usize,
        task: usize,
        metric: usize,
        candidates: &[usize],
    ) -> Result<Vec<ItemScore>> {
        let items: Vec<ItemRef> = candidates.iter().map(|&model| ItemRef { model, dataset, task, metric }).collect();
        self.score_items(bank, &items)
    }
}
