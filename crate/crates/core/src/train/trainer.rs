//! The optimization loop.

use std::collections::BTreeMap;
use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_loss, prepare_groups, Batch, Checkpoint, Result, TrainConfig, TrainError};
use crate::corpus::{Corpus, DatasetMeta, ModelMeta};
use crate::embed::{DescriptionEmbedder, FeatureBank, Vocab};
use crate::eval;
use crate::numerics::{clip_global_norm, AdamW, AdamWHyper, ParamStore, Tape};
use crate::scorer::{DropoutPlan, Scorer};

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when the validation split has no groups.
    pub val_tau_w: Option<f64>,
}

/// Independent random streams, one per purpose, all derived from one seed.
pub struct RngStreams {
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub pairs: ChaCha8Rng,
    pub id_dropout: ChaCha8Rng,
    pub hidden_dropout: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self { init: stream(0), shuffle: stream(1), pairs: stream(2), id_dropout: stream(3), hidden_dropout: stream(4) }
    }
}

/// Union of the catalogs' metadata, keyed and sorted by entity key. The
/// first catalog wins on duplicates.
fn merged_meta(corpora: &[&Corpus]) -> (Vec<ModelMeta>, Vec<DatasetMeta>) {
    let mut models = BTreeMap::new();
    let mut datasets = BTreeMap::new();
    for c in corpora {
        for m in c.catalog().models() {
            models.entry(m.model_key.clone()).or_insert_with(|| m.clone());
        }
        for d in c.catalog().datasets() {
            datasets.entry(d.dataset_key.clone()).or_insert_with(|| d.clone());
        }
    }
    (models.into_values().collect(), datasets.into_values().collect())
}

/// Feature bank over the entities of `corpora`.
pub fn build_bank(
    corpora: &[&Corpus],
    vocab: &Vocab,
    config: &TrainConfig,
    embedder: &dyn DescriptionEmbedder,
) -> Result<(FeatureBank, Vec<ModelMeta>, Vec<DatasetMeta>)> {
    let (models, datasets) = merged_meta(corpora);
    let mut bank = FeatureBank::new();
    bank.add_all(&models, &datasets, vocab, &config.scorer.dims, embedder)?;
    Ok((bank, models, datasets))
}

/// Trains a scorer on `train`, early-stopping on validation τ̄_w, and
/// returns the checkpoint of the best epoch.
///
/// When `val` has no groups the negated training loss is monitored instead.
/// Each epoch's metrics are appended to `log` as one JSON line.
pub fn train(train: &Corpus, val: &Corpus, config: &TrainConfig, mut log: Option<&mut dyn Write>) -> Result<Checkpoint> {
    config.validate()?;
    let vocab = Vocab::from_corpus(train);
    let embedder = config.embedder.build()?;
    let (bank, models, datasets) = build_bank(&[train, val], &vocab, config, embedder.as_ref())?;
    let groups = prepare_groups(train, &bank, &vocab)?;
    if groups.is_empty() {
        return Err(TrainError::NoTrainGroups);
    }
    let truncated = groups.iter().filter(|g| g.items.len() > config.max_list_len).count();
    if truncated > 0 {
        info!("{truncated} groups exceed {} members; their listwise lists keep the best {}", config.max_list_len, config.max_list_len);
    }

    let mut rngs = RngStreams::new(config.seed);
    let mut scorer = Scorer::<f32>::init(config.scorer, vocab.clone(), &mut rngs.init);
    let hyper = AdamWHyper { lr: config.lr, weight_decay: config.weight_decay, ..AdamWHyper::default() };
    let mut opt = AdamW::new(&scorer.store, hyper);
    let w = config.weights();

    let mut best_store: ParamStore<f32> = scorer.store.clone();
    let mut best_opt = opt.clone();
    let mut best_epoch = 0usize;
    let mut best_monitor = f64::NEG_INFINITY;
    let mut best_val: Option<f64> = None;
    let mut since_best = 0usize;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..groups.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rngs.shuffle);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for (step, chunk) in order.chunks(config.batch_lists).enumerate() {
            let lists: Vec<_> = chunk.iter().map(|&i| &groups[i]).collect();
            let batch = Batch::assemble(&lists, &groups, config.batch_pairs, config.max_list_len, &mut rngs.pairs);
            let plan = DropoutPlan::draw(
                batch.items.len(),
                config.p_model_dropout,
                config.p_dataset_dropout,
                config.scorer.hidden,
                config.scorer.dropout,
                &mut rngs.id_dropout,
                &mut rngs.hidden_dropout,
            );
            let non_finite = |what, store: &ParamStore<f32>| TrainError::NonFinite {
                what,
                epoch,
                step,
                batch_keys: batch.keys.clone(),
                param_norms: store.norms(),
            };
            let mut grads = {
                let mut tape = Tape::new(&scorer.store);
                let loss = batch_loss(&mut tape, &scorer, &bank, &batch, &plan, w)?;
                let value = tape.scalar(loss) as f64;
                if !value.is_finite() {
                    return Err(non_finite("loss", &scorer.store));
                }
                loss_sum += value;
                steps += 1;
                tape.backward(loss)?
            };
            if !grads.all_finite() {
                return Err(non_finite("gradient", &scorer.store));
            }
            clip_global_norm(&mut grads, config.clip_norm);
            opt.update(&mut scorer.store, &grads);
        }
        let train_loss = loss_sum / steps.max(1) as f64;

        let val_tau = if val.groups().is_empty() {
            None
        } else {
            Some(eval::evaluate(&scorer, &bank, val.catalog(), val.groups(), &[])?.aggregate.tau_w)
        };
        let entry = EpochLog { epoch, train_loss, val_tau_w: val_tau };
        debug!("epoch {epoch}: train loss {train_loss:.5}, val tau_w {val_tau:?}");
        if let Some(out) = log.as_mut() {
            writeln!(out, "{}", serde_json::to_string(&entry).expect("log line serializes"))?;
        }
        history.push(entry);

        let monitor = val_tau.unwrap_or(-train_loss);
        if monitor > best_monitor {
            best_monitor = monitor;
            best_val = val_tau;
            best_epoch = epoch;
            best_store.clone_from(&scorer.store);
            best_opt.clone_from(&opt);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                info!("early stop after epoch {epoch}; best epoch {best_epoch}");
                break;
            }
        }
    }

    Ok(Checkpoint {
        config: config.clone(),
        vocab,
        models,
        datasets,
        store: best_store,
        optimizer: config.save_optimizer.then_some(best_opt),
        best_val_tau_w: best_val,
        epoch: best_epoch,
        history,
    })
}
