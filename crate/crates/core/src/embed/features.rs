use std::collections::HashMap;

use super::tables::{embed_name, EmbedDims, TableIds, Vocab, UNK};
use super::{tokenize::tokenize_name_with, DescriptionEmbedder, Result};
use crate::corpus::{resolve_family, size_bucket, DatasetMeta, ModelMeta};
use crate::numerics::{ParamStore, Real};

/// Precomputed, non-trainable inputs for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFeat {
    pub key: String,
    /// Row in the model-ID table; [`UNK`] when the model was not trained on.
    pub id: usize,
    pub tokens: Vec<usize>,
    pub desc: Vec<f32>,
    pub size: usize,
    pub family: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFeat {
    pub key: String,
    pub id: usize,
    pub desc: Vec<f32>,
}

/// Feature inputs for every model and dataset the scorer may see, including
/// cold ones, with description vectors embedded once.
#[derive(Debug, Clone, Default)]
pub struct FeatureBank {
    models: Vec<ModelFeat>,
    datasets: Vec<DatasetFeat>,
    model_index: HashMap<String, usize>,
    dataset_index: HashMap<String, usize>,
}

impl FeatureBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds (or returns the existing entry for) a model. Models absent from
    /// `vocab` get the UNK ID row.
    pub fn add_model(&mut self, meta: &ModelMeta, vocab: &Vocab, dims: &EmbedDims, embedder: &dyn DescriptionEmbedder) -> Result<usize> {
        if let Some(&i) = self.model_index.get(&meta.model_key) {
            return Ok(i);
        }
        let feat = ModelFeat {
            key: meta.model_key.clone(),
            id: vocab.models.index_or_unk(&meta.model_key),
            tokens: tokenize_name_with(&meta.display_name, dims.name_buckets),
            desc: embedder.embed(&meta.description)?,
            // Ingestion never admits param_count = 0; treat it as unknown here.
            size: size_bucket(meta.param_count.filter(|&p| p > 0)).expect("positive or absent"),
            family: resolve_family(meta, &vocab.families),
        };
        self.models.push(feat);
        self.model_index.insert(meta.model_key.clone(), self.models.len() - 1);
        Ok(self.models.len() - 1)
    }

    /// Adds a model that must be scored as cold even if its key is known.
    pub fn add_cold_model(&mut self, meta: &ModelMeta, vocab: &Vocab, dims: &EmbedDims, embedder: &dyn DescriptionEmbedder) -> Result<usize> {
        let i = self.add_model(meta, vocab, dims, embedder)?;
        self.models[i].id = UNK;
        Ok(i)
    }

    pub fn add_dataset(&mut self, meta: &DatasetMeta, vocab: &Vocab, embedder: &dyn DescriptionEmbedder) -> Result<usize> {
        if let Some(&i) = self.dataset_index.get(&meta.dataset_key) {
            return Ok(i);
        }
        self.datasets.push(DatasetFeat {
            key: meta.dataset_key.clone(),
            id: vocab.datasets.index_or_unk(&meta.dataset_key),
            desc: embedder.embed(&meta.description)?,
        });
        self.dataset_index.insert(meta.dataset_key.clone(), self.datasets.len() - 1);
        Ok(self.datasets.len() - 1)
    }

    /// Adds a dataset described only by text, scored with the UNK ID row.
    pub fn add_cold_dataset(&mut self, key: &str, description: &str, embedder: &dyn DescriptionEmbedder) -> Result<usize> {
        if let Some(&i) = self.dataset_index.get(key) {
            if self.datasets[i].id == UNK {
                return Ok(i);
            }
        }
        self.datasets.push(DatasetFeat { key: key.to_string(), id: UNK, desc: embedder.embed(description)? });
        let i = self.datasets.len() - 1;
        // A warm entry under the same key keeps the lookup slot.
        self.dataset_index.entry(key.to_string()).or_insert(i);
        Ok(i)
    }

    pub fn add_all(
        &mut self,
        models: &[ModelMeta],
        datasets: &[DatasetMeta],
        vocab: &Vocab,
        dims: &EmbedDims,
        embedder: &dyn DescriptionEmbedder,
    ) -> Result<()> {
        for m in models {
            self.add_model(m, vocab, dims, embedder)?;
        }
        for d in datasets {
            self.add_dataset(d, vocab, embedder)?;
        }
        Ok(())
    }

    pub fn models(&self) -> &[ModelFeat] {
        &self.models
    }

    pub fn datasets(&self) -> &[DatasetFeat] {
        &self.datasets
    }

    pub fn model(&self, i: usize) -> &ModelFeat {
        &self.models[i]
    }

    pub fn dataset(&self, i: usize) -> &DatasetFeat {
        &self.datasets[i]
    }

    pub fn model_index(&self, key: &str) -> Option<usize> {
        self.model_index.get(key).copied()
    }

    pub fn dataset_index(&self, key: &str) -> Option<usize> {
        self.dataset_index.get(key).copied()
    }
}

/// Materialized joint input for one (model, dataset, task, metric) item.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub h_model: Vec<T>,
    pub h_dataset: Vec<T>,
    pub e_size: Vec<T>,
    pub e_fam: Vec<T>,
    pub e_task: Vec<T>,
    pub e_metric: Vec<T>,
}

impl<T: Real> FeatureVector<T> {
    /// `[h_m ‖ h_d ‖ e_size ‖ e_fam ‖ e_task ‖ e_metric]`.
    pub fn joint(&self) -> Vec<T> {
        [&self.h_model, &self.h_dataset, &self.e_size, &self.e_fam, &self.e_task, &self.e_metric]
            .into_iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }
}

/// Index-level description of one scoring item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ItemRef {
    /// Index into [`FeatureBank::models`].
    pub model: usize,
    /// Index into [`FeatureBank::datasets`].
    pub dataset: usize,
    /// Row in the task table (0 = unseen).
    pub task: usize,
    /// Row in the metric table (0 = unseen).
    pub metric: usize,
}

/// Builds the feature vector of one item in inference mode.
///
/// The scorer never materializes these during training (it projects each
/// segment separately); this is the reference assembly.
pub fn build_features<T: Real>(item: ItemRef, bank: &FeatureBank, store: &ParamStore<T>, ids: &TableIds) -> FeatureVector<T> {
    let m = bank.model(item.model);
    let d = bank.dataset(item.dataset);
    let cast = |v: &[f32]| v.iter().map(|&x| T::of(x as f64)).collect::<Vec<T>>();
    let mut h_model = store.get(ids.model_id).row(m.id).to_vec();
    h_model.extend(embed_name(&m.tokens, store.get(ids.name)));
    h_model.extend(cast(&m.desc));
    let mut h_dataset = store.get(ids.dataset_id).row(d.id).to_vec();
    h_dataset.extend(cast(&d.desc));
    FeatureVector {
        h_model,
        h_dataset,
        e_size: store.get(ids.size).row(m.size).to_vec(),
        e_fam: store.get(ids.family).row(m.family).to_vec(),
        e_task: store.get(ids.task).row(item.task).to_vec(),
        e_metric: store.get(ids.metric).row(item.metric).to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::tables::{init_tables, KeyVocab};
    use crate::embed::HashedEmbedder;
    use rand::SeedableRng;

    fn setup() -> (Vocab, EmbedDims, ParamStore<f32>, TableIds, HashedEmbedder) {
        let vocab = Vocab {
            models: KeyVocab::new(vec!["seen".to_string()]),
            datasets: KeyVocab::new(vec!["ds".to_string()]),
            tasks: KeyVocab::new(vec!["t".to_string()]),
            metrics: KeyVocab::new(vec!["acc".to_string()]),
            families: crate::corpus::FamilyVocab::from_keys(vec!["llama".into()]),
        };
        let dims = EmbedDims::default();
        let mut store = ParamStore::new();
        let ids = init_tables(&mut store, &dims, &vocab, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        (vocab, dims, store, ids, HashedEmbedder::new(0, dims.desc))
    }

    #[test]
    fn shape_contract() {
        let (vocab, dims, store, ids, emb) = setup();
        let mut bank = FeatureBank::new();
        let m = bank.add_model(&ModelMeta::stub("seen"), &vocab, &dims, &emb).unwrap();
        let d = bank.add_dataset(&DatasetMeta::stub("ds"), &vocab, &emb).unwrap();
        let f = build_features(ItemRef { model: m, dataset: d, task: 1, metric: 1 }, &bank, &store, &ids);
        let lens = [f.h_model.len(), f.h_dataset.len(), f.e_size.len(), f.e_fam.len(), f.e_task.len(), f.e_metric.len()];
        assert_eq!(lens, [2304, 1792, 64, 64, 256, 64]);
        assert_eq!(f.joint().len(), 4544);
        assert_eq!(bank.model(m).id, 1);
    }

    #[test]
    fn cold_entities() {
        let (vocab, dims, store, ids, emb) = setup();
        let mut bank = FeatureBank::new();
        let meta = ModelMeta {
            model_key: "new".into(),
            display_name: "meta-llama/Llama-9-7B".into(),
            description: "a new model".into(),
            param_count: Some(7_000_000_000),
            family_key: None,
        };
        let m = bank.add_model(&meta, &vocab, &dims, &emb).unwrap();
        assert_eq!(bank.model(m).id, UNK);
        assert_eq!(bank.model(m).size, 11);
        assert_eq!(bank.model(m).family, 1);
        let text = "A speech benchmark of noisy recordings";
        let d = bank.add_cold_dataset("brand_new", text, &emb).unwrap();
        let f = build_features(ItemRef { model: m, dataset: d, task: 0, metric: 0 }, &bank, &store, &ids);
        assert_eq!(&f.h_dataset[..256], store.get(ids.dataset_id).row(UNK));
        assert_eq!(&f.h_dataset[256..], emb.embed(text).unwrap().as_slice());
        assert_eq!(f.e_size, store.get(ids.size).row(11));
        let again = build_features(ItemRef { model: m, dataset: d, task: 0, metric: 0 }, &bank, &store, &ids);
        assert_eq!(f, again);
    }

    #[test]
    fn cold_override_for_known_model() {
        let (vocab, dims, _, _, emb) = setup();
        let mut bank = FeatureBank::new();
        let m = bank.add_cold_model(&ModelMeta::stub("seen"), &vocab, &dims, &emb).unwrap();
        assert_eq!(bank.model(m).id, UNK);
    }
}
