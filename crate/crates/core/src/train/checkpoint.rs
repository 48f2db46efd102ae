//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `MRECCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the UTF-8 JSON header, then
//! every array as raw little-endian `f32` in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochLog, TrainConfig};
use crate::corpus::{DatasetMeta, ModelMeta};
use crate::embed::{DescriptionEmbedder, FeatureBank, Vocab};
use crate::numerics::{AdamW, AdamWHyper, ParamStore};
use crate::scorer::{param_shapes, Scorer, ScorerError};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MRECCKPT";
const OPT_M: &str = "adamw.m/";
const OPT_V: &str = "adamw.v/";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// A trained (or freshly initialized) scorer with everything needed to use
/// it: the config it was trained with, its vocabularies and the metadata of
/// every entity it knows.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub models: Vec<ModelMeta>,
    pub datasets: Vec<DatasetMeta>,
    pub store: ParamStore<f32>,
    pub optimizer: Option<AdamW<f32>>,
    pub best_val_tau_w: Option<f64>,
    /// Epoch the parameters come from (0 = initialization).
    pub epoch: usize,
    pub history: Vec<EpochLog>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset from the start of the data section.
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    hyper: AdamWHyper,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: TrainConfig,
    vocab: Vocab,
    models: Vec<ModelMeta>,
    datasets: Vec<DatasetMeta>,
    best_val_tau_w: Option<f64>,
    epoch: usize,
    history: Vec<EpochLog>,
    optimizer: Option<OptimizerHeader>,
    array_count: usize,
    arrays: Vec<ArrayEntry>,
}

impl Checkpoint {
    pub fn scorer(&self) -> std::result::Result<Scorer<f32>, ScorerError> {
        Scorer::from_parts(self.config.scorer, self.vocab.clone(), self.store.clone())
    }

    /// Feature bank over every entity recorded in the checkpoint.
    pub fn feature_bank(&self, embedder: &dyn DescriptionEmbedder) -> crate::embed::Result<FeatureBank> {
        let mut bank = FeatureBank::new();
        bank.add_all(&self.models, &self.datasets, &self.vocab, &self.config.scorer.dims, embedder)?;
        Ok(bank)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays: Vec<(String, usize, usize, &[f32])> =
            self.store.iter().map(|(_, p)| (p.name.clone(), p.rows, p.cols, p.data.as_slice())).collect();
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [(OPT_M, &opt.m), (OPT_V, &opt.v)] {
                for ((_, p), m) in self.store.iter().zip(moments) {
                    arrays.push((format!("{prefix}{}", p.name), p.rows, p.cols, m.as_slice()));
                }
            }
        }
        let mut offset = 0u64;
        let manifest: Vec<ArrayEntry> = arrays
            .iter()
            .map(|(name, rows, cols, data)| {
                let bytes = 4 * data.len() as u64;
                let e = ArrayEntry { name: name.clone(), rows: *rows, cols: *cols, offset, bytes };
                offset += bytes;
                e
            })
            .collect();
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            models: self.models.clone(),
            datasets: self.datasets.clone(),
            best_val_tau_w: self.best_val_tau_w,
            epoch: self.epoch,
            history: self.history.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader { hyper: o.hyper, step: o.step }),
            array_count: manifest.len(),
            arrays: manifest,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, _, data) in &arrays {
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(if bytes.len() >= 8 && &bytes[..8] != MAGIC {
                CheckpointError::BadMagic
            } else {
                CheckpointError::Truncated(format!("{} bytes is shorter than the preamble", bytes.len()))
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CheckpointError::Truncated(format!("header of {hlen} bytes runs past the end of the file")))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..data_start]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: header.format_version, expected: FORMAT_VERSION });
        }
        if header.array_count != header.arrays.len() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "header declares {} arrays but lists {}",
                header.array_count,
                header.arrays.len()
            )));
        }
        let data = &bytes[data_start..];
        let mut expected_offset = 0u64;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in &header.arrays {
            let want = (e.rows as u64).checked_mul(e.cols as u64).and_then(|n| n.checked_mul(4));
            if want != Some(e.bytes) || e.offset != expected_offset {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "array {} declares {}x{} but {} bytes at offset {}",
                    e.name, e.rows, e.cols, e.bytes, e.offset
                )));
            }
            let end = e.offset + e.bytes;
            if end > data.len() as u64 {
                return Err(CheckpointError::Truncated(format!("array {} ends past the end of the file", e.name)));
            }
            let raw = &data[e.offset as usize..end as usize];
            let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            arrays.push((e, values));
            expected_offset = end;
        }
        if expected_offset != data.len() as u64 {
            return Err(CheckpointError::ShapeMismatch(format!(
                "manifest covers {expected_offset} data bytes but the file holds {}",
                data.len()
            )));
        }

        let mut store = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for (e, values) in arrays {
            if let Some(rest) = e.name.strip_prefix(OPT_M) {
                m.push((rest.to_string(), values));
            } else if let Some(rest) = e.name.strip_prefix(OPT_V) {
                v.push((rest.to_string(), values));
            } else {
                store.add(e.name.clone(), e.rows, e.cols, values);
            }
        }
        let optimizer = match header.optimizer {
            None if m.is_empty() && v.is_empty() => None,
            None => return Err(CheckpointError::Header("optimizer moments without optimizer state".into())),
            Some(o) => {
                let names: Vec<&str> = store.iter().map(|(_, p)| p.name.as_str()).collect();
                let aligned = |mom: &[(String, Vec<f32>)]| {
                    mom.len() == names.len() && mom.iter().zip(&names).all(|((n, _), want)| n == want)
                };
                if !aligned(&m) || !aligned(&v) {
                    return Err(CheckpointError::ShapeMismatch("optimizer moments do not match the parameters".into()));
                }
                Some(AdamW {
                    hyper: o.hyper,
                    step: o.step,
                    m: m.into_iter().map(|(_, x)| x).collect(),
                    v: v.into_iter().map(|(_, x)| x).collect(),
                })
            }
        };
        let ck = Checkpoint {
            config: header.config,
            vocab: header.vocab,
            models: header.models,
            datasets: header.datasets,
            store,
            optimizer,
            best_val_tau_w: header.best_val_tau_w,
            epoch: header.epoch,
            history: header.history,
        };
        // Parameter shapes must agree with the configuration they claim.
        let expected = param_shapes(&ck.config.scorer, &ck.vocab);
        let got: Vec<(&str, usize, usize)> = ck.store.iter().map(|(_, p)| (p.name.as_str(), p.rows, p.cols)).collect();
        if got != expected {
            let first = expected.iter().zip(&got).find(|(a, b)| a != b);
            return Err(CheckpointError::ShapeMismatch(match first {
                Some((want, have)) => format!("parameter {have:?} where the config implies {want:?}"),
                None => format!("{} parameters stored, config implies {}", got.len(), expected.len()),
            }));
        }
        Ok(ck)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
