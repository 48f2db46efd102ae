use std::collections::BTreeSet;

use super::{normalize_key, CorpusError, ModelMeta, Result};

/// 20 half-decade buckets plus one for unknown size.
pub const N_SIZE_BUCKETS: usize = 21;
pub const UNKNOWN_SIZE_BUCKET: usize = 20;

/// Half-decade size bucket: `clamp(floor(2·(log10 p − 4)), 0, 19)`, or
/// [`UNKNOWN_SIZE_BUCKET`] when the count is absent.
///
/// Computed exactly as `floor(log10 p²) − 8` in integer arithmetic, so bucket
/// edges such as `10^4.5` are not subject to rounding.
pub fn size_bucket(param_count: Option<u64>) -> Result<usize> {
    match param_count {
        None => Ok(UNKNOWN_SIZE_BUCKET),
        Some(0) => Err(CorpusError::InvalidMeta("param_count must be >= 1".into())),
        Some(p) => {
            let sq = (p as u128) * (p as u128);
            let b = sq.ilog10() as i64 - 8;
            Ok(b.clamp(0, 19) as usize)
        }
    }
}

/// Family key for a model: the normalized explicit family, else the first
/// alphabetic run of the display name after any `org/` prefix.
pub fn family_key(meta: &ModelMeta) -> Option<String> {
    if let Some(f) = meta.family_key.as_deref() {
        let f = normalize_key(f);
        if !f.is_empty() {
            return Some(f);
        }
    }
    let name = meta.display_name.rsplit('/').next().unwrap_or("");
    let run: String = name
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    (!run.is_empty()).then_some(run)
}

/// Family keys in sorted order; index 0 is reserved for "unknown".
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct FamilyVocab {
    keys: Vec<String>,
}

impl FamilyVocab {
    pub fn build<'a>(models: impl IntoIterator<Item = &'a ModelMeta>) -> Self {
        let set: BTreeSet<String> = models.into_iter().filter_map(family_key).collect();
        Self { keys: set.into_iter().collect() }
    }

    pub fn from_keys(mut keys: Vec<String>) -> Self {
        keys.sort();
        keys.dedup();
        Self { keys }
    }

    /// Number of indices including the unknown slot.
    pub fn len(&self) -> usize {
        self.keys.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn index(&self, key: &str) -> usize {
        self.keys.binary_search_by(|k| k.as_str().cmp(key)).map_or(0, |i| i + 1)
    }

    /// Key for an index; `None` for the unknown slot.
    pub fn key(&self, index: usize) -> Option<&str> {
        index.checked_sub(1).and_then(|i| self.keys.get(i)).map(String::as_str)
    }
}

/// Family index of a model under `vocab`; 0 when unresolved or unseen.
pub fn resolve_family(meta: &ModelMeta, vocab: &FamilyVocab) -> usize {
    family_key(meta).map_or(0, |k| vocab.index(&k))
}
