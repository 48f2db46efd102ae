use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbedError, Result};

/// Dimension of frozen description vectors.
pub const DESC_DIM: usize = 1536;

const DEFAULT_REMOTE_MODEL: &str = "text-embedding-3-small";

/// Which description embedder to use; stored in checkpoints so inference
/// reproduces the training-time encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    HashedFallback {
        seed: u64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote {
        model: String,
        cache_dir: PathBuf,
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

fn default_dim() -> usize {
    DESC_DIM
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self::HashedFallback { seed: 0, dim: DESC_DIM }
    }
}

impl EmbedderConfig {
    pub fn dim(&self) -> usize {
        match self {
            Self::HashedFallback { dim, .. } | Self::Remote { dim, .. } => *dim,
        }
    }

    /// Instantiates the embedder. Remote endpoints read `EMBED_API_URL` and
    /// `EMBED_API_KEY` from the environment.
    pub fn build(&self) -> Result<Box<dyn DescriptionEmbedder>> {
        Ok(match self {
            Self::HashedFallback { seed, dim } => Box::new(HashedEmbedder::new(*seed, *dim)),
            Self::Remote { model, cache_dir, dim } => {
                Box::new(RemoteEmbedder::from_env(model.clone(), cache_dir.clone(), *dim)?)
            }
        })
    }

    pub fn remote_default(cache_dir: PathBuf) -> Self {
        Self::Remote { model: DEFAULT_REMOTE_MODEL.into(), cache_dir, dim: DESC_DIM }
    }
}

/// Maps free text to a fixed-size, unit-norm (or zero) vector.
pub trait DescriptionEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

/// Scales `v` to unit L2 norm; zero vectors are left alone.
pub fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn seeded_hash(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = super::tokenize::fnv1a64(&seed.to_le_bytes());
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// Signed feature hashing of word unigrams and bigrams.
///
/// The bucket comes from one seeded hash and the sign from a second hash
/// under an unrelated seed, so the two are independent.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    bucket_seed: u64,
    sign_seed: u64,
    dim: usize,
}

impl HashedEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { bucket_seed: mix64(seed), sign_seed: mix64(seed ^ 0x9e37_79b9_7f4a_7c15), dim }
    }

    fn add_feature(&self, acc: &mut [f64], feature: &str) {
        let bucket = (seeded_hash(self.bucket_seed, feature.as_bytes()) % self.dim as u64) as usize;
        let sign = if seeded_hash(self.sign_seed, feature.as_bytes()) & 1 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
}

/// Lowercased alphanumeric words of `text`.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

impl DescriptionEmbedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let w = words(text);
        let mut acc = vec![0.0f64; self.dim];
        for t in &w {
            self.add_feature(&mut acc, t);
        }
        for pair in w.windows(2) {
            self.add_feature(&mut acc, &format!("{} {}", pair[0], pair[1]));
        }
        l2_normalize(&mut acc);
        Ok(acc.into_iter().map(|x| x as f32).collect())
    }
}

/// Calls an HTTP embedding endpoint, caching every vector on disk.
///
/// Lookups go to the cache first; a miss triggers one POST of
/// `{"input", "model"}`. Cache files are named by the SHA-256 of the model
/// name and text and hold little-endian `f32` values.
pub struct RemoteEmbedder {
    url: Option<String>,
    api_key: Option<String>,
    model: String,
    cache_dir: PathBuf,
    dim: usize,
    write_lock: Mutex<()>,
}

impl RemoteEmbedder {
    pub fn new(url: Option<String>, api_key: Option<String>, model: String, cache_dir: PathBuf, dim: usize) -> Result<Self> {
        fs::create_dir_all(&cache_dir)?;
        Ok(Self { url, api_key, model, cache_dir, dim, write_lock: Mutex::new(()) })
    }

    pub fn from_env(model: String, cache_dir: PathBuf, dim: usize) -> Result<Self> {
        Self::new(std::env::var("EMBED_API_URL").ok(), std::env::var("EMBED_API_KEY").ok(), model, cache_dir, dim)
    }

    pub fn cache_path(&self, text: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(self.model.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        self.cache_dir.join(format!("{}.f32", hex::encode(h.finalize())))
    }

    fn read_cache(&self, path: &Path) -> Option<Vec<f32>> {
        let bytes = fs::read(path).ok()?;
        if bytes.len() != self.dim * 4 {
            log::warn!("ignoring cache file {} with {} bytes", path.display(), bytes.len());
            return None;
        }
        Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    /// Stores a vector; writes go through a temp file and rename so
    /// concurrent readers never see a partial file.
    pub fn write_cache(&self, text: &str, v: &[f32]) -> Result<()> {
        let path = self.cache_path(text);
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        for x in v {
            f.write_all(&x.to_le_bytes())?;
        }
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn fetch(&self, text: &str) -> Result<Vec<f32>> {
        let url = self.url.as_deref().ok_or_else(|| EmbedError::RemoteEmbedUnavailable("EMBED_API_URL not set".into()))?;
        let body = serde_json::json!({ "input": text, "model": self.model });
        let mut req = ureq::post(url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let resp: serde_json::Value = req
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| EmbedError::RemoteEmbedUnavailable(e.to_string()))?;
        let arr = resp
            .pointer("/data/0/embedding")
            .or_else(|| resp.get("embedding"))
            .and_then(|v| v.as_array())
            .ok_or_else(|| EmbedError::RemoteEmbedUnavailable("response has no embedding array".into()))?;
        let mut v: Vec<f64> = arr.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect();
        if v.len() != self.dim || v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::RemoteEmbedUnavailable(format!(
                "expected {} finite values, got {}",
                self.dim,
                v.len()
            )));
        }
        l2_normalize(&mut v);
        Ok(v.into_iter().map(|x| x as f32).collect())
    }
}

impl DescriptionEmbedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        if text.trim().is_empty() {
            return Ok(vec![0.0; self.dim]);
        }
        let path = self.cache_path(text);
        if let Some(v) = self.read_cache(&path) {
            return Ok(v);
        }
        let v = self.fetch(text)?;
        self.write_cache(text, &v)?;
        Ok(v)
    }
}
