//! C ABI for the modelrec ranking engine.
//!
//! Every fallible function returns an [`MrecStatus`]; on failure a message
//! is available from [`mrec_last_error`] on the same thread. Strings handed
//! out by the library are NUL-terminated UTF-8 JSON and must be released
//! with [`mrec_string_free`]. Handles are not thread-safe; use one per thread
//! or serialize access.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use modelrec::corpus::{Corpus, CorpusError};
use modelrec::recommend::{probe_prior, replace_pool, Candidates, PoolEntry, RecommendError, Recommender};
use modelrec::train::{Checkpoint, CheckpointError, TrainError};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrecStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8 or JSON input was malformed.
    InvalidInput = 2,
    /// A file could not be read or written.
    Io = 3,
    /// A checkpoint or corpus file is corrupt or of the wrong version.
    Format = 4,
    /// A candidate model is unknown to the checkpoint.
    UnknownModel = 5,
    /// A value was produced that is NaN or infinite.
    Numeric = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// A loaded checkpoint ready for inference.
pub struct MrecRecommender {
    checkpoint: Checkpoint,
    inner: Recommender,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MrecStatus, String);

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Failure(MrecStatus::InvalidInput, msg.into())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = if matches!(e, CheckpointError::Io(_)) { MrecStatus::Io } else { MrecStatus::Format };
        Failure(status, e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let status = match e {
            CorpusError::Io(_) => MrecStatus::Io,
            CorpusError::Format(_) => MrecStatus::Format,
            _ => MrecStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

impl From<RecommendError> for Failure {
    fn from(e: RecommendError) -> Self {
        let status = match &e {
            RecommendError::UnknownModel(_) => MrecStatus::UnknownModel,
            RecommendError::Train(TrainError::Checkpoint(_)) => MrecStatus::Format,
            RecommendError::Train(t) if t.is_numeric() => MrecStatus::Numeric,
            RecommendError::Scorer(modelrec::scorer::ScorerError::Numerics(_)) => MrecStatus::Numeric,
            _ => MrecStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MrecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MrecStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MrecStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be NULL or point to a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MrecStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::input(format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `p` must be NULL or a valid handle.
unsafe fn handle<'a>(p: *mut MrecRecommender) -> Result<&'a mut MrecRecommender, Failure> {
    p.as_mut().ok_or_else(|| Failure(MrecStatus::NullArgument, "recommender handle is NULL".into()))
}

/// # Safety
/// `out` must be NULL or writable.
unsafe fn write_json<T: serde::Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(MrecStatus::NullArgument, "output pointer is NULL".into()));
    }
    let s = serde_json::to_string(value).map_err(|e| Failure::input(e.to_string()))?;
    *out = CString::new(s).expect("JSON has no NUL").into_raw();
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mrec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mrec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string produced by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrec_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint file and prepares it for inference.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrec_recommender_open(path: *const c_char, out: *mut *mut MrecRecommender) -> MrecStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(MrecStatus::NullArgument, "output pointer is NULL".into()));
        }
        let checkpoint = Checkpoint::load(Path::new(text(path, "path")?))?;
        let inner = Recommender::new(&checkpoint)?;
        *out = Box::into_raw(Box::new(MrecRecommender { checkpoint, inner }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `h` must be NULL or a handle from [`mrec_recommender_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrec_recommender_free(h: *mut MrecRecommender) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of models that can be ranked without extra metadata.
///
/// # Safety
/// `h` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrec_recommender_model_count(h: *mut MrecRecommender, out: *mut usize) -> MrecStatus {
    guard(|| {
        let h = handle(h)?;
        let out = out.as_mut().ok_or_else(|| Failure(MrecStatus::NullArgument, "output pointer is NULL".into()))?;
        *out = h.inner.model_keys().len();
        Ok(())
    })
}

/// Reads the softmax temperature.
///
/// # Safety
/// `h` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mrec_recommender_get_tau(h: *mut MrecRecommender, out: *mut f64) -> MrecStatus {
    guard(|| {
        let h = handle(h)?;
        let out = out.as_mut().ok_or_else(|| Failure(MrecStatus::NullArgument, "output pointer is NULL".into()))?;
        *out = h.inner.tau();
        Ok(())
    })
}

/// Overrides the temperature. Rankings do not change; scores rescale.
///
/// # Safety
/// `h` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mrec_recommender_set_tau(h: *mut MrecRecommender, tau: f64) -> MrecStatus {
    guard(|| {
        let h = handle(h)?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Failure::input(format!("temperature must be positive and finite, got {tau}")));
        }
        h.inner.set_tau(tau);
        Ok(())
    })
}

/// Ranks models for a dataset known only by its description and writes the
/// top `k` as a JSON array of `{model_key, s_tilde, z_hat}` to `out_json`.
///
/// `candidates_json` may be NULL (rank every known model) or a JSON array of
/// model keys and/or model metadata objects.
///
/// # Safety
/// `h` must be a valid handle; string arguments NUL-terminated;
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn mrec_recommend_top_k(
    h: *mut MrecRecommender,
    description: *const c_char,
    task: *const c_char,
    metric: *const c_char,
    candidates_json: *const c_char,
    k: usize,
    out_json: *mut *mut c_char,
) -> MrecStatus {
    guard(|| {
        let h = handle(h)?;
        let (desc, task, metric) = (text(description, "description")?, text(task, "task")?, text(metric, "metric")?);
        let candidates = if candidates_json.is_null() {
            Candidates::default()
        } else {
            parse_candidates(text(candidates_json, "candidates")?)?
        };
        let ranked = h.inner.recommend_top_k(desc, task, metric, &candidates, k)?;
        write_json(out_json, &ranked)
    })
}

fn parse_candidates(json: &str) -> Result<Candidates, Failure> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Key(String),
        Meta(modelrec::corpus::ModelMeta),
    }
    let entries: Vec<Entry> = serde_json::from_str(json).map_err(|e| Failure::input(format!("candidates: {e}")))?;
    let mut c = Candidates { keys: Some(Vec::new()), extra: Vec::new() };
    for e in entries {
        match e {
            Entry::Key(k) => c.keys.as_mut().expect("set above").push(k),
            Entry::Meta(m) => c.extra.push(m),
        }
    }
    Ok(c)
}

/// Scores `n` known models (by key) for a described dataset, writing the
/// temperature-scaled scores to `out_scores` in input order.
///
/// # Safety
/// `keys` must point to `n` NUL-terminated strings and `out_scores` to `n`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mrec_score(
    h: *mut MrecRecommender,
    description: *const c_char,
    task: *const c_char,
    metric: *const c_char,
    keys: *const *const c_char,
    n: usize,
    out_scores: *mut f64,
) -> MrecStatus {
    guard(|| {
        let h = handle(h)?;
        let (desc, task, metric) = (text(description, "description")?, text(task, "task")?, text(metric, "metric")?);
        if n == 0 {
            return Err(Failure::input("no candidates to score"));
        }
        if keys.is_null() || out_scores.is_null() {
            return Err(Failure(MrecStatus::NullArgument, "keys or out_scores is NULL".into()));
        }
        let mut idx = Vec::with_capacity(n);
        for &k in std::slice::from_raw_parts(keys, n) {
            let key = modelrec::corpus::normalize_key(text(k, "model key")?);
            let i = h.inner.bank().model_index(&key).ok_or(RecommendError::UnknownModel(key))?;
            idx.push(i);
        }
        let scored = h.inner.score_cold(desc, task, metric, &idx)?;
        let out = std::slice::from_raw_parts_mut(out_scores, n);
        for (o, r) in out.iter_mut().zip(scored) {
            *o = r.s_tilde;
        }
        Ok(())
    })
}

/// Evaluates the checkpoint on a corpus file and writes the ranking report
/// as JSON.
///
/// # Safety
/// `ks` must point to `n_ks` values; other pointers as for the other calls.
#[no_mangle]
pub unsafe extern "C" fn mrec_evaluate(
    h: *mut MrecRecommender,
    corpus_path: *const c_char,
    ks: *const usize,
    n_ks: usize,
    out_json: *mut *mut c_char,
) -> MrecStatus {
    guard(|| {
        let h = handle(h)?;
        let corpus = Corpus::load(Path::new(text(corpus_path, "corpus path")?))?;
        let ks: &[usize] = if n_ks == 0 {
            &modelrec::eval::DEFAULT_KS
        } else if ks.is_null() {
            return Err(Failure(MrecStatus::NullArgument, "ks is NULL".into()));
        } else {
            std::slice::from_raw_parts(ks, n_ks)
        };
        if ks.contains(&0) {
            return Err(Failure::input("K values must be at least 1"));
        }
        let report = h.inner.evaluate_corpus(&corpus, ks)?;
        write_json(out_json, &report)
    })
}

/// Replaces each pool member by a comparable-scale recommended model.
/// `pool_json` and `catalog_json` are JSON arrays of
/// `{"model", "scale", "availability"?}`; `require_tag` may be NULL.
///
/// # Safety
/// String arguments NUL-terminated (except the optional NULL tag);
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn mrec_replace_pool(
    h: *mut MrecRecommender,
    pool_json: *const c_char,
    catalog_json: *const c_char,
    description: *const c_char,
    task: *const c_char,
    metric: *const c_char,
    tolerance: usize,
    require_tag: *const c_char,
    out_json: *mut *mut c_char,
) -> MrecStatus {
    guard(|| {
        let h = handle(h)?;
        let parse = |p, what| -> Result<Vec<PoolEntry>, Failure> {
            serde_json::from_str(text(p, what)?).map_err(|e| Failure::input(format!("{what}: {e}")))
        };
        let (pool, catalog) = (parse(pool_json, "pool")?, parse(catalog_json, "catalog")?);
        let tag = if require_tag.is_null() { None } else { Some(text(require_tag, "require_tag")?) };
        let (desc, task, metric) = (text(description, "description")?, text(task, "task")?, text(metric, "metric")?);
        let out = replace_pool(&mut h.inner, &pool, desc, task, metric, &catalog, tolerance, tag)?;
        write_json(out_json, &out)
    })
}

/// Writes the probe of the learned size/family prior as JSON.
///
/// # Safety
/// `h` must be a valid handle; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn mrec_probe_prior(h: *mut MrecRecommender, out_json: *mut *mut c_char) -> MrecStatus {
    guard(|| {
        let h = handle(h)?;
        let report = probe_prior(&h.checkpoint).map_err(RecommendError::from)?;
        write_json(out_json, &report)
    })
}
