//! C ABI over `anonsearch`.
//!
//! Every fallible call returns an [`AnsStatus`]; on failure the message is
//! available from `ans_last_error_message` on the same thread. Strings
//! returned through out-parameters are owned by the caller and must be
//! released with `ans_string_free`. Handles are released with their
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use anonsearch::anonymise::{decompose_seeded, DecomposeParams, DEFAULT_REMOVAL_FRACTION};
use anonsearch::attack::{attack, AttackMode, AttackParams};
use anonsearch::corpus::InvertedIndex;
use anonsearch::embed::EmbeddingStore;
use anonsearch::reconstruct::{anonymity, reconstruct_results, reconstructability};
use anonsearch::rng::{seeded_rng, stream};
use anonsearch::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    UnknownTerm = 5,
    InvalidArgument = 6,
    InsufficientCandidates = 7,
    Internal = 8,
}

/// Opaque word-vector store.
pub struct AnsEmbeddings(EmbeddingStore);

/// Opaque inverted index.
pub struct AnsIndex(InvertedIndex);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AnsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => AnsStatus::Io,
            Error::Parse { .. } | Error::Json(_) => AnsStatus::Parse,
            Error::UnknownTerm(_) => AnsStatus::UnknownTerm,
            Error::InsufficientCandidates { .. } => AnsStatus::InsufficientCandidates,
            Error::IterationCap(_) => AnsStatus::Internal,
            _ => AnsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(AnsStatus::Parse, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AnsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AnsStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AnsStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(AnsStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AnsStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(AnsStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(AnsStatus::NullPointer, format!("`{name}` is null")))
}

fn terms_arg(json: &str) -> Result<Vec<String>, Failure> {
    Ok(serde_json::from_str(json)?)
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on this thread.
#[no_mangle]
pub extern "C" fn ans_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn ans_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a GloVe-style text file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ans_embeddings_load(path: *const c_char, out: *mut *mut AnsEmbeddings) -> AnsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let store = EmbeddingStore::load(str_arg(path, "path")?, None)?;
        *out = Box::into_raw(Box::new(AnsEmbeddings(store)));
        Ok(())
    })
}

/// # Safety
/// `store` must come from `ans_embeddings_load`, or be null.
#[no_mangle]
pub unsafe extern "C" fn ans_embeddings_free(store: *mut AnsEmbeddings) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `store` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ans_embeddings_len(store: *const AnsEmbeddings) -> usize {
    store.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `store` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ans_embeddings_dim(store: *const AnsEmbeddings) -> usize {
    store.as_ref().map_or(0, |s| s.0.dim())
}

/// Opens a saved index or builds one from a JSON Lines corpus.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ans_index_open(path: *const c_char, out: *mut *mut AnsIndex) -> AnsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let index = InvertedIndex::open(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AnsIndex(index)));
        Ok(())
    })
}

/// # Safety
/// `index` must come from `ans_index_open`, or be null.
#[no_mangle]
pub unsafe extern "C" fn ans_index_free(index: *mut AnsIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// # Safety
/// `index` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ans_index_doc_count(index: *const AnsIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.doc_count())
}

/// Decomposes `query` and writes
/// `{"query","related","distractors","order","seed"}` as JSON to `out_json`.
///
/// # Safety
/// Pointers must be valid; `query` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ans_decompose(
    store: *const AnsEmbeddings,
    query: *const c_char,
    sigma: f64,
    n_related: usize,
    m_distractors: usize,
    pool_size: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> AnsStatus {
    guard(|| {
        let store = ref_arg(store, "store")?;
        let out = out_arg(out_json, "out_json")?;
        let params = DecomposeParams {
            n_related,
            m_distractors,
            sigma,
            pool_size,
            removal_fraction: DEFAULT_REMOVAL_FRACTION,
            seed,
        };
        let d = decompose_seeded(&store.0, str_arg(query, "query")?, &params)?;
        let json = serde_json::json!({
            "query": d.original,
            "related": d.related,
            "distractors": d.distractors,
            "order": d.transmission_order,
            "seed": seed,
        });
        *out = to_c_string(json.to_string());
        Ok(())
    })
}

/// Anonymity of `query` given a JSON array of transmitted terms.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ans_anonymity(
    store: *const AnsEmbeddings,
    query: *const c_char,
    terms_json: *const c_char,
    out_alpha: *mut f64,
) -> AnsStatus {
    guard(|| {
        let store = ref_arg(store, "store")?;
        let out = out_arg(out_alpha, "out_alpha")?;
        let terms = terms_arg(str_arg(terms_json, "terms_json")?)?;
        *out = anonymity(&store.0, str_arg(query, "query")?, &terms)?;
        Ok(())
    })
}

/// Rebuilds the result set from a JSON array of related terms at threshold
/// `l` and writes its reconstructability against `query`. Writes NaN when
/// `query` matches no document.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ans_reconstructability(
    index: *const AnsIndex,
    query: *const c_char,
    related_json: *const c_char,
    l: usize,
    out_rho: *mut f64,
) -> AnsStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let out = out_arg(out_rho, "out_rho")?;
        let related = terms_arg(str_arg(related_json, "related_json")?)?;
        let rebuilt = reconstruct_results(&index.0, &related, l)?;
        *out = reconstructability(&index.0, str_arg(query, "query")?, &rebuilt).unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Clusters a JSON array of received terms into `k` groups and writes
/// `{"standard": [..], "conservative": [..], "clusters": [[..], ..]}`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ans_attack(
    store: *const AnsEmbeddings,
    terms_json: *const c_char,
    k: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> AnsStatus {
    guard(|| {
        let store = ref_arg(store, "store")?;
        let out = out_arg(out_json, "out_json")?;
        let received = terms_arg(str_arg(terms_json, "terms_json")?)?;
        let mut rng = seeded_rng(seed, stream::ATTACK_BASE + k as u64);
        let guess = attack(&store.0, &received, &AttackParams::new(k, seed), &mut rng)?;
        let json = serde_json::json!({
            "standard": guess.guesses(AttackMode::Standard),
            "conservative": guess.guesses(AttackMode::Conservative),
            "clusters": guess.clustering.clusters(),
        });
        *out = to_c_string(json.to_string());
        Ok(())
    })
}
