//! C ABI for kgcap.
//!
//! Every fallible function returns a [`KgcapStatus`] and writes its result
//! through an out-pointer. On failure the message is available from
//! [`kgcap_last_error`] on the same thread. Handles are opaque and must be
//! released with their `_free` function; strings returned by the library
//! must be released with [`kgcap_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kgcap::decode::{beam_search, DecodeConfig};
use kgcap::expansion::{build_term_sets, DetectedObject, ExpansionConfig};
use kgcap::kg::{KnowledgeGraph, Term};
use kgcap::metrics::{evaluate, EvalCorpus};
use kgcap::nn::{checkpoint, term_tokens, CaptionModel, ImageInputs};
use kgcap::pipeline::RetrofitSettings;
use kgcap::vectors::{cosine_distance, VectorStore};
use kgcap::Error;
use serde::Deserialize;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KgcapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Lookup = 5,
    Config = 6,
    Numeric = 7,
    Io = 8,
    Json = 9,
    Panic = 10,
}

/// Knowledge graph handle.
pub struct KgcapGraph(KnowledgeGraph);

/// Word vector store handle.
pub struct KgcapVectors(VectorStore);

/// Caption model handle.
pub struct KgcapModel(CaptionModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(KgcapStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => KgcapStatus::Parse,
            Error::Validation(_) | Error::ValidationAt { .. } => KgcapStatus::Validation,
            Error::Lookup(_) => KgcapStatus::Lookup,
            Error::Config(_) => KgcapStatus::Config,
            Error::Numeric(_) => KgcapStatus::Numeric,
            Error::File { .. } | Error::Io(_) => KgcapStatus::Io,
            Error::Json(_) => KgcapStatus::Json,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(KgcapStatus::Json, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> KgcapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            KgcapStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            KgcapStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(KgcapStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(KgcapStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(KgcapStatus::Json, "output contains a NUL byte".into()))?;
    write_out(out, c.into_raw(), "out")
}

fn open(path: &str) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::file(Path::new(path), e).into())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn kgcap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn kgcap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a CSV edge list (`relation,start,end[,weight]`).
///
/// # Safety
/// `csv` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_graph_from_csv(csv: *const c_char, out: *mut *mut KgcapGraph) -> KgcapStatus {
    guard(|| {
        let g = KnowledgeGraph::ingest(str_arg(csv, "csv")?.as_bytes())?;
        write_out(out, Box::into_raw(Box::new(KgcapGraph(g))), "out")
    })
}

/// Reads a CSV edge list from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_graph_load(path: *const c_char, out: *mut *mut KgcapGraph) -> KgcapStatus {
    guard(|| {
        let g = KnowledgeGraph::ingest(open(str_arg(path, "path")?)?)?;
        write_out(out, Box::into_raw(Box::new(KgcapGraph(g))), "out")
    })
}

/// # Safety
/// `g` must be a live graph handle or null.
#[no_mangle]
pub unsafe extern "C" fn kgcap_graph_free(g: *mut KgcapGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of distinct terms.
///
/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_graph_term_count(g: *const KgcapGraph, out: *mut usize) -> KgcapStatus {
    guard(|| write_out(out, handle(g, "graph")?.0.term_count(), "out"))
}

/// Number of distinct `(relation, pair)` edges.
///
/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_graph_edge_count(g: *const KgcapGraph, out: *mut usize) -> KgcapStatus {
    guard(|| write_out(out, handle(g, "graph")?.0.edge_count(), "out"))
}

/// Terms within `max_hops` of `term` as a JSON array of
/// `{"term", "hops", "weight"}` objects, nearest first.
///
/// # Safety
/// Pointers must be valid; the returned string is owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn kgcap_graph_neighbors_json(
    g: *const KgcapGraph,
    term: *const c_char,
    max_hops: usize,
    out: *mut *mut c_char,
) -> KgcapStatus {
    guard(|| {
        let t = Term::new(str_arg(term, "term")?)?;
        let reached = handle(g, "graph")?.0.neighbors(&t, max_hops)?;
        let items: Vec<serde_json::Value> = reached
            .iter()
            .map(|r| serde_json::json!({"term": r.term, "hops": r.hops, "weight": r.weight}))
            .collect();
        write_string(out, serde_json::to_string(&items)?)
    })
}

/// Parses word vectors in text format (`word x1 x2 ...` per line).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_vectors_from_text(text: *const c_char, out: *mut *mut KgcapVectors) -> KgcapStatus {
    guard(|| {
        let v = VectorStore::load(str_arg(text, "text")?.as_bytes())?;
        write_out(out, Box::into_raw(Box::new(KgcapVectors(v))), "out")
    })
}

/// Reads word vectors from a text file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_vectors_load(path: *const c_char, out: *mut *mut KgcapVectors) -> KgcapStatus {
    guard(|| {
        let v = VectorStore::load(open(str_arg(path, "path")?)?)?;
        write_out(out, Box::into_raw(Box::new(KgcapVectors(v))), "out")
    })
}

/// # Safety
/// `v` must be a live vectors handle or null.
#[no_mangle]
pub unsafe extern "C" fn kgcap_vectors_free(v: *mut KgcapVectors) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// # Safety
/// `v` must be a live vectors handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_vectors_len(v: *const KgcapVectors, out: *mut usize) -> KgcapStatus {
    guard(|| write_out(out, handle(v, "vectors")?.0.len(), "out"))
}

/// # Safety
/// `v` must be a live vectors handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_vectors_dim(v: *const KgcapVectors, out: *mut usize) -> KgcapStatus {
    guard(|| write_out(out, handle(v, "vectors")?.0.dim(), "out"))
}

/// Copies the vector of `term` into `buf`, which must hold `len` values;
/// `len` must equal the store dimension.
///
/// # Safety
/// `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn kgcap_vectors_get(
    v: *const KgcapVectors,
    term: *const c_char,
    buf: *mut f64,
    len: usize,
) -> KgcapStatus {
    guard(|| {
        let store = &handle(v, "vectors")?.0;
        let t = Term::new(str_arg(term, "term")?)?;
        let src = store.get(&t).ok_or_else(|| Error::Lookup(t.to_string()))?;
        if len != src.len() {
            return Err(Error::Validation(format!("buffer holds {len} values, dimension is {}", src.len())).into());
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
        Ok(())
    })
}

/// `1 - cos(a, b)` clamped to `[0, 2]`; `1` when either vector is zero.
///
/// # Safety
/// `a` and `b` must be readable for `len` doubles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_cosine_distance(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> KgcapStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("a or b"));
        }
        let d = cosine_distance(std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len))?;
        write_out(out, d, "out")
    })
}

/// Retrofits `v` to `g`. `settings_json` is null for defaults or an object
/// with optional `alpha`, `beta` (`inverse-degree`, `constant`,
/// `edge-weight`), `beta_value`, `max_iterations` and `tolerance`.
///
/// # Safety
/// Handles must be live; `out` receives a new vectors handle.
#[no_mangle]
pub unsafe extern "C" fn kgcap_retrofit(
    v: *const KgcapVectors,
    g: *const KgcapGraph,
    settings_json: *const c_char,
    out: *mut *mut KgcapVectors,
) -> KgcapStatus {
    guard(|| {
        let settings: RetrofitSettings = match opt_str_arg(settings_json, "settings_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => RetrofitSettings::default(),
        };
        let q = kgcap::retrofit(&handle(v, "vectors")?.0, &handle(g, "graph")?.0, &settings.to_config())?;
        write_out(out, Box::into_raw(Box::new(KgcapVectors(q))), "out")
    })
}

/// Expands detections into related terms. `detections_json` is an array of
/// `{"label", "confidence"}`; `config_json` is null for defaults. The
/// result is a JSON object with `objects`, `direct`, `indirect`, `scene`.
///
/// # Safety
/// Handles must be live; the returned string is owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn kgcap_term_sets_json(
    g: *const KgcapGraph,
    v: *const KgcapVectors,
    detections_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> KgcapStatus {
    guard(|| {
        let raw: Vec<DetectedObject> = serde_json::from_str(str_arg(detections_json, "detections_json")?)?;
        let dets = raw
            .into_iter()
            .map(|d| DetectedObject::new(d.label.as_str(), d.confidence))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg: ExpansionConfig = match opt_str_arg(config_json, "config_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => ExpansionConfig::default(),
        };
        let sets = build_term_sets(&handle(g, "graph")?.0, &handle(v, "vectors")?.0, &dets, &cfg)?;
        write_string(out, serde_json::to_string(&sets)?)
    })
}

/// Scores results given as JSON lines of `{"image_id", "candidate",
/// "references"}`. Returns the metric report as JSON.
///
/// # Safety
/// `results_jsonl` must be a NUL-terminated string; the returned string is
/// owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn kgcap_evaluate_json(results_jsonl: *const c_char, out: *mut *mut c_char) -> KgcapStatus {
    guard(|| {
        let corpus = EvalCorpus::load_jsonl(str_arg(results_jsonl, "results_jsonl")?.as_bytes())?;
        write_string(out, evaluate(&corpus).to_json()?)
    })
}

/// Loads a model checkpoint written by `kgcap train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgcap_model_load(path: *const c_char, out: *mut *mut KgcapModel) -> KgcapStatus {
    guard(|| {
        let m = checkpoint::load(open(str_arg(path, "path")?)?)?;
        write_out(out, Box::into_raw(Box::new(KgcapModel(m))), "out")
    })
}

/// # Safety
/// `m` must be a live model handle or null.
#[no_mangle]
pub unsafe extern "C" fn kgcap_model_free(m: *mut KgcapModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TermLists {
    direct: Vec<Term>,
    indirect: Vec<Term>,
}

/// Beam-decodes one image. `terms_json` is null or an object with optional
/// `direct` and `indirect` term arrays, looked up in `v` (which may be
/// null when no terms are given). Returns a JSON array of
/// `{"caption", "logprob"}`, best first.
///
/// # Safety
/// `feature` must be readable for `feature_len` doubles; the returned
/// string is owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn kgcap_model_caption_json(
    m: *const KgcapModel,
    feature: *const f64,
    feature_len: usize,
    terms_json: *const c_char,
    v: *const KgcapVectors,
    beam_size: usize,
    max_length: usize,
    out: *mut *mut c_char,
) -> KgcapStatus {
    guard(|| {
        let model = &handle(m, "model")?.0;
        if feature.is_null() && feature_len > 0 {
            return Err(null("feature"));
        }
        let feature = if feature_len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(feature, feature_len).to_vec()
        };
        let terms: TermLists = match opt_str_arg(terms_json, "terms_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => TermLists::default(),
        };
        let store = v.as_ref().map(|s| &s.0);
        let inputs = ImageInputs {
            feature,
            direct: term_tokens(&terms.direct, store),
            indirect: term_tokens(&terms.indirect, store),
        };
        let emb = model.embed(&inputs)?;
        let cfg = DecodeConfig { beam_size, max_length };
        let beams = beam_search(model, &emb, &cfg)?;
        let items: Vec<serde_json::Value> = beams
            .iter()
            .map(|h| serde_json::json!({"caption": model.vocab.decode(h.surface()), "logprob": h.logprob}))
            .collect();
        write_string(out, serde_json::to_string(&items)?)
    })
}
