//! C ABI over the chatea engine.
//!
//! Every fallible call returns a [`ChateaStatus`]; on failure the message is
//! kept per thread and read with [`chatea_last_error`]. Graphs, embedding
//! matrices and CSLS indexes cross the boundary as opaque handles that the
//! caller releases with the matching `_free` function. Strings handed out by
//! the library are released with [`chatea_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chatea::eval::{hits_from_ranks, mrr_from_ranks};
use chatea::features::{CslsConfig, CslsIndex, EmbeddingMatrix};
use chatea::kg::{load_kg, EntityId, KnowledgeGraph};
use chatea::prompt::{parse_scores, parse_verdict, CardOptions, EntityCard};
use chatea::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChateaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    UnknownEntity = 6,
    Numeric = 7,
    Backend = 8,
    Panic = 9,
}

/// A loaded knowledge graph.
pub struct ChateaKg(KnowledgeGraph);

/// A dense row-major embedding matrix.
pub struct ChateaEmbeddings(EmbeddingMatrix);

/// CSLS retrieval over a source and a target matrix.
pub struct ChateaCslsIndex(CslsIndex);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ChateaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => ChateaStatus::Io,
            Error::Parse { .. } | Error::Json(_) | Error::Config(_) => ChateaStatus::Parse,
            Error::Integrity(_) | Error::InvalidArgument(_) => ChateaStatus::InvalidArgument,
            Error::UnknownEntity(_) => ChateaStatus::UnknownEntity,
            Error::Numeric(_) => ChateaStatus::Numeric,
            Error::Backend(_) => ChateaStatus::Backend,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ChateaStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure or panic, and turns the outcome into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ChateaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ChateaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            ChateaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(ChateaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ChateaStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(ChateaStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(ChateaStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("string contains a nul byte"))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn chatea_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn chatea_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn chatea_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a graph from a triples file and an entity-name file.
///
/// # Safety
/// Paths must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chatea_kg_load(
    triples_path: *const c_char,
    names_path: *const c_char,
    temporal: bool,
    out: *mut *mut ChateaKg,
) -> ChateaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let triples = str_arg(triples_path, "triples_path")?;
        let names = str_arg(names_path, "names_path")?;
        let kg = load_kg(Path::new(triples), Path::new(names), temporal)?;
        *out = Box::into_raw(Box::new(ChateaKg(kg)));
        Ok(())
    })
}

/// # Safety
/// `kg` must be null or a handle from [`chatea_kg_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn chatea_kg_free(kg: *mut ChateaKg) {
    if !kg.is_null() {
        drop(Box::from_raw(kg));
    }
}

/// # Safety
/// `kg` must be a live handle; `entities` and `facts` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chatea_kg_counts(kg: *const ChateaKg, entities: *mut usize, facts: *mut usize) -> ChateaStatus {
    guard(|| {
        let kg = &handle(kg, "kg")?.0;
        out_ptr(entities, "entities")?;
        out_ptr(facts, "facts")?;
        *entities = kg.entity_count();
        *facts = kg.facts().len();
        Ok(())
    })
}

/// Renders the entity card (code literal, or key-value text when `code` is
/// false) with at most `tuple_cap` tuples. Free the result with
/// [`chatea_string_free`].
///
/// # Safety
/// `kg` must be a live handle; `description` null or nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chatea_kg_card(
    kg: *const ChateaKg,
    entity_id: u64,
    description: *const c_char,
    tuple_cap: usize,
    code: bool,
    out: *mut *mut c_char,
) -> ChateaStatus {
    guard(|| {
        let kg = &handle(kg, "kg")?.0;
        out_ptr(out, "out")?;
        let description = if description.is_null() { "" } else { str_arg(description, "description")? };
        let opts = CardOptions {
            tuple_cap,
            code,
            ..CardOptions::default()
        };
        let card = EntityCard::from_kg(kg, EntityId(entity_id), description, &opts)?;
        *out = to_c_string(card.render(code))?;
        Ok(())
    })
}

/// Copies `rows * dim` doubles, row-major, into a new matrix.
///
/// # Safety
/// `data` must point to `rows * dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chatea_embeddings_new(
    data: *const f64,
    rows: usize,
    dim: usize,
    out: *mut *mut ChateaEmbeddings,
) -> ChateaStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let len = rows.checked_mul(dim).ok_or_else(|| invalid("rows * dim overflows"))?;
        if data.is_null() && len > 0 {
            return Err(Failure(ChateaStatus::NullPointer, "data is null".into()));
        }
        let values = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(data, len).to_vec() };
        let m = EmbeddingMatrix::new(rows, dim, values)?;
        *out = Box::into_raw(Box::new(ChateaEmbeddings(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`chatea_embeddings_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn chatea_embeddings_free(m: *mut ChateaEmbeddings) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Builds a CSLS index with neighbourhood size `k`. The matrices are copied,
/// so they may be freed afterwards.
///
/// # Safety
/// `src` and `tgt` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chatea_csls_new(
    src: *const ChateaEmbeddings,
    tgt: *const ChateaEmbeddings,
    k: usize,
    out: *mut *mut ChateaCslsIndex,
) -> ChateaStatus {
    guard(|| {
        let src = &handle(src, "src")?.0;
        let tgt = &handle(tgt, "tgt")?.0;
        out_ptr(out, "out")?;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let index = CslsIndex::new(src, tgt, &CslsConfig { neighborhood_k: k })?;
        *out = Box::into_raw(Box::new(ChateaCslsIndex(index)));
        Ok(())
    })
}

/// # Safety
/// `index` must be null or a handle from [`chatea_csls_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn chatea_csls_free(index: *mut ChateaCslsIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Writes the `scope` best target rows for source row `row`, best first.
/// `written` receives the count, which is below `scope` only when the
/// target side has fewer rows.
///
/// # Safety
/// `index` must be a live handle; `rows_out` and `scores_out` must hold
/// `scope` elements; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chatea_csls_topk(
    index: *const ChateaCslsIndex,
    row: usize,
    scope: usize,
    rows_out: *mut usize,
    scores_out: *mut f64,
    written: *mut usize,
) -> ChateaStatus {
    guard(|| {
        let index = &handle(index, "index")?.0;
        out_ptr(rows_out, "rows_out")?;
        out_ptr(scores_out, "scores_out")?;
        out_ptr(written, "written")?;
        if scope == 0 {
            return Err(invalid("scope must be at least 1"));
        }
        if row >= index.source_count() {
            return Err(invalid(format!("row {row} out of range ({} source rows)", index.source_count())));
        }
        let top = index.top(row, scope);
        for (i, c) in top.iter().enumerate() {
            *rows_out.add(i) = c.row;
            *scores_out.add(i) = c.score;
        }
        *written = top.len();
        Ok(())
    })
}

/// Parses the four similarity scores (name, description, structure, time)
/// from a model reply.
///
/// # Safety
/// `reply` must be nul-terminated; `out` must hold 4 bytes.
#[no_mangle]
pub unsafe extern "C" fn chatea_parse_scores(reply: *const c_char, out: *mut u8) -> ChateaStatus {
    guard(|| {
        let reply = str_arg(reply, "reply")?;
        out_ptr(out, "out")?;
        let scores = parse_scores(reply).map_err(|e| Failure(ChateaStatus::Parse, e.to_string()))?;
        for (i, v) in scores.components().into_iter().enumerate() {
            *out.add(i) = v;
        }
        Ok(())
    })
}

/// Reads a `[YES]`/`[NO]` verdict. Lenient mode also accepts lowercase
/// brackets and bare uppercase words.
///
/// # Safety
/// `reply` must be nul-terminated; `satisfied` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chatea_parse_verdict(reply: *const c_char, lenient: bool, satisfied: *mut bool) -> ChateaStatus {
    guard(|| {
        let reply = str_arg(reply, "reply")?;
        out_ptr(satisfied, "satisfied")?;
        let v = parse_verdict(reply, lenient).map_err(|e| Failure(ChateaStatus::Parse, e.to_string()))?;
        *satisfied = v.satisfied;
        Ok(())
    })
}

/// Hits@k and MRR over 1-based gold ranks; a rank of 0 marks a gold entity
/// missing from the ranking and counts as a miss.
///
/// # Safety
/// `ranks` must hold `n` elements; `hits` and `mrr` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chatea_metrics(
    ranks: *const u32,
    n: usize,
    k: usize,
    hits: *mut f64,
    mrr: *mut f64,
) -> ChateaStatus {
    guard(|| {
        out_ptr(hits, "hits")?;
        out_ptr(mrr, "mrr")?;
        if ranks.is_null() && n > 0 {
            return Err(Failure(ChateaStatus::NullPointer, "ranks is null".into()));
        }
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let raw = if n == 0 { &[][..] } else { std::slice::from_raw_parts(ranks, n) };
        let ranks: Vec<Option<usize>> = raw.iter().map(|&r| (r > 0).then_some(r as usize)).collect();
        *hits = hits_from_ranks(&ranks, k);
        *mrr = mrr_from_ranks(&ranks);
        Ok(())
    })
}
