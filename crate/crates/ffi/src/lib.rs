//! C ABI over `afecl`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns an [`AfeclStatus`]; on
//! failure [`afecl_last_error`] describes the most recent error on the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use afecl::checkpoint::save_params;
use afecl::graph::{load_graph, Graph};
use afecl::tensor::TensorError;
use afecl::train::{train, TrainConfig, TrainError, TrainOutput};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AfeclStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Io = 7,
    Panic = 8,
}

/// A loaded dataset.
pub struct AfeclGraph {
    graph: Graph,
}

/// A trained encoder with its final embeddings and loss trace.
pub struct AfeclModel {
    output: TrainOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("NUL bytes stripped"));
}

fn fail(status: AfeclStatus, msg: impl std::fmt::Display) -> AfeclStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> AfeclStatus) -> AfeclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(AfeclStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

/// # Safety
/// `s` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, AfeclStatus> {
    if s.is_null() {
        return Err(fail(AfeclStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(AfeclStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn train_status(e: &TrainError) -> AfeclStatus {
    match e {
        TrainError::Config(_) | TrainError::Loss(_) => AfeclStatus::Config,
        TrainError::EmptyAnchors { .. } | TrainError::Edge(_) => AfeclStatus::Data,
        TrainError::NonFinite { .. } | TrainError::Tensor(TensorError::NonFinite { .. } | TensorError::ZeroNorm { .. }) => {
            AfeclStatus::Numeric
        }
        TrainError::Tensor(_) => AfeclStatus::Data,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn afecl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn afecl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a dataset directory into `*out`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn afecl_graph_load(dir: *const c_char, out: *mut *mut AfeclGraph) -> AfeclStatus {
    guard(|| {
        if out.is_null() {
            return fail(AfeclStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let dir = match read_str(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match load_graph(dir) {
            Ok(graph) => {
                *out = Box::into_raw(Box::new(AfeclGraph { graph }));
                AfeclStatus::Ok
            }
            Err(e) => fail(AfeclStatus::Data, e),
        }
    })
}

/// # Safety
/// `graph` must be null or a handle from [`afecl_graph_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn afecl_graph_free(graph: *mut AfeclGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Node, undirected edge and feature counts.
///
/// # Safety
/// `graph` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn afecl_graph_shape(
    graph: *const AfeclGraph,
    num_nodes: *mut usize,
    num_edges: *mut usize,
    num_features: *mut usize,
) -> AfeclStatus {
    guard(|| {
        let Some(g) = graph.as_ref() else {
            return fail(AfeclStatus::NullPointer, "graph is null");
        };
        for (p, v) in [
            (num_nodes, g.graph.num_nodes()),
            (num_edges, g.graph.num_undirected_edges()),
            (num_features, g.graph.num_features()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        AfeclStatus::Ok
    })
}

/// Trains on `graph` with a JSON training config (`temperature` required,
/// a `data` key is ignored) and stores the model in `*out`.
///
/// # Safety
/// `graph` must be a live handle, `config_json` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn afecl_train(
    graph: *const AfeclGraph,
    config_json: *const c_char,
    out: *mut *mut AfeclModel,
) -> AfeclStatus {
    guard(|| {
        if out.is_null() {
            return fail(AfeclStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(g) = graph.as_ref() else {
            return fail(AfeclStatus::NullPointer, "graph is null");
        };
        let text = match read_str(config_json, "config_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let mut value: serde_json::Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return fail(AfeclStatus::Config, format!("config: {e}")),
        };
        if let Some(obj) = value.as_object_mut() {
            obj.remove("data");
        }
        let cfg: TrainConfig = match serde_json::from_value(value) {
            Ok(c) => c,
            Err(e) => return fail(AfeclStatus::Config, format!("config: {e}")),
        };
        match train(&g.graph, &cfg) {
            Ok(output) => {
                *out = Box::into_raw(Box::new(AfeclModel { output }));
                AfeclStatus::Ok
            }
            Err(e) => fail(train_status(&e), e),
        }
    })
}

/// # Safety
/// `model` must be null or a handle from [`afecl_train`], freed once.
#[no_mangle]
pub unsafe extern "C" fn afecl_model_free(model: *mut AfeclModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding matrix shape: one row per node.
///
/// # Safety
/// `model` must be a live handle; `rows` and `cols` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn afecl_model_embedding_shape(model: *const AfeclModel, rows: *mut usize, cols: *mut usize) -> AfeclStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(AfeclStatus::NullPointer, "model is null");
        };
        if rows.is_null() || cols.is_null() {
            return fail(AfeclStatus::NullPointer, "rows or cols is null");
        }
        let (r, c) = m.output.embeddings.h.shape();
        *rows = r;
        *cols = c;
        AfeclStatus::Ok
    })
}

/// Copies the row-major embeddings into `buf`, which holds `len` doubles.
///
/// # Safety
/// `model` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn afecl_model_copy_embeddings(model: *const AfeclModel, buf: *mut f64, len: usize) -> AfeclStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(AfeclStatus::NullPointer, "model is null");
        };
        if buf.is_null() {
            return fail(AfeclStatus::NullPointer, "buf is null");
        }
        let data = m.output.embeddings.h.data();
        if len < data.len() {
            return fail(
                AfeclStatus::BufferTooSmall,
                format!("buffer holds {len} values, embeddings need {}", data.len()),
            );
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        AfeclStatus::Ok
    })
}

/// Loss of the last training epoch.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn afecl_model_final_loss(model: *const AfeclModel, out: *mut f64) -> AfeclStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(AfeclStatus::NullPointer, "model is null");
        };
        if out.is_null() {
            return fail(AfeclStatus::NullPointer, "out is null");
        }
        *out = m.output.trace.last().map(|r| r.loss).unwrap_or(f64::NAN);
        AfeclStatus::Ok
    })
}

/// Writes `params.json` and `params.bin` into `dir`.
///
/// # Safety
/// `model` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn afecl_model_save(model: *const AfeclModel, dir: *const c_char) -> AfeclStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(AfeclStatus::NullPointer, "model is null");
        };
        let dir = match read_str(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match save_params(Path::new(dir), &m.output.params) {
            Ok(()) => AfeclStatus::Ok,
            Err(e) => fail(AfeclStatus::Io, e),
        }
    })
}
