//! C ABI over the inbedder engine.
//!
//! Every function returns an [`InbStatus`]; on failure the message is kept in
//! a thread-local slot readable with [`inb_last_error`]. Handles are opaque
//! and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use inbedder::backend::GenerationRecord;
use inbedder::encoding::{direct_aggregate, EncodingSpec, Method};
use inbedder::math::Embedding;
use inbedder::pipeline::{BackendSpec, Backends, Pipeline};
use inbedder::prompting::PromptTemplate;
use inbedder::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    DimensionMismatch = 4,
    Degenerate = 5,
    BufferTooSmall = 6,
    Backend = 7,
    Io = 8,
    Panic = 9,
}

/// A decoded generation record.
pub struct InbRecord {
    inner: GenerationRecord,
}

/// A backend plus prompt template, ready to embed.
pub struct InbEngine {
    pipeline: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> InbStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::LengthMismatch { .. } => InbStatus::DimensionMismatch,
        Error::ZeroVector
        | Error::DegenerateInput(_)
        | Error::DegenerateRecord(_)
        | Error::EmptyEmbedding
        | Error::EmptyList
        | Error::LayerMissing(_)
        | Error::KTooLarge { .. } => InbStatus::Degenerate,
        Error::BackendUnreachable(_) | Error::Protocol(_) | Error::MissingConfigEntry { .. } | Error::MissingRecord(_) => {
            InbStatus::Backend
        }
        Error::Io(_) | Error::CorruptFile(_) => InbStatus::Io,
        _ => InbStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (InbStatus, String)>) -> InbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside inbedder".into());
            InbStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (InbStatus, String)>;
}

impl<T> OrStatus<T> for inbedder::Result<T> {
    fn or_status(self) -> Result<T, (InbStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (InbStatus, String) {
    (InbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (InbStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn string<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, (InbStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (InbStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), (InbStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

unsafe fn copy_embedding(e: &Embedding, out: *mut f64, cap: usize, written: *mut usize) -> Result<(), (InbStatus, String)> {
    if !written.is_null() {
        *written = e.dim();
    }
    if cap < e.dim() {
        return Err((InbStatus::BufferTooSmall, format!("need {} values, buffer holds {cap}", e.dim())));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    std::ptr::copy_nonoverlapping(e.values().as_ptr(), out, e.dim());
    Ok(())
}

fn embedding(values: &[f64]) -> Result<Embedding, (InbStatus, String)> {
    Embedding::new(values.to_vec()).or_status()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn inb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn inb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `a` and `b` point to `dim` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn inb_cosine(a: *const f64, b: *const f64, dim: usize, out: *mut f64) -> InbStatus {
    guard(|| {
        let a = embedding(slice(a, dim, "a")?)?;
        let b = embedding(slice(b, dim, "b")?)?;
        let c = inbedder::math::cosine_similarity(&a, &b).or_status()?;
        write_out(out, c, "out")
    })
}

/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn inb_harmonic_mean(a: f64, b: f64, out: *mut f64) -> InbStatus {
    guard(|| write_out(out, inbedder::math::harmonic_mean(a, b).or_status()?, "out"))
}

/// # Safety
/// `x` and `y` point to `n` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn inb_spearman(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> InbStatus {
    guard(|| {
        let r = inbedder::metrics::spearman(slice(x, n, "x")?, slice(y, n, "y")?).or_status()?;
        write_out(out, r, "out")
    })
}

/// # Safety
/// `truth` and `pred` point to `n` labels; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn inb_v_measure(truth: *const u32, pred: *const u32, n: usize, beta: f64, out: *mut f64) -> InbStatus {
    guard(|| {
        let v = inbedder::clustering::v_measure(slice(truth, n, "truth")?, slice(pred, n, "pred")?, beta).or_status()?;
        write_out(out, v, "out")
    })
}

/// Seeded k-means over `n` row-major points of `dim` doubles.
///
/// # Safety
/// `points` holds `n * dim` doubles, `labels_out` room for `n` labels;
/// `inertia_out` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn inb_kmeans(
    points: *const f64,
    n: usize,
    dim: usize,
    k: usize,
    seed: u64,
    labels_out: *mut u32,
    inertia_out: *mut f64,
) -> InbStatus {
    guard(|| {
        if dim == 0 {
            return Err((InbStatus::InvalidArgument, "dim must be positive".into()));
        }
        let total = n.checked_mul(dim).ok_or((InbStatus::InvalidArgument, "n * dim overflows".into()))?;
        let flat = slice(points, total, "points")?;
        let rows: Vec<Embedding> = flat.chunks_exact(dim).map(embedding).collect::<Result<_, _>>()?;
        let a = inbedder::clustering::kmeans(&rows, k, seed).or_status()?;
        if labels_out.is_null() {
            return Err(null("labels_out"));
        }
        for (i, &l) in a.labels.iter().enumerate() {
            *labels_out.add(i) = l as u32;
        }
        if !inertia_out.is_null() {
            *inertia_out = a.inertia;
        }
        Ok(())
    })
}

/// Parses a generation record in the wire JSON format.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn inb_record_from_json(json: *const c_char, out: *mut *mut InbRecord) -> InbStatus {
    guard(|| {
        let record = inbedder::backend::wire::record_from_json(string(json, "json")?).or_status()?;
        write_out(out, Box::into_raw(Box::new(InbRecord { inner: record })), "out")
    })
}

/// # Safety
/// `record` came from [`inb_record_from_json`] or is NULL.
#[no_mangle]
pub unsafe extern "C" fn inb_record_free(record: *mut InbRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// # Safety
/// `record` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn inb_record_dim(record: *const InbRecord) -> usize {
    record.as_ref().map_or(0, |r| r.inner.dim)
}

/// Pools a record with a direct method (`avg-gen`, `avg-ppt`, `1st-gen`,
/// `last-gen`, `avg-all`). `*written` receives the dimension even when the
/// buffer is too small.
///
/// # Safety
/// `record` is a live handle, `method` a NUL-terminated string, `out` holds
/// `cap` doubles; `written` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn inb_aggregate(
    record: *const InbRecord,
    method: *const c_char,
    layer: i64,
    out: *mut f64,
    cap: usize,
    written: *mut usize,
) -> InbStatus {
    guard(|| {
        let r = record.as_ref().ok_or_else(|| null("record"))?;
        let m: Method = string(method, "method")?.parse().or_status()?;
        let e = direct_aggregate(&r.inner, m, layer).or_status()?;
        copy_embedding(&e, out, cap, written)
    })
}

/// Opens a backend from `synthetic:FILE`, `replay:FILE` or an http(s) URL.
///
/// # Safety
/// `backend` is a NUL-terminated string, `template_path` one or NULL; `out`
/// is writable.
#[no_mangle]
pub unsafe extern "C" fn inb_engine_open(
    backend: *const c_char,
    template_path: *const c_char,
    out: *mut *mut InbEngine,
) -> InbStatus {
    guard(|| {
        let spec: BackendSpec = string(backend, "backend")?.parse().or_status()?;
        let template = if template_path.is_null() {
            None
        } else {
            Some(PromptTemplate::from_file(Path::new(string(template_path, "template_path")?)).or_status()?)
        };
        let backends = Backends::open(&spec, 4).or_status()?;
        let engine = InbEngine {
            pipeline: Pipeline::new(backends, template),
        };
        write_out(out, Box::into_raw(Box::new(engine)), "out")
    })
}

/// # Safety
/// `engine` came from [`inb_engine_open`] or is NULL.
#[no_mangle]
pub unsafe extern "C" fn inb_engine_free(engine: *mut InbEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Embeds `input` under `instruction`. `spec_json` is an encoding spec such as
/// `{"method":"re-enc"}`, or NULL for greedy `avg-gen` at the last layer.
///
/// # Safety
/// `engine` is a live handle; strings are NUL-terminated; `out` holds `cap`
/// doubles; `written` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn inb_engine_embed(
    engine: *const InbEngine,
    input: *const c_char,
    instruction: *const c_char,
    spec_json: *const c_char,
    out: *mut f64,
    cap: usize,
    written: *mut usize,
) -> InbStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        let spec = if spec_json.is_null() {
            EncodingSpec::new(Method::AvgGen)
        } else {
            serde_json::from_str(string(spec_json, "spec_json")?).map_err(|e| (InbStatus::InvalidArgument, e.to_string()))?
        };
        let (input, instruction) = (string(input, "input")?, string(instruction, "instruction")?);
        let encoded = engine
            .pipeline
            .encoder(&spec)
            .and_then(|enc| enc.encode(input, instruction))
            .or_status()?;
        copy_embedding(&encoded.embedding, out, cap, written)
    })
}
