//! C ABI over the core library.
//!
//! Every fallible call returns an [`NcStatus`]; on failure a message is kept
//! per thread and read back with [`nc_last_error`]. Objects cross the boundary
//! as opaque handles that the caller releases with the matching `*_free`.
//! Panics are caught at the boundary and reported as `NC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use noisecap::encode::{load_embedding_store, load_embedding_store_with_dim, EmbeddingStore, EncodeError, TextEncoder, TextEncoderConfig};
use noisecap::eval::{caption_image, content_words, DecodeConfig, EvalError, Strategy};
use noisecap::model::{load_checkpoint, CaptionModel, ModelError};
use noisecap::train::epsilon_from_embeddings;
use noisecap::world::Vocabulary;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    BufferTooSmall = 6,
    Model = 7,
    Panic = 8,
}

/// Loaded GDE1 embedding store.
pub struct NcStore(EmbeddingStore);

/// Deterministic synthetic text encoder over the grammar vocabulary.
pub struct NcTextEncoder(TextEncoder);

/// Caption decoder restored from a checkpoint.
pub struct NcModel {
    model: CaptionModel,
    vocab: Vocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(NcStatus, String);

impl From<EncodeError> for Failure {
    fn from(e: EncodeError) -> Self {
        let status = match &e {
            EncodeError::Io(_) => NcStatus::Io,
            EncodeError::DimensionMismatch { .. } => NcStatus::Dimension,
            EncodeError::InvalidConfig(_) | EncodeError::TokenOutOfRange(_) | EncodeError::World(_) => NcStatus::InvalidArgument,
            _ => NcStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match &e {
            ModelError::Io(_) => NcStatus::Io,
            ModelError::BadCheckpoint(_) | ModelError::VocabularyMismatch { .. } | ModelError::Json(_) => NcStatus::Format,
            ModelError::EmbeddingDim { .. } => NcStatus::Dimension,
            _ => NcStatus::Model,
        };
        Failure(status, e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::DimensionMismatch { .. } => Failure(NcStatus::Dimension, e.to_string()),
            EvalError::InvalidConfig(_) => Failure(NcStatus::InvalidArgument, e.to_string()),
            other => Failure(NcStatus::Model, other.to_string()),
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(NcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside noisecap");
            NcStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, "path")?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(NcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies `s` plus a terminating NUL into `buf`. `written` (if non-null)
/// receives the string length without the NUL, also when `buf` is too small.
unsafe fn put_str(s: &str, buf: *mut c_char, cap: usize, written: *mut usize) -> Result<(), Failure> {
    if !written.is_null() {
        *written = s.len();
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if cap < s.len() + 1 {
        return Err(Failure(NcStatus::BufferTooSmall, format!("buffer holds {cap} bytes, {} needed", s.len() + 1)));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

unsafe fn put_floats(values: &[f32], out: *mut f32, cap: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if cap < values.len() {
        return Err(Failure(NcStatus::BufferTooSmall, format!("buffer holds {cap} floats, {} needed", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn nc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a GDE1 file. `expected_dim` of 0 accepts any dimension.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_store_load(path: *const c_char, expected_dim: usize, out: *mut *mut NcStore) -> NcStatus {
    guard(|| {
        let p = path_arg(path)?;
        let store = if expected_dim == 0 { load_embedding_store(&p)? } else { load_embedding_store_with_dim(&p, expected_dim)? };
        put(out, NcStore(store))
    })
}

/// Number of vectors, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_store_len(store: *const NcStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.len())
}

/// Vector dimension, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_store_dim(store: *const NcStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.dim())
}

/// Copies vector `index` into `out` (capacity `cap` floats).
///
/// # Safety
/// `store` must be a live handle; `out` must hold `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn nc_store_vector(store: *const NcStore, index: usize, out: *mut f32, cap: usize) -> NcStatus {
    guard(|| {
        let s = &store.as_ref().ok_or_else(|| null("store"))?.0;
        if index >= s.len() {
            return Err(Failure(NcStatus::InvalidArgument, format!("index {index} out of range for {} vectors", s.len())));
        }
        put_floats(s.vector(index), out, cap)
    })
}

/// Copies the id of vector `index` into `buf`.
///
/// # Safety
/// `store` must be a live handle; `buf` must hold `cap` bytes; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn nc_store_id(store: *const NcStore, index: usize, buf: *mut c_char, cap: usize, written: *mut usize) -> NcStatus {
    guard(|| {
        let s = &store.as_ref().ok_or_else(|| null("store"))?.0;
        if index >= s.len() {
            return Err(Failure(NcStatus::InvalidArgument, format!("index {index} out of range for {} vectors", s.len())));
        }
        put_str(s.id(index), buf, cap, written)
    })
}

/// # Safety
/// `store` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nc_store_free(store: *mut NcStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Text encoder with the default configuration over the grammar vocabulary.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_text_encoder_new(out: *mut *mut NcTextEncoder) -> NcStatus {
    guard(|| {
        let enc = TextEncoder::new(TextEncoderConfig::default(), &Vocabulary::from_grammar())?;
        put(out, NcTextEncoder(enc))
    })
}

/// # Safety
/// `enc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_text_encoder_dim(enc: *const NcTextEncoder) -> usize {
    enc.as_ref().map_or(0, |e| e.0.dim())
}

/// Embeds `text` (words of the grammar vocabulary) into `out`.
///
/// # Safety
/// `enc` must be a live handle, `text` NUL-terminated, `out` must hold `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn nc_text_encoder_encode(enc: *const NcTextEncoder, text: *const c_char, out: *mut f32, cap: usize) -> NcStatus {
    guard(|| {
        let e = &enc.as_ref().ok_or_else(|| null("encoder"))?.0;
        let emb = e.encode_str(str_arg(text, "text")?)?;
        put_floats(&emb.values, out, cap)
    })
}

/// # Safety
/// `enc` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nc_text_encoder_free(enc: *mut NcTextEncoder) {
    if !enc.is_null() {
        drop(Box::from_raw(enc));
    }
}

/// Restores a decoder from a checkpoint written for the grammar vocabulary.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_model_load(path: *const c_char, out: *mut *mut NcModel) -> NcStatus {
    guard(|| {
        let vocab = Vocabulary::from_grammar();
        let model = load_checkpoint(&path_arg(path)?, &vocab)?.model;
        put(out, NcModel { model, vocab })
    })
}

/// Conditioning dimension the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_model_embed_dim(model: *const NcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().d_embed)
}

/// Decodes a caption for `embedding` (length `len`). `beam_width` 0 selects
/// greedy decoding. The caption is written space-separated, without bos/eos.
///
/// # Safety
/// `model` must be a live handle, `embedding` must hold `len` floats,
/// `buf` must hold `cap` bytes and `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn nc_model_caption(
    model: *const NcModel,
    embedding: *const f32,
    len: usize,
    beam_width: usize,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> NcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if embedding.is_null() {
            return Err(null("embedding"));
        }
        let emb = std::slice::from_raw_parts(embedding, len);
        let cfg = if beam_width == 0 {
            DecodeConfig::greedy()
        } else {
            DecodeConfig { strategy: Strategy::Beam, beam_width, ..DecodeConfig::default() }
        };
        let cfg = DecodeConfig { max_len: cfg.max_len.min(m.model.config().max_seq_len), ..cfg };
        let tokens = caption_image(&m.model, emb, &cfg)?;
        put_str(&content_words(&tokens, &m.vocab).join(" "), buf, cap, written)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nc_model_free(model: *mut NcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// ε estimate over `n_groups` caption groups. `values` holds the vectors
/// row-major (`dim` floats each), groups back to back with sizes `group_sizes`.
///
/// # Safety
/// `values` must hold `sum(group_sizes) * dim` floats, `group_sizes` must
/// hold `n_groups` entries and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_estimate_epsilon(
    values: *const f32,
    group_sizes: *const usize,
    n_groups: usize,
    dim: usize,
    out: *mut f64,
) -> NcStatus {
    guard(|| {
        if values.is_null() || group_sizes.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        if dim == 0 {
            return Err(Failure(NcStatus::InvalidArgument, "dim must be positive".into()));
        }
        let sizes = std::slice::from_raw_parts(group_sizes, n_groups);
        let total: usize = sizes.iter().sum();
        let flat = std::slice::from_raw_parts(values, total * dim);
        let mut groups = Vec::with_capacity(n_groups);
        let mut rows = flat.chunks_exact(dim);
        for &n in sizes {
            groups.push(rows.by_ref().take(n).map(<[f32]>::to_vec).collect::<Vec<_>>());
        }
        let eps = epsilon_from_embeddings(&groups).map_err(|e| Failure(NcStatus::InvalidArgument, e.to_string()))?;
        *out = eps;
        Ok(())
    })
}
