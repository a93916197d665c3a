//! C ABI over `motion_moments`.
//!
//! Every object is an opaque heap handle released with its `mm_*_free`
//! function. Fallible calls return an [`MmStatus`]; on failure the message is
//! available from [`mm_last_error`] on the same thread. Panics never cross the
//! boundary, they surface as `MM_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use motion_moments::feature_io::{load_tensor, save_tensor, FeatureTensor, FormatError};
use motion_moments::moments::{compute_embedding, Fusion, Level, MomentConfig, MomentEmbedding};
use motion_moments::retrieval::{build_index, load_index, rank, save_index, EmbeddingIndex};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Io = 4,
    Moment = 5,
    Retrieval = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmLevel {
    Patch = 0,
    Frame = 1,
    PatchDiff = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmFusion {
    Concat = 0,
    Sum = 1,
}

pub struct MmTensor(FeatureTensor);
pub struct MmConfig(MomentConfig);
pub struct MmEmbedding(MomentEmbedding);
pub struct MmIndex(EmbeddingIndex);

pub struct MmRankedList {
    ids: Vec<CString>,
    scores: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MmStatus, String);

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        let status = if matches!(e, FormatError::Io(_)) {
            MmStatus::Io
        } else {
            MmStatus::Format
        };
        Failure(status, e.to_string())
    }
}

impl From<motion_moments::moments::MomentError> for Failure {
    fn from(e: motion_moments::moments::MomentError) -> Self {
        Failure(MmStatus::Moment, e.to_string())
    }
}

impl From<motion_moments::retrieval::RetrievalError> for Failure {
    fn from(e: motion_moments::retrieval::RetrievalError) -> Self {
        Failure(MmStatus::Retrieval, e.to_string())
    }
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> MmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            MmStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(MmStatus::InvalidArgument, message.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies `s` plus a terminating NUL into `buf`. `needed` (if non-null)
/// receives the full size including the NUL.
unsafe fn copy_out(
    s: &str,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> Result<(), Failure> {
    let bytes = s.as_bytes();
    if !needed.is_null() {
        *needed = bytes.len() + 1;
    }
    if buf.is_null() || capacity < bytes.len() + 1 {
        return Err(Failure(
            MmStatus::BufferTooSmall,
            format!("need {} bytes, have {capacity}", bytes.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
    *buf.add(bytes.len()) = 0;
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next `mm_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `frames * patches * dim` floats (frame-major, then patch) into a new tensor.
#[no_mangle]
pub unsafe extern "C" fn mm_tensor_new(
    video_id: *const c_char,
    frames: usize,
    patches: usize,
    dim: usize,
    data: *const f32,
    out: *mut *mut MmTensor,
) -> MmStatus {
    guard(|| {
        let id = text(video_id, "video_id")?;
        let len = frames
            .checked_mul(patches)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| invalid("shape overflows"))?;
        if data.is_null() && len > 0 {
            return Err(null("data"));
        }
        let values = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        let tensor = FeatureTensor::new(id, frames, patches, dim, values)?;
        put(out, MmTensor(tensor))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_tensor_load(path: *const c_char, out: *mut *mut MmTensor) -> MmStatus {
    guard(|| {
        let tensor = load_tensor(Path::new(text(path, "path")?))?;
        put(out, MmTensor(tensor))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_tensor_save(tensor: *const MmTensor, path: *const c_char) -> MmStatus {
    guard(|| {
        save_tensor(&deref(tensor, "tensor")?.0, Path::new(text(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_tensor_shape(
    tensor: *const MmTensor,
    frames: *mut usize,
    patches: *mut usize,
    dim: *mut usize,
) -> MmStatus {
    guard(|| {
        let (t, p, d) = deref(tensor, "tensor")?.0.shape();
        *deref_mut(frames, "frames")? = t;
        *deref_mut(patches, "patches")? = p;
        *deref_mut(dim, "dim")? = d;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_tensor_free(tensor: *mut MmTensor) {
    release(tensor);
}

/// Weights (1,8,4), patch level, concat fusion, per-moment normalization on.
#[no_mangle]
pub unsafe extern "C" fn mm_config_default(out: *mut *mut MmConfig) -> MmStatus {
    guard(|| put(out, MmConfig(MomentConfig::default())))
}

/// Parses `key=value;...` text or a label such as `(1,8,4)-patch-concat`.
#[no_mangle]
pub unsafe extern "C" fn mm_config_parse(
    config_text: *const c_char,
    out: *mut *mut MmConfig,
) -> MmStatus {
    guard(|| {
        let s = text(config_text, "config_text")?.trim();
        let config = if s.starts_with('(') {
            MomentConfig::from_label(s)?
        } else {
            s.parse::<MomentConfig>()?
        };
        put(out, MmConfig(config))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_config_set_weights(
    config: *mut MmConfig,
    weights: *const f64,
    count: usize,
) -> MmStatus {
    guard(|| {
        let config = deref_mut(config, "config")?;
        if weights.is_null() {
            return Err(null("weights"));
        }
        let mut next = config.0.clone();
        next.weights = std::slice::from_raw_parts(weights, count).to_vec();
        next.validate()?;
        config.0 = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_config_set_level(config: *mut MmConfig, level: MmLevel) -> MmStatus {
    guard(|| {
        deref_mut(config, "config")?.0.level = match level {
            MmLevel::Patch => Level::Patch,
            MmLevel::Frame => Level::Frame,
            MmLevel::PatchDiff => Level::PatchDiff,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_config_set_fusion(config: *mut MmConfig, fusion: MmFusion) -> MmStatus {
    guard(|| {
        deref_mut(config, "config")?.0.fusion = match fusion {
            MmFusion::Concat => Fusion::Concat,
            MmFusion::Sum => Fusion::Sum,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_config_set_per_moment_normalize(
    config: *mut MmConfig,
    enabled: bool,
) -> MmStatus {
    guard(|| {
        deref_mut(config, "config")?.0.per_moment_normalize = enabled;
        Ok(())
    })
}

/// Canonical config text. On `MM_STATUS_BUFFER_TOO_SMALL`, `needed` holds the size to retry with.
#[no_mangle]
pub unsafe extern "C" fn mm_config_canonical(
    config: *const MmConfig,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> MmStatus {
    guard(|| {
        copy_out(
            &deref(config, "config")?.0.canonical(),
            buf,
            capacity,
            needed,
        )
    })
}

/// Label such as `(1,8,4)-patch-concat`.
#[no_mangle]
pub unsafe extern "C" fn mm_config_label(
    config: *const MmConfig,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> MmStatus {
    guard(|| copy_out(&deref(config, "config")?.0.label(), buf, capacity, needed))
}

#[no_mangle]
pub unsafe extern "C" fn mm_config_free(config: *mut MmConfig) {
    release(config);
}

#[no_mangle]
pub unsafe extern "C" fn mm_embed(
    tensor: *const MmTensor,
    config: *const MmConfig,
    out: *mut *mut MmEmbedding,
) -> MmStatus {
    guard(|| {
        let embedding =
            compute_embedding(&deref(tensor, "tensor")?.0, &deref(config, "config")?.0)?;
        put(out, MmEmbedding(embedding))
    })
}

/// Number of values in the embedding; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mm_embedding_dim(embedding: *const MmEmbedding) -> usize {
    embedding.as_ref().map_or(0, |e| e.0.dim())
}

/// Copies the unit-norm vector into `values` (at least `mm_embedding_dim` doubles).
#[no_mangle]
pub unsafe extern "C" fn mm_embedding_values(
    embedding: *const MmEmbedding,
    values: *mut f64,
    capacity: usize,
) -> MmStatus {
    guard(|| {
        let v = &deref(embedding, "embedding")?.0.vector;
        if values.is_null() {
            return Err(null("values"));
        }
        if capacity < v.len() {
            return Err(Failure(
                MmStatus::BufferTooSmall,
                format!("need {} values, have {capacity}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), values, v.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_embedding_free(embedding: *mut MmEmbedding) {
    release(embedding);
}

/// Builds an index from `count` embeddings; the embeddings stay owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn mm_index_new(
    embeddings: *const *const MmEmbedding,
    count: usize,
    out: *mut *mut MmIndex,
) -> MmStatus {
    guard(|| {
        if embeddings.is_null() && count > 0 {
            return Err(null("embeddings"));
        }
        let handles = if count == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(embeddings, count)
        };
        let owned = handles
            .iter()
            .map(|&h| deref(h, "embedding").map(|e| e.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        put(out, MmIndex(build_index(&owned)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_index_load(path: *const c_char, out: *mut *mut MmIndex) -> MmStatus {
    guard(|| {
        let index = load_index(Path::new(text(path, "path")?))?;
        put(out, MmIndex(index))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_index_save(index: *const MmIndex, path: *const c_char) -> MmStatus {
    guard(|| {
        save_index(&deref(index, "index")?.0, Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// Number of videos; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mm_index_len(index: *const MmIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.len())
}

/// Embedding width; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mm_index_dim(index: *const MmIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.dim())
}

#[no_mangle]
pub unsafe extern "C" fn mm_index_free(index: *mut MmIndex) {
    release(index);
}

/// Ranks `pool` (or every other video when `pool` is null) against `query_id`,
/// best first, ties by index order.
#[no_mangle]
pub unsafe extern "C" fn mm_rank(
    index: *const MmIndex,
    query_id: *const c_char,
    pool: *const *const c_char,
    pool_len: usize,
    out: *mut *mut MmRankedList,
) -> MmStatus {
    guard(|| {
        let index = &deref(index, "index")?.0;
        let query = text(query_id, "query_id")?;
        let candidates = if pool.is_null() {
            None
        } else {
            let raw = if pool_len == 0 {
                &[][..]
            } else {
                std::slice::from_raw_parts(pool, pool_len)
            };
            Some(
                raw.iter()
                    .map(|&p| text(p, "pool entry").map(str::to_owned))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        };
        let list = rank(index, query, candidates.as_deref())?;
        let ids = list
            .entries
            .iter()
            .map(|e| CString::new(e.id.as_str()).map_err(|_| invalid("video id contains NUL")))
            .collect::<Result<Vec<_>, _>>()?;
        let scores = list.entries.iter().map(|e| e.score).collect();
        put(out, MmRankedList { ids, scores })
    })
}

/// Number of ranked entries; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mm_ranked_len(list: *const MmRankedList) -> usize {
    list.as_ref().map_or(0, |l| l.ids.len())
}

/// Entry `i`. The id pointer stays valid until the list is freed.
#[no_mangle]
pub unsafe extern "C" fn mm_ranked_get(
    list: *const MmRankedList,
    i: usize,
    video_id: *mut *const c_char,
    score: *mut f64,
) -> MmStatus {
    guard(|| {
        let list = deref(list, "list")?;
        let id = list.ids.get(i).ok_or_else(|| {
            invalid(format!(
                "entry {i} out of range ({} entries)",
                list.ids.len()
            ))
        })?;
        *deref_mut(video_id, "video_id")? = id.as_ptr();
        *deref_mut(score, "score")? = list.scores[i];
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mm_ranked_free(list: *mut MmRankedList) {
    release(list);
}
