//! C ABI over `v2f-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`V2fStatus`]; on failure a description is kept per thread and
//! read with [`v2f_last_error`]. Panics never unwind into C: they are caught
//! and reported as [`V2fStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use v2f_core::autograd::Mat;
use v2f_core::data::{sample_dataset, Dataset, SplitSizes};
use v2f_core::metrics::{retrieval_accuracy, voxel_metrics};
use v2f_core::pipeline::{synthesize, synthesize_without_mapper};
use v2f_core::s2n::S2nMapper;
use v2f_core::vae::BrainVae;
use v2f_core::world::{make_synthetic_world, SyntheticWorldSpec};
use v2f_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum V2fStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Size = 5,
    Range = 6,
    Format = 7,
    Protocol = 8,
    NonFinite = 9,
    Singular = 10,
    Io = 11,
    Panic = 12,
}

/// A dataset of fMRI samples and stimulus embeddings.
pub struct V2fDataset(Dataset);

/// A trained autoencoder with an optional semantic-to-neural mapper.
pub struct V2fModel {
    vae: BrainVae,
    mapper: Option<S2nMapper>,
}

/// Retrieval accuracy over repeated candidate draws.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct V2fRetrieval {
    pub mean: f64,
    pub sd: f64,
}

/// Voxel-level agreement of one prediction with a set of trials.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct V2fVoxelMetrics {
    pub mse: f64,
    /// NaN when every trial is constant.
    pub pearson: f64,
    pub cosine: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(V2fStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Json(_) => V2fStatus::Config,
            Error::Shape(_) => V2fStatus::Shape,
            Error::Size(_) => V2fStatus::Size,
            Error::Range(_) => V2fStatus::Range,
            Error::Format { .. } => V2fStatus::Format,
            Error::Protocol(_) => V2fStatus::Protocol,
            Error::NonFinite { .. } => V2fStatus::NonFinite,
            Error::Singular(_) => V2fStatus::Singular,
            Error::Io { .. } => V2fStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(V2fStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(V2fStatus::InvalidArgument, message.into())
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> V2fStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => V2fStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            V2fStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn v2f_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn v2f_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Samples a dataset from the default synthetic world with `seed`.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free
/// with [`v2f_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn v2f_dataset_generate(
    seed: u64,
    n_train: usize,
    n_test: usize,
    sessions: u32,
    out: *mut *mut V2fDataset,
) -> V2fStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let world = make_synthetic_world(&SyntheticWorldSpec::desk(), seed)?;
        let sizes = SplitSizes {
            train: n_train,
            test: n_test,
            sessions,
        };
        let data = sample_dataset(&world, sizes, &mut ChaCha8Rng::seed_from_u64(seed))?;
        write_out(out, Box::into_raw(Box::new(V2fDataset(data))), "out")
    })
}

/// Loads a dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn v2f_dataset_load(dir: *const c_char, out: *mut *mut V2fDataset) -> V2fStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = Dataset::load(&path_arg(dir, "dir")?)?;
        write_out(out, Box::into_raw(Box::new(V2fDataset(data))), "out")
    })
}

/// Writes a dataset directory.
///
/// # Safety
/// `data` must come from this library and `dir` be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn v2f_dataset_save(data: *const V2fDataset, dir: *const c_char) -> V2fStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(|| null("data"))?;
        data.0.save(&path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn v2f_dataset_len(data: *const V2fDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `data` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn v2f_dataset_free(data: *mut V2fDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Loads an autoencoder checkpoint and, when `s2n_dir` is not null, a
/// mapper checkpoint.
///
/// # Safety
/// Paths must be NUL-terminated (or null for `s2n_dir`); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn v2f_model_load(
    vae_dir: *const c_char,
    s2n_dir: *const c_char,
    out: *mut *mut V2fModel,
) -> V2fStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let vae = BrainVae::load(&path_arg(vae_dir, "vae_dir")?)?;
        let mapper = if s2n_dir.is_null() {
            None
        } else {
            Some(S2nMapper::load(&path_arg(s2n_dir, "s2n_dir")?)?)
        };
        write_out(out, Box::into_raw(Box::new(V2fModel { vae, mapper })), "out")
    })
}

/// Shape of the latent token grid.
///
/// # Safety
/// `model` must come from this library; `tokens` and `dim` must be valid.
#[no_mangle]
pub unsafe extern "C" fn v2f_model_latent_shape(
    model: *const V2fModel,
    tokens: *mut usize,
    dim: *mut usize,
) -> V2fStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write_out(tokens, m.vae.config.hidden_tokens, "tokens")?;
        write_out(dim, m.vae.config.latent_dim, "dim")
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn v2f_model_free(model: *mut V2fModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Synthesizes `v_out` voxels from a row-major `rows × cols` embedding grid.
///
/// With a mapper the latent is `s2n(grid) + nf·ε` with noise drawn from
/// `seed`; without one the grid is decoded directly and `nf` must be 0.
///
/// # Safety
/// `embedding` must hold `rows·cols` values and `out` room for `v_out`.
#[no_mangle]
pub unsafe extern "C" fn v2f_synthesize(
    model: *const V2fModel,
    embedding: *const f64,
    rows: usize,
    cols: usize,
    nf: f64,
    seed: u64,
    out: *mut f64,
    v_out: usize,
) -> V2fStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = rows.checked_mul(cols).ok_or_else(|| invalid("rows·cols overflows"))?;
        let values = slice_arg(embedding, n, "embedding")?;
        let grid = Mat::from_shape_vec((rows, cols), values.to_vec()).map_err(|e| invalid(e.to_string()))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = match &m.mapper {
            Some(s2n) => synthesize(&grid, s2n, &m.vae, nf, &mut ChaCha8Rng::seed_from_u64(seed), v_out)?,
            None if nf != 0.0 => return Err(invalid("a noise factor needs a mapper")),
            None => synthesize_without_mapper(&grid, &m.vae, v_out)?,
        };
        std::slice::from_raw_parts_mut(out, v_out).copy_from_slice(x.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// Top-1 retrieval of `n_queries` row-major query embeddings against a
/// gallery, where `query_ids` and `gallery_ids` name the stimuli.
///
/// # Safety
/// Arrays must hold `n·dim` values and `n` ids respectively; `out` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn v2f_retrieval_accuracy(
    queries: *const f64,
    query_ids: *const u32,
    n_queries: usize,
    gallery: *const f64,
    gallery_ids: *const u32,
    n_gallery: usize,
    dim: usize,
    candidates: usize,
    repeats: usize,
    seed: u64,
    out: *mut V2fRetrieval,
) -> V2fStatus {
    guard(|| {
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let rows = |p: *const f64, ids: *const u32, n: usize, what: &str| -> Result<Vec<(u32, Vec<f64>)>, Failure> {
            let len = n.checked_mul(dim).ok_or_else(|| invalid("size overflows"))?;
            let values = slice_arg(p, len, what)?;
            let ids = slice_arg(ids, n, what)?;
            Ok(ids.iter().zip(values.chunks(dim)).map(|(&i, v)| (i, v.to_vec())).collect())
        };
        let q = rows(queries, query_ids, n_queries, "queries")?;
        let g = rows(gallery, gallery_ids, n_gallery, "gallery")?;
        let stats = retrieval_accuracy(&q, &g, candidates, repeats, &mut ChaCha8Rng::seed_from_u64(seed))?;
        write_out(out, V2fRetrieval { mean: stats.mean, sd: stats.sd }, "out")
    })
}

/// Voxel metrics of `pred` (length `v`) against `n_trials` row-major trials.
///
/// # Safety
/// `pred` must hold `v` values, `trials` `n_trials·v`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn v2f_voxel_metrics(
    pred: *const f64,
    trials: *const f64,
    n_trials: usize,
    v: usize,
    out: *mut V2fVoxelMetrics,
) -> V2fStatus {
    guard(|| {
        if v == 0 {
            return Err(invalid("v must be positive"));
        }
        let pred = slice_arg(pred, v, "pred")?;
        let len = n_trials.checked_mul(v).ok_or_else(|| invalid("size overflows"))?;
        let trials: Vec<Vec<f64>> = slice_arg(trials, len, "trials")?.chunks(v).map(<[f64]>::to_vec).collect();
        let m = voxel_metrics(pred, &trials)?;
        write_out(
            out,
            V2fVoxelMetrics {
                mse: m.mse,
                pearson: m.pearson,
                cosine: m.cosine,
            },
            "out",
        )
    })
}
