//! C ABI over the dcnas library.
//!
//! Objects cross the boundary as opaque handles created by a `*_new` or
//! `*_from_*` function and released with the matching `*_free`. Every
//! fallible call returns a [`DcnasStatus`]; on failure the message is
//! available from [`dcnas_last_error_message`] on the same thread.
//! Strings returned through out-parameters are owned by the caller and
//! must be released with [`dcnas_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use dcnas::config::ExperimentConfig;
use dcnas::features::cosine_drift;
use dcnas::kmeans::{kmeans, KMeansParams};
use dcnas::pipeline::{run_pipeline, PipelineOptions};
use dcnas::search_space::{ArchCode, BlockOp, SearchSpace};
use dcnas::selection::{fidelity_mse, ranking_score, EvalRecord};
use dcnas::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcnasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Argument = 4,
    Parse = 5,
    Divergence = 6,
    MissingEpoch = 7,
    Io = 8,
    Serialization = 9,
    /// A value does not fit the C type, e.g. an arch index above 2^64.
    Overflow = 10,
    Panic = 11,
}

/// A search space.
pub struct DcnasSpace {
    inner: SearchSpace,
}

/// An experiment configuration.
pub struct DcnasConfig {
    inner: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DcnasStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let root = match &e {
            Error::Stage { source, .. } => source.as_ref(),
            other => other,
        };
        let status = match root {
            Error::Config(_) => DcnasStatus::Config,
            Error::Argument(_) => DcnasStatus::Argument,
            Error::Parse { .. } => DcnasStatus::Parse,
            Error::Divergence { .. } => DcnasStatus::Divergence,
            Error::MissingEpoch { .. } => DcnasStatus::MissingEpoch,
            Error::Io { .. } => DcnasStatus::Io,
            Error::Json(_) | Error::Csv(_) => DcnasStatus::Serialization,
            Error::Stage { .. } => DcnasStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: DcnasStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DcnasStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DcnasStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DcnasStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(DcnasStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DcnasStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DcnasStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(DcnasStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn space_ref<'a>(p: *const DcnasSpace) -> Result<&'a SearchSpace, Failure> {
    p.as_ref()
        .map(|s| &s.inner)
        .ok_or_else(|| fail(DcnasStatus::NullPointer, "`space` is null"))
}

unsafe fn config_ref<'a>(p: *const DcnasConfig) -> Result<&'a ExperimentConfig, Failure> {
    p.as_ref()
        .map(|c| &c.inner)
        .ok_or_else(|| fail(DcnasStatus::NullPointer, "`config` is null"))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(DcnasStatus::Serialization, "string contains a nul byte"))
}

fn to_u64(v: u128) -> Result<u64, Failure> {
    u64::try_from(v).map_err(|_| {
        fail(
            DcnasStatus::Overflow,
            format!("{v} does not fit in 64 bits"),
        )
    })
}

fn code_of(space: &SearchSpace, index: u64) -> Result<ArchCode, Failure> {
    Ok(space.code_at(index as u128)?)
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dcnas_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn dcnas_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dcnas_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Channel-ratio space with `ratio_count` ratios per layer.
///
/// # Safety
/// `ratios` must point to `ratio_count` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_space_new_toy(
    depth: usize,
    ratios: *const f64,
    ratio_count: usize,
    base_channels: usize,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    out: *mut *mut DcnasSpace,
) -> DcnasStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ratios = slice_arg(ratios, ratio_count, "ratios")?;
        let inner = SearchSpace::toy(
            depth,
            ratios,
            base_channels,
            [channels, height, width],
            num_classes,
        )?;
        *out = Box::into_raw(Box::new(DcnasSpace { inner }));
        Ok(())
    })
}

/// Layer-wise space; `ops` is a comma-separated op list such as
/// `"skip,k3e1,k3e3"`.
///
/// # Safety
/// `ops` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_space_new_layerwise(
    num_blocks: usize,
    ops: *const c_char,
    stem_channels: usize,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    out: *mut *mut DcnasSpace,
) -> DcnasStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ops: Vec<BlockOp> = str_arg(ops, "ops")?
            .split(',')
            .map(str::parse)
            .collect::<dcnas::Result<_>>()?;
        let inner = SearchSpace::layerwise(
            num_blocks,
            &ops,
            stem_channels,
            [channels, height, width],
            num_classes,
        )?;
        *out = Box::into_raw(Box::new(DcnasSpace { inner }));
        Ok(())
    })
}

/// Releases a space. Null is ignored.
///
/// # Safety
/// `space` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dcnas_space_free(space: *mut DcnasSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Number of architectures; fails with `OVERFLOW` above 2^64 (use
/// [`dcnas_space_size_f64`] then).
///
/// # Safety
/// `space` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_space_size(space: *const DcnasSpace, out: *mut u64) -> DcnasStatus {
    guard(|| {
        let space = space_ref(space)?;
        let size = space
            .size()
            .ok_or_else(|| fail(DcnasStatus::Overflow, "space size exceeds 2^128"))?;
        *out_arg(out, "out")? = to_u64(size)?;
        Ok(())
    })
}

/// Number of architectures as a double.
///
/// # Safety
/// `space` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_space_size_f64(
    space: *const DcnasSpace,
    out: *mut f64,
) -> DcnasStatus {
    guard(|| {
        *out_arg(out, "out")? = space_ref(space)?.size_f64();
        Ok(())
    })
}

/// Index of the architecture written as `text`.
///
/// # Safety
/// `space` must be a live handle, `text` nul-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_space_parse_arch(
    space: *const DcnasSpace,
    text: *const c_char,
    out: *mut u64,
) -> DcnasStatus {
    guard(|| {
        let space = space_ref(space)?;
        let code = space.parse_arch(str_arg(text, "text")?)?;
        *out_arg(out, "out")? = to_u64(space.index_of(&code)?)?;
        Ok(())
    })
}

/// Canonical text of architecture `index`; free with
/// [`dcnas_string_free`].
///
/// # Safety
/// `space` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_space_format_arch(
    space: *const DcnasSpace,
    index: u64,
    out: *mut *mut c_char,
) -> DcnasStatus {
    guard(|| {
        let space = space_ref(space)?;
        let text = space.format_arch(&code_of(space, index)?);
        *out_arg(out, "out")? = into_c_string(text)?;
        Ok(())
    })
}

/// Parameter count and multiply-accumulate count of architecture `index`.
///
/// # Safety
/// `space` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_space_arch_cost(
    space: *const DcnasSpace,
    index: u64,
    params: *mut u64,
    flops: *mut u64,
) -> DcnasStatus {
    guard(|| {
        let space = space_ref(space)?;
        let net = space.build_network(&code_of(space, index)?)?;
        *out_arg(params, "params")? = net.param_count() as u64;
        *out_arg(flops, "flops")? = net.flops() as u64;
        Ok(())
    })
}

/// Configuration with every field at its default.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_config_default(out: *mut *mut DcnasConfig) -> DcnasStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(DcnasConfig {
            inner: ExperimentConfig::default(),
        }));
        Ok(())
    })
}

/// Parses and validates a JSON configuration; missing fields take their
/// defaults.
///
/// # Safety
/// `json` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_config_from_json(
    json: *const c_char,
    out: *mut *mut DcnasConfig,
) -> DcnasStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner: ExperimentConfig =
            serde_json::from_str(str_arg(json, "json")?).map_err(Error::from)?;
        inner.validate()?;
        *out = Box::into_raw(Box::new(DcnasConfig { inner }));
        Ok(())
    })
}

/// JSON text of a configuration; free with [`dcnas_string_free`].
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_config_to_json(
    config: *const DcnasConfig,
    out: *mut *mut c_char,
) -> DcnasStatus {
    guard(|| {
        let json = config_ref(config)?.to_json();
        *out_arg(out, "out")? = into_c_string(json)?;
        Ok(())
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `config` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dcnas_config_free(config: *mut DcnasConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the search for `seed`. `out_dir` may be null for an in-memory
/// run; otherwise artifacts are written there and finished stages are
/// resumed. The summary JSON is returned through `summary_json`.
///
/// # Safety
/// `config` must be a live handle, `out_dir` null or nul-terminated and
/// `summary_json` writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_run_pipeline(
    config: *const DcnasConfig,
    seed: u64,
    out_dir: *const c_char,
    summary_json: *mut *mut c_char,
) -> DcnasStatus {
    guard(|| {
        let cfg = config_ref(config)?;
        let out = out_arg(summary_json, "summary_json")?;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(out_dir, "out_dir")?))
        };
        let outcome = run_pipeline(
            cfg,
            seed,
            &PipelineOptions {
                out_dir: dir,
                ..Default::default()
            },
        )?;
        let json = serde_json::to_string_pretty(&outcome.summary).map_err(Error::from)?;
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// k-means on `n` row-major points of dimension `dim`. Writes `n` cluster
/// labels and the final inertia.
///
/// # Safety
/// `points` must hold `n * dim` doubles and `assignments` room for `n`
/// labels; `inertia` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_kmeans(
    points: *const f64,
    n: usize,
    dim: usize,
    k: usize,
    seed: u64,
    assignments: *mut usize,
    inertia: *mut f64,
) -> DcnasStatus {
    guard(|| {
        if dim == 0 {
            return Err(fail(DcnasStatus::Argument, "dim must be positive"));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| fail(DcnasStatus::Overflow, "n * dim overflows"))?;
        let flat = slice_arg(points, len, "points")?;
        let rows: Vec<Vec<f64>> = flat.chunks_exact(dim).map(<[f64]>::to_vec).collect();
        let model = kmeans(
            &rows,
            &KMeansParams {
                k,
                seed,
                ..Default::default()
            },
        )?;
        if n > 0 && assignments.is_null() {
            return Err(fail(DcnasStatus::NullPointer, "`assignments` is null"));
        }
        for (i, &a) in model.assignments.iter().enumerate() {
            *assignments.add(i) = a;
        }
        *out_arg(inertia, "inertia")? = model.inertia;
        Ok(())
    })
}

/// Ranking score between early scores `e` and accuracies `y` (length
/// `n`): `normalized` in `[-1, 1]` with `+1` for perfect agreement, and
/// the raw pairwise sign sum.
///
/// # Safety
/// `e` and `y` must hold `n` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_ranking_score(
    e: *const f64,
    y: *const f64,
    n: usize,
    normalized: *mut f64,
    raw: *mut i64,
) -> DcnasStatus {
    guard(|| {
        let records = records(e, y, n)?;
        let rs = ranking_score(&records)?;
        *out_arg(normalized, "normalized")? = rs.normalized;
        *out_arg(raw, "raw")? = rs.raw;
        Ok(())
    })
}

/// Mean squared difference between `e` and `y`.
///
/// # Safety
/// `e` and `y` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_fidelity_mse(
    e: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> DcnasStatus {
    guard(|| {
        *out_arg(out, "out")? = fidelity_mse(&records(e, y, n)?)?;
        Ok(())
    })
}

unsafe fn records(e: *const f64, y: *const f64, n: usize) -> Result<Vec<EvalRecord>, Failure> {
    let e = slice_arg(e, n, "e")?;
    let y = slice_arg(y, n, "y")?;
    Ok(e.iter()
        .zip(y)
        .enumerate()
        .map(|(i, (&e, &y))| EvalRecord {
            arch_id: i as u128,
            e,
            y: Some(y),
            cluster: 0,
        })
        .collect())
}

/// Cosine similarity of two equal-length vectors, 0 when either is zero.
///
/// # Safety
/// `a` and `b` must hold `n` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dcnas_cosine_drift(
    a: *const f32,
    b: *const f32,
    n: usize,
    out: *mut f64,
) -> DcnasStatus {
    guard(|| {
        let a = slice_arg(a, n, "a")?;
        let b = slice_arg(b, n, "b")?;
        *out_arg(out, "out")? = cosine_drift(a, b)?;
        Ok(())
    })
}
