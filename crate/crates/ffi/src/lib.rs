//! C ABI over the autodim engine.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Fallible functions
//! return an [`AutodimStatus`]; on failure the message is available from
//! [`autodim_last_error_message`] on the same thread. Panics never unwind
//! into C: they are caught and reported as `AUTODIM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use autodim::config::RunConfig;
use autodim::data::{FieldSchema, PreparedData, SplitSpec};
use autodim::search::DerivedArchitecture;
use autodim::synthetic::{generate, SyntheticSpec};
use autodim::trainer::{retrain, run_search};
use autodim::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AutodimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Parse = 4,
    MissingFile = 5,
    Io = 6,
    Schema = 7,
    Label = 8,
    Dimension = 9,
    UndefinedMetric = 10,
    NonFiniteLoss = 11,
    Internal = 12,
    Panic = 13,
}

impl From<&Error> for AutodimStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::BatchSize(_) => AutodimStatus::Config,
            Error::Parse(_) => AutodimStatus::Parse,
            Error::MissingFile { .. } => AutodimStatus::MissingFile,
            Error::Io(_) => AutodimStatus::Io,
            Error::Schema(_) | Error::Ingestion { .. } | Error::Index(_) => AutodimStatus::Schema,
            Error::Label(_) => AutodimStatus::Label,
            Error::Dimension { .. } => AutodimStatus::Dimension,
            Error::UndefinedMetric(_) => AutodimStatus::UndefinedMetric,
            Error::NonFiniteLoss { .. } => AutodimStatus::NonFiniteLoss,
            _ => AutodimStatus::Internal,
        }
    }
}

/// Test-split metrics of a retrained model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AutodimEvalReport {
    pub auc: f64,
    pub logloss: f64,
    /// Embedding parameters only.
    pub params: u64,
    pub n_examples: u64,
}

/// Train/validation/test splits with their schema.
pub struct AutodimDataset {
    inner: PreparedData,
}

/// Search and training settings.
pub struct AutodimConfig {
    inner: RunConfig,
}

/// Per-field derived dimensions.
pub struct AutodimArchitecture {
    inner: DerivedArchitecture,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: AutodimStatus, msg: impl Into<String>) -> AutodimStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), AutodimStatus>) -> AutodimStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AutodimStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(AutodimStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lift<T>(r: autodim::Result<T>) -> Result<T, AutodimStatus> {
    r.map_err(|e| fail(AutodimStatus::from(&e), e.to_string()))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, AutodimStatus> {
    if p.is_null() {
        return Err(fail(AutodimStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: caller guarantees a valid NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(AutodimStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn read_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], AutodimStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(AutodimStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: caller guarantees `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, AutodimStatus> {
    // SAFETY: caller passes a handle from this library or null.
    unsafe { p.as_ref() }.ok_or_else(|| fail(AutodimStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), AutodimStatus> {
    if p.is_null() {
        Err(fail(AutodimStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn autodim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn autodim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Gumbel-softmax temperature at search step `t` under the default schedule.
#[no_mangle]
pub extern "C" fn autodim_temperature(t: u64) -> f64 {
    autodim::search::temperature(t)
}

/// Embedding parameter count `Σ cardinality[m] × dim[m]`.
///
/// # Safety
/// `cardinalities` and `dims` must each point to `n` readable values; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn autodim_param_count(cardinalities: *const u64, dims: *const u64, n: usize, out: *mut u64) -> AutodimStatus {
    guard(|| {
        let cards = unsafe { read_slice(cardinalities, n, "cardinalities")? };
        let dims = unsafe { read_slice(dims, n, "dims")? };
        out_ptr(out, "out")?;
        let schema: Vec<FieldSchema> = cards
            .iter()
            .enumerate()
            .map(|(i, &c)| FieldSchema::categorical(format!("f{i}"), c as usize))
            .collect();
        let dims: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        // SAFETY: checked non-null above.
        unsafe { *out = autodim::embedding::param_count(&schema, &dims) };
        Ok(())
    })
}

/// Rank-statistic AUC of `scores` against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` must each point to `n` readable values; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn autodim_auc(scores: *const f64, labels: *const f64, n: usize, out: *mut f64) -> AutodimStatus {
    guard(|| {
        let s = unsafe { read_slice(scores, n, "scores")? };
        let l = unsafe { read_slice(labels, n, "labels")? };
        out_ptr(out, "out")?;
        let v = lift(autodim::metrics::auc(s, l))?;
        // SAFETY: checked non-null above.
        unsafe { *out = v };
        Ok(())
    })
}

/// New configuration with default settings.
#[no_mangle]
pub extern "C" fn autodim_config_new() -> *mut AutodimConfig {
    Box::into_raw(Box::new(AutodimConfig {
        inner: RunConfig::default(),
    }))
}

/// Loads a TOML run configuration.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autodim_config_load(path: *const c_char, out: *mut *mut AutodimConfig) -> AutodimStatus {
    guard(|| {
        let path = unsafe { read_str(path, "path")? };
        out_ptr(out, "out")?;
        let cfg = lift(RunConfig::load(Some(PathBuf::from(path).as_path()), &[]))?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(AutodimConfig { inner: cfg })) };
        Ok(())
    })
}

/// Applies one `key=value` setting (dotted keys address sections).
/// The configuration is unchanged if the result would be invalid.
///
/// # Safety
/// `cfg` must be a live handle; `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn autodim_config_set(cfg: *mut AutodimConfig, assignment: *const c_char) -> AutodimStatus {
    guard(|| {
        // SAFETY: caller passes a live handle or null.
        let cfg = unsafe { cfg.as_mut() }.ok_or_else(|| fail(AutodimStatus::NullPointer, "cfg is null"))?;
        let assignment = unsafe { read_str(assignment, "assignment")? };
        let mut table: toml::Table = lift(cfg.inner.to_toml())?.parse().map_err(|e: toml::de::Error| fail(AutodimStatus::Internal, e.to_string()))?;
        lift(autodim::config::set_key(&mut table, assignment))?;
        cfg.inner = lift(RunConfig::from_table(table))?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn autodim_config_free(cfg: *mut AutodimConfig) {
    if !cfg.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(cfg) });
    }
}

fn dataset_out(out: *mut *mut AutodimDataset, data: PreparedData) {
    // SAFETY: callers check `out` before building the dataset.
    unsafe { *out = Box::into_raw(Box::new(AutodimDataset { inner: data })) };
}

/// Loads a delimited data file using the split settings of `cfg` (default
/// settings when `cfg` is null).
///
/// # Safety
/// `path` must be a NUL-terminated string, `cfg` null or a live handle, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn autodim_dataset_load(path: *const c_char, cfg: *const AutodimConfig, out: *mut *mut AutodimDataset) -> AutodimStatus {
    guard(|| {
        let path = unsafe { read_str(path, "path")? };
        out_ptr(out, "out")?;
        let defaults = RunConfig::default();
        // SAFETY: caller passes a live handle or null.
        let cfg = unsafe { cfg.as_ref() }.map_or(&defaults, |c| &c.inner);
        let data = lift(PreparedData::load(PathBuf::from(path).as_path(), cfg.delimiter_byte(), &cfg.split, None))?;
        dataset_out(out, data);
        Ok(())
    })
}

/// Seeded three-field synthetic click data (`item`, `noise`, `context`),
/// split 0.8/0.1/0.1 with `split_seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn autodim_dataset_synthetic(rows: usize, seed: u64, split_seed: u64, out: *mut *mut AutodimDataset) -> AutodimStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let ds = lift(generate(&SyntheticSpec {
            rows,
            seed,
            ..SyntheticSpec::default()
        }))?;
        let data = lift(PreparedData::from_dataset(&ds, &SplitSpec::with_seed(split_seed)))?;
        dataset_out(out, data);
        Ok(())
    })
}

/// Number of feature fields, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn autodim_dataset_num_fields(ds: *const AutodimDataset) -> usize {
    // SAFETY: caller passes a live handle or null.
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.schema.len())
}

/// Rows in the train, validation and test splits.
///
/// # Safety
/// `ds` must be a live handle and `out` must point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn autodim_dataset_split_sizes(ds: *const AutodimDataset, out: *mut usize) -> AutodimStatus {
    guard(|| {
        let ds = unsafe { handle(ds, "ds")? };
        out_ptr(out, "out")?;
        let sizes = [ds.inner.train.len(), ds.inner.val.len(), ds.inner.test.len()];
        // SAFETY: caller guarantees three writable values.
        unsafe { ptr::copy_nonoverlapping(sizes.as_ptr(), out, 3) };
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn autodim_dataset_free(ds: *mut AutodimDataset) {
    if !ds.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Pretrains, searches and derives an architecture.
///
/// # Safety
/// `ds` and `cfg` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn autodim_search(ds: *const AutodimDataset, cfg: *const AutodimConfig, out: *mut *mut AutodimArchitecture) -> AutodimStatus {
    guard(|| {
        let ds = unsafe { handle(ds, "ds")? };
        let cfg = unsafe { handle(cfg, "cfg")? };
        out_ptr(out, "out")?;
        let run = lift(run_search(&ds.inner, &cfg.inner.search))?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(AutodimArchitecture { inner: run.arch })) };
        Ok(())
    })
}

/// Trains a fresh model at `arch` and reports test-split metrics.
///
/// # Safety
/// `ds`, `arch` and `cfg` must be live handles; `report` writable.
#[no_mangle]
pub unsafe extern "C" fn autodim_retrain(
    ds: *const AutodimDataset,
    arch: *const AutodimArchitecture,
    cfg: *const AutodimConfig,
    report: *mut AutodimEvalReport,
) -> AutodimStatus {
    guard(|| {
        let ds = unsafe { handle(ds, "ds")? };
        let arch = unsafe { handle(arch, "arch")? };
        let cfg = unsafe { handle(cfg, "cfg")? };
        out_ptr(report, "report")?;
        let run = lift(retrain(&ds.inner, &arch.inner, &cfg.inner.search))?;
        let r = AutodimEvalReport {
            auc: run.test.auc,
            logloss: run.test.mean_logloss,
            params: run.test.params,
            n_examples: run.test.n_examples as u64,
        };
        // SAFETY: checked non-null above.
        unsafe { *report = r };
        Ok(())
    })
}

/// Number of fields, or 0 for a null handle.
///
/// # Safety
/// `arch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn autodim_architecture_num_fields(arch: *const AutodimArchitecture) -> usize {
    // SAFETY: caller passes a live handle or null.
    unsafe { arch.as_ref() }.map_or(0, |a| a.inner.fields.len())
}

/// Embedding parameter count, or 0 for a null handle.
///
/// # Safety
/// `arch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn autodim_architecture_param_count(arch: *const AutodimArchitecture) -> u64 {
    // SAFETY: caller passes a live handle or null.
    unsafe { arch.as_ref() }.map_or(0, |a| a.inner.param_count)
}

/// Copies the derived dimension of each field into `out` (`len` must equal
/// the field count).
///
/// # Safety
/// `arch` must be a live handle and `out` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn autodim_architecture_dims(arch: *const AutodimArchitecture, out: *mut u64, len: usize) -> AutodimStatus {
    guard(|| {
        let arch = unsafe { handle(arch, "arch")? };
        out_ptr(out, "out")?;
        let dims = arch.inner.dims();
        if len != dims.len() {
            return Err(fail(AutodimStatus::InvalidArgument, format!("buffer holds {len} values, architecture has {} fields", dims.len())));
        }
        for (i, d) in dims.into_iter().enumerate() {
            // SAFETY: i < len, caller guarantees `len` writable values.
            unsafe { *out.add(i) = d as u64 };
        }
        Ok(())
    })
}

/// Writes the architecture as TOML.
///
/// # Safety
/// `arch` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn autodim_architecture_save(arch: *const AutodimArchitecture, path: *const c_char) -> AutodimStatus {
    guard(|| {
        let arch = unsafe { handle(arch, "arch")? };
        let path = unsafe { read_str(path, "path")? };
        lift(arch.inner.save(PathBuf::from(path).as_path()))
    })
}

/// Reads an architecture written by `autodim_architecture_save` or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn autodim_architecture_load(path: *const c_char, out: *mut *mut AutodimArchitecture) -> AutodimStatus {
    guard(|| {
        let path = unsafe { read_str(path, "path")? };
        out_ptr(out, "out")?;
        let arch = lift(DerivedArchitecture::load(PathBuf::from(path).as_path()))?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(AutodimArchitecture { inner: arch })) };
        Ok(())
    })
}

/// # Safety
/// `arch` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn autodim_architecture_free(arch: *mut AutodimArchitecture) {
    if !arch.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(arch) });
    }
}
