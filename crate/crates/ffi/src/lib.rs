//! C interface to the `shapfed` simulator.
//!
//! Every function returns a [`ShapfedStatus`]. On anything other than
//! `SHAPFED_STATUS_OK` a message is available from [`shapfed_last_error`]
//! on the same thread until the next failing call. Handles are opaque and
//! must be released with their `_free` function. Output buffers are
//! caller-allocated; their required length is stated per function.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use shapfed::cli::{cmd_partition_report, cmd_run, cmd_shapley_audit};
use shapfed::config::ExperimentConfig;
use shapfed::contribution::{self, Coalition, ContributionMatrix};
use shapfed::federation::{self, RunLog};
use shapfed::metrics;
use shapfed::model::{self, LastLayerMatrix, ModelKind, ModelSpec, ParamVector};
use shapfed::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapfedStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The experiment configuration was rejected.
    Config = 3,
    /// Buffer lengths or dimensions do not fit together.
    Shape = 4,
    /// Values out of range or otherwise malformed.
    Input = 5,
    /// Inconsistent cross-round state.
    State = 6,
    /// A file could not be read or written.
    Io = 7,
    /// A utility callback reported failure.
    Callback = 8,
    /// An internal panic was caught at the boundary.
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapfedModelKind {
    Logistic = 0,
    Mlp = 1,
}

/// Model shape. `hidden` is ignored for logistic models.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct ShapfedModelSpec {
    pub kind: ShapfedModelKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

/// Parsed experiment configuration.
pub struct ShapfedExperiment {
    config: ExperimentConfig,
}

/// Per-round results of one trained strategy.
pub struct ShapfedRunLog {
    log: RunLog,
    participants: usize,
    classes: usize,
}

/// Utility of a coalition for exact Shapley computation. `coalition` is a
/// bit mask over participants; the callee writes `classes` values to `out`
/// and returns 0 on success.
pub type ShapfedUtilityFn = Option<
    unsafe extern "C" fn(coalition: u32, out: *mut f64, classes: usize, user_data: *mut c_void) -> i32,
>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ShapfedStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => ShapfedStatus::Shape,
            Error::Input(_) => ShapfedStatus::Input,
            Error::Config { .. } => ShapfedStatus::Config,
            Error::State(_) => ShapfedStatus::State,
            Error::Io { .. } => ShapfedStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ShapfedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ShapfedStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("internal panic: {msg}"));
            ShapfedStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ShapfedStatus::NullPointer, format!("{what} is null"))
}

unsafe fn string_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(ShapfedStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn model_spec(s: &ShapfedModelSpec) -> Result<ModelSpec, Failure> {
    let kind = match s.kind {
        ShapfedModelKind::Logistic => ModelKind::Logistic,
        ShapfedModelKind::Mlp => ModelKind::Mlp { hidden: s.hidden },
    };
    Ok(ModelSpec::new(kind, s.input_dim, s.num_classes)?)
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn shapfed_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---------------------------------------------------------------- experiments

unsafe fn new_experiment(config: ExperimentConfig, out: *mut *mut ShapfedExperiment) {
    *out = Box::into_raw(Box::new(ShapfedExperiment { config }));
}

/// Loads an experiment config file. Relative data paths resolve against the
/// file's directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_from_file(
    path: *const c_char,
    out: *mut *mut ShapfedExperiment,
) -> ShapfedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = string_arg(path, "path")?;
        new_experiment(ExperimentConfig::from_file(&path)?, out);
        Ok(())
    })
}

/// Parses experiment config text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_from_str(
    text: *const c_char,
    out: *mut *mut ShapfedExperiment,
) -> ShapfedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = string_arg(text, "text")?;
        new_experiment(ExperimentConfig::parse(&text)?, out);
        Ok(())
    })
}

/// # Safety
/// `exp` must come from `shapfed_experiment_from_*` and not be freed yet;
/// null is ignored.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_free(exp: *mut ShapfedExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Replaces the master seed.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_set_seed(
    exp: *mut ShapfedExperiment,
    seed: u64,
) -> ShapfedStatus {
    guard(|| {
        exp.as_mut().ok_or_else(|| null("exp"))?.config.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live experiment handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_participants(
    exp: *const ShapfedExperiment,
    out: *mut usize,
) -> ShapfedStatus {
    guard(|| {
        let e = handle(exp, "exp")?;
        *out.as_mut().ok_or_else(|| null("out"))? = e.config.participants;
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live experiment handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_strategy_count(
    exp: *const ShapfedExperiment,
    out: *mut usize,
) -> ShapfedStatus {
    guard(|| {
        let e = handle(exp, "exp")?;
        *out.as_mut().ok_or_else(|| null("out"))? = e.config.strategies.len();
        Ok(())
    })
}

unsafe fn out_dir(exp: &ShapfedExperiment, dir: *const c_char) -> Result<PathBuf, Failure> {
    let path = if dir.is_null() {
        exp.config.output_dir.clone()
    } else {
        PathBuf::from(string_arg(dir, "out_dir")?)
    };
    std::fs::create_dir_all(&path).map_err(|e| {
        Failure(
            ShapfedStatus::Io,
            format!("cannot create {}: {e}", path.display()),
        )
    })?;
    Ok(path)
}

/// Runs every configured strategy and writes the same files as
/// `shapfed run`. A null `out_dir` uses the config's output directory;
/// `workers == 0` uses all cores.
///
/// # Safety
/// `exp` must be a live experiment handle; `out_dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_run(
    exp: *const ShapfedExperiment,
    out_dir_path: *const c_char,
    workers: usize,
) -> ShapfedStatus {
    guard(|| {
        let e = handle(exp, "exp")?;
        let dir = out_dir(e, out_dir_path)?;
        Ok(cmd_run(&e.config, &dir, workers)?)
    })
}

/// Writes `audit.json` as `shapfed shapley-audit` does and reports how
/// many classes have matching top contributors.
///
/// # Safety
/// `exp` must be a live experiment handle; `out_dir` null or NUL-terminated;
/// `cssv_agreement` null or writable.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_audit(
    exp: *const ShapfedExperiment,
    out_dir_path: *const c_char,
    workers: usize,
    cssv_agreement: *mut usize,
) -> ShapfedStatus {
    guard(|| {
        let e = handle(exp, "exp")?;
        let dir = out_dir(e, out_dir_path)?;
        let report = cmd_shapley_audit(&e.config, &dir, workers)?;
        if let Some(out) = cssv_agreement.as_mut() {
            *out = report.cssv_agreement_count();
        }
        Ok(())
    })
}

/// Writes `partition.csv` as `shapfed partition-report` does.
///
/// # Safety
/// `exp` must be a live experiment handle; `out_dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_partition_report(
    exp: *const ShapfedExperiment,
    out_dir_path: *const c_char,
) -> ShapfedStatus {
    guard(|| {
        let e = handle(exp, "exp")?;
        let dir = out_dir(e, out_dir_path)?;
        Ok(cmd_partition_report(&e.config, &dir)?)
    })
}

/// Trains strategy number `strategy` (in config order) in memory.
///
/// # Safety
/// `exp` must be a live experiment handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn shapfed_experiment_train(
    exp: *const ShapfedExperiment,
    strategy: usize,
    workers: usize,
    out: *mut *mut ShapfedRunLog,
) -> ShapfedStatus {
    guard(|| {
        let e = handle(exp, "exp")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = e.config.strategies.get(strategy).ok_or_else(|| {
            Failure(
                ShapfedStatus::Input,
                format!(
                    "strategy index {strategy} out of range ({} configured)",
                    e.config.strategies.len()
                ),
            )
        })?;
        let built = e.config.build_experiment(workers)?;
        let log = federation::run_experiment(&built, &s.config)?;
        *out = Box::into_raw(Box::new(ShapfedRunLog {
            log,
            participants: built.participants(),
            classes: built.spec.num_classes,
        }));
        Ok(())
    })
}

// ---------------------------------------------------------------- run logs

/// # Safety
/// `log` must come from `shapfed_experiment_train`; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn shapfed_run_log_free(log: *mut ShapfedRunLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Number of recorded rounds, participants and classes. Null outputs are
/// skipped.
///
/// # Safety
/// `log` must be a live run-log handle; outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn shapfed_run_log_dims(
    log: *const ShapfedRunLog,
    rounds: *mut usize,
    participants: *mut usize,
    classes: *mut usize,
) -> ShapfedStatus {
    guard(|| {
        let l = handle(log, "log")?;
        if let Some(r) = rounds.as_mut() {
            *r = l.log.records.len();
        }
        if let Some(p) = participants.as_mut() {
            *p = l.participants;
        }
        if let Some(c) = classes.as_mut() {
            *c = l.classes;
        }
        Ok(())
    })
}

fn record(l: &ShapfedRunLog, round: usize) -> Result<&federation::RoundRecord, Failure> {
    l.log.records.get(round).ok_or_else(|| {
        Failure(
            ShapfedStatus::Input,
            format!(
                "round index {round} out of range ({} recorded)",
                l.log.records.len()
            ),
        )
    })
}

fn copy_into(dst: &mut [f64], src: &[f64]) -> Result<(), Failure> {
    if dst.len() != src.len() {
        return Err(Failure(
            ShapfedStatus::Shape,
            format!("output buffer holds {} values, need {}", dst.len(), src.len()),
        ));
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Raw and normalised importance weights after round index `round`
/// (0-based). Each buffer holds `participants` values; either may be null.
///
/// # Safety
/// `log` must be a live run-log handle; non-null buffers must hold `len`
/// values.
#[no_mangle]
pub unsafe extern "C" fn shapfed_run_log_gamma(
    log: *const ShapfedRunLog,
    round: usize,
    raw: *mut f64,
    normalized: *mut f64,
    len: usize,
) -> ShapfedStatus {
    guard(|| {
        let r = record(handle(log, "log")?, round)?;
        if !raw.is_null() {
            copy_into(slice_out(raw, len, "raw")?, &r.gamma)?;
        }
        if !normalized.is_null() {
            copy_into(slice_out(normalized, len, "normalized")?, &r.gamma_normalized)?;
        }
        Ok(())
    })
}

/// Smoothed contribution matrix after round index `round`, row-major
/// `participants x classes`.
///
/// # Safety
/// `log` must be a live run-log handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn shapfed_run_log_contributions(
    log: *const ShapfedRunLog,
    round: usize,
    out: *mut f64,
    len: usize,
) -> ShapfedStatus {
    guard(|| {
        let r = record(handle(log, "log")?, round)?;
        let flat: Vec<f64> = r.contributions.iter().flatten().copied().collect();
        copy_into(slice_out(out, len, "out")?, &flat)
    })
}

/// Global balanced accuracy and the balanced accuracy of each participant's
/// delivered model after round index `round`. `participant_acc` holds
/// `participants` values; either output may be null.
///
/// # Safety
/// `log` must be a live run-log handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn shapfed_run_log_accuracy(
    log: *const ShapfedRunLog,
    round: usize,
    global_acc: *mut f64,
    participant_acc: *mut f64,
    len: usize,
) -> ShapfedStatus {
    guard(|| {
        let r = record(handle(log, "log")?, round)?;
        if let Some(g) = global_acc.as_mut() {
            *g = r.global_balanced_acc;
        }
        if !participant_acc.is_null() {
            copy_into(
                slice_out(participant_acc, len, "participant_acc")?,
                &r.participant_balanced_acc,
            )?;
        }
        Ok(())
    })
}

/// Pearson correlation between standalone and delivered-model accuracies.
///
/// # Safety
/// `log` must be a live run-log handle; outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn shapfed_run_log_fairness(
    log: *const ShapfedRunLog,
    r: *mut f64,
    degenerate: *mut bool,
) -> ShapfedStatus {
    guard(|| {
        let l = handle(log, "log")?;
        if let Some(out) = r.as_mut() {
            *out = l.log.fairness.r;
        }
        if let Some(out) = degenerate.as_mut() {
            *out = l.log.fairness.degenerate;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- math

/// Length of a flat parameter vector for `spec`.
///
/// # Safety
/// `spec` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn shapfed_param_count(
    spec: *const ShapfedModelSpec,
    out: *mut usize,
) -> ShapfedStatus {
    guard(|| {
        let spec = model_spec(handle(spec, "spec")?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = spec.param_count();
        Ok(())
    })
}

/// Deterministic initial parameters; `out` holds the parameter count.
///
/// # Safety
/// `spec` must be valid and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn shapfed_init_params(
    spec: *const ShapfedModelSpec,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> ShapfedStatus {
    guard(|| {
        let spec = model_spec(handle(spec, "spec")?)?;
        copy_into(
            slice_out(out, len, "out")?,
            model::init_params(spec, seed).values(),
        )
    })
}

/// `gamma * global + (1 - gamma) * local` over parameter vectors of
/// `spec`; all buffers hold `len` values.
///
/// # Safety
/// `spec` must be valid; each buffer must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn shapfed_personalize(
    spec: *const ShapfedModelSpec,
    global: *const f64,
    local: *const f64,
    len: usize,
    gamma: f64,
    out: *mut f64,
) -> ShapfedStatus {
    guard(|| {
        let spec = model_spec(handle(spec, "spec")?)?;
        let g = ParamVector::from_values(spec, slice_arg(global, len, "global")?.to_vec())?;
        let l = ParamVector::from_values(spec, slice_arg(local, len, "local")?.to_vec())?;
        let p = federation::personalize(&g, &l, gamma)?;
        copy_into(slice_out(out, len, "out")?, p.values())
    })
}

fn head(values: &[f64], feature_dim: usize, classes: usize) -> Result<LastLayerMatrix, Failure> {
    let columns: Vec<Vec<f64>> = values
        .chunks(feature_dim)
        .take(classes)
        .map(<[f64]>::to_vec)
        .collect();
    Ok(LastLayerMatrix::from_columns(&columns)?)
}

/// Class-specific cosine scores. `updates` holds `n` last-layer matrices,
/// each as `classes` columns of `feature_dim` values; `aggregate` holds one
/// such matrix. `out` receives the row-major `n x classes` result.
///
/// # Safety
/// Buffers must hold `n * classes * feature_dim`, `classes * feature_dim`
/// and `n * classes` values respectively.
#[no_mangle]
pub unsafe extern "C" fn shapfed_cssv(
    updates: *const f64,
    aggregate: *const f64,
    n: usize,
    feature_dim: usize,
    classes: usize,
    out: *mut f64,
) -> ShapfedStatus {
    guard(|| {
        if n == 0 || feature_dim == 0 || classes == 0 {
            return Err(Failure(
                ShapfedStatus::Shape,
                "n, feature_dim and classes must be positive".into(),
            ));
        }
        let block = feature_dim * classes;
        let all = slice_arg(updates, n * block, "updates")?;
        let heads = all
            .chunks(block)
            .map(|c| head(c, feature_dim, classes))
            .collect::<Result<Vec<_>, _>>()?;
        let agg = head(slice_arg(aggregate, block, "aggregate")?, feature_dim, classes)?;
        let gamma = contribution::cssv(&heads, &agg)?;
        let flat: Vec<f64> = gamma.rows().into_iter().flatten().collect();
        copy_into(slice_out(out, n * classes, "out")?, &flat)
    })
}

/// Importance weights from a row-major `n x classes` contribution matrix.
/// `raw` and `normalized` each hold `n` values.
///
/// # Safety
/// `gamma` must hold `n * classes` values; outputs must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn shapfed_importance(
    gamma: *const f64,
    n: usize,
    classes: usize,
    raw: *mut f64,
    normalized: *mut f64,
) -> ShapfedStatus {
    guard(|| {
        if n == 0 || classes == 0 {
            return Err(Failure(
                ShapfedStatus::Shape,
                "n and classes must be positive".into(),
            ));
        }
        let flat = slice_arg(gamma, n * classes, "gamma")?;
        let rows: Vec<Vec<f64>> = flat.chunks(classes).map(<[f64]>::to_vec).collect();
        let w = contribution::importance(&ContributionMatrix::from_rows(&rows)?);
        copy_into(slice_out(raw, n, "raw")?, &w.raw)?;
        copy_into(slice_out(normalized, n, "normalized")?, &w.normalized)
    })
}

/// Sample Pearson correlation; `degenerate` is set when either input has
/// (near) zero variance, in which case `r` is 0.
///
/// # Safety
/// `x` and `y` must hold `n` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn shapfed_pearson(
    x: *const f64,
    y: *const f64,
    n: usize,
    r: *mut f64,
    degenerate: *mut bool,
) -> ShapfedStatus {
    guard(|| {
        let c = metrics::pearson(slice_arg(x, n, "x")?, slice_arg(y, n, "y")?)?;
        *r.as_mut().ok_or_else(|| null("r"))? = c.r;
        if let Some(d) = degenerate.as_mut() {
            *d = c.degenerate;
        }
        Ok(())
    })
}

struct UserData(*mut c_void);

// The caller promises the callback tolerates concurrent use when it asks
// for more than one worker.
unsafe impl Send for UserData {}
unsafe impl Sync for UserData {}

/// Exact per-class Shapley values by enumerating all `2^n - 1` nonempty
/// coalitions. `phi` receives the row-major `n x classes` result and
/// `calls` (if non-null) the number of utility evaluations. With
/// `workers != 1` the callback is invoked from several threads at once.
///
/// # Safety
/// `utility` must be safe to call with `user_data` (concurrently when
/// `workers != 1`) and write `classes` values; `phi` must hold
/// `n * classes` values.
#[no_mangle]
pub unsafe extern "C" fn shapfed_exact_shapley(
    n: usize,
    classes: usize,
    utility: ShapfedUtilityFn,
    user_data: *mut c_void,
    workers: usize,
    phi: *mut f64,
    calls: *mut usize,
) -> ShapfedStatus {
    guard(|| {
        let f = utility.ok_or_else(|| null("utility"))?;
        let phi_out = slice_out(phi, n * classes, "phi")?;
        let data = UserData(user_data);
        let eval = |c: Coalition| -> shapfed::Result<Vec<f64>> {
            let data = &data;
            let mut v = vec![0.0; classes];
            let rc = f(c.0, v.as_mut_ptr(), classes, data.0);
            if rc != 0 {
                return Err(Error::Input(format!(
                    "utility callback returned {rc} for coalition {:#x}",
                    c.0
                )));
            }
            Ok(v)
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Failure(ShapfedStatus::State, format!("cannot start worker pool: {e}")))?;
        let result = pool
            .install(|| contribution::exact_shapley(n, eval))
            .map_err(|e| match e {
                Error::Input(msg) if msg.starts_with("utility callback") => {
                    Failure(ShapfedStatus::Callback, msg)
                }
                other => other.into(),
            })?;
        let flat: Vec<f64> = result.phi.into_iter().flatten().collect();
        copy_into(phi_out, &flat)?;
        if let Some(c) = calls.as_mut() {
            *c = result.utility_calls;
        }
        Ok(())
    })
}
