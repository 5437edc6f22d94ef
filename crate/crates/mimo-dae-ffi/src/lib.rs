//! C ABI over the simulator: opaque handles, integer status codes, and a
//! thread-local last-error message.
//!
//! The surface covers the file-level workflows (parse config, train, save/
//! load checkpoints, sweep to CSV/JSON) plus a direct single-point BER
//! query for callers that want numbers instead of files. All functions are
//! panic-safe: a Rust panic is caught and reported as `Panic`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mimo_dae::config::{parse_experiment, Experiment};
use mimo_dae::dae::{DaeConfig, NetParams};
use mimo_dae::error::Error;
use mimo_dae::evaluator::{
    ber_sweep, channel_set_id, evaluation_channels, write_curve_csv, write_curve_json,
    BaselineSystem, DaeSystem,
};
use mimo_dae::trainer::{load_checkpoint, save_checkpoint, train_with_options};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MimoDaeStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Configuration parsing or validation failed; see last_error.
    InvalidConfig = 3,
    /// Training, evaluation, or I/O failed; see last_error.
    RuntimeError = 4,
    /// A panic was caught at the boundary; see last_error.
    Panic = 5,
}

/// Opaque parsed-and-validated experiment configuration.
pub struct MimoDaeExperiment {
    inner: Experiment,
}

/// Opaque trained model: network parameters plus their architecture config.
pub struct MimoDaeModel {
    config: DaeConfig,
    params: NetParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> MimoDaeStatus {
    match err {
        Error::Config(_) | Error::InvalidInput(_) => MimoDaeStatus::InvalidConfig,
        _ => MimoDaeStatus::RuntimeError,
    }
}

fn guard(f: impl FnOnce() -> MimoDaeStatus) -> MimoDaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic without message".to_string());
            set_last_error(&msg);
            MimoDaeStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be a valid NUL-terminated C string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, MimoDaeStatus> {
    if ptr.is_null() {
        set_last_error("null string argument");
        return Err(MimoDaeStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error("string argument is not valid UTF-8");
        MimoDaeStatus::InvalidUtf8
    })
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mimo_dae_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message of the most recent error on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn mimo_dae_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parse experiment TOML into a handle. On success `out` owns the handle;
/// release it with `mimo_dae_experiment_free`.
///
/// # Safety
/// `toml_text` must be a valid NUL-terminated C string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn mimo_dae_experiment_parse(
    toml_text: *const c_char,
    out: *mut *mut MimoDaeExperiment,
) -> MimoDaeStatus {
    guard(|| {
        if out.is_null() {
            set_last_error("null output pointer");
            return MimoDaeStatus::NullArgument;
        }
        let text = match utf8_arg(toml_text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match parse_experiment(text, &[]) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(MimoDaeExperiment { inner }));
                MimoDaeStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `handle` must come from `mimo_dae_experiment_parse` (or be null).
#[no_mangle]
pub unsafe extern "C" fn mimo_dae_experiment_free(handle: *mut MimoDaeExperiment) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Train a model under the experiment's config and schedule.
///
/// # Safety
/// `experiment` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mimo_dae_train(
    experiment: *const MimoDaeExperiment,
    out: *mut *mut MimoDaeModel,
) -> MimoDaeStatus {
    guard(|| {
        let Some(exp) = experiment.as_ref() else {
            set_last_error("null experiment handle");
            return MimoDaeStatus::NullArgument;
        };
        if out.is_null() {
            set_last_error("null output pointer");
            return MimoDaeStatus::NullArgument;
        }
        match train_with_options(&exp.inner.dae, &exp.inner.train, None, None) {
            Ok(result) => {
                *out = Box::into_raw(Box::new(MimoDaeModel {
                    config: exp.inner.dae.clone(),
                    params: result.params,
                }));
                MimoDaeStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `handle` must come from this library (or be null).
#[no_mangle]
pub unsafe extern "C" fn mimo_dae_model_free(handle: *mut MimoDaeModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Save a model as a checkpoint file.
///
/// # Safety
/// `model` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mimo_dae_model_save(
    model: *const MimoDaeModel,
    path: *const c_char,
) -> MimoDaeStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            set_last_error("null model handle");
            return MimoDaeStatus::NullArgument;
        };
        let path = match utf8_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match save_checkpoint(Path::new(path), &m.config, &m.params, 0, 0) {
            Ok(()) => MimoDaeStatus::Ok,
            Err(e) => {
                set_last_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Load a checkpoint file into a model handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mimo_dae_model_load(
    path: *const c_char,
    out: *mut *mut MimoDaeModel,
) -> MimoDaeStatus {
    guard(|| {
        if out.is_null() {
            set_last_error("null output pointer");
            return MimoDaeStatus::NullArgument;
        }
        let path = match utf8_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_checkpoint(Path::new(path)) {
            Ok(ckpt) => {
                *out = Box::into_raw(Box::new(MimoDaeModel {
                    config: ckpt.config,
                    params: ckpt.params,
                }));
                MimoDaeStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Sweep the model over the experiment's grid; write CSV and JSON curves.
///
/// # Safety
/// All handles must be live; paths must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mimo_dae_eval_to_files(
    model: *const MimoDaeModel,
    experiment: *const MimoDaeExperiment,
    csv_path: *const c_char,
    json_path: *const c_char,
) -> MimoDaeStatus {
    guard(|| {
        let (Some(m), Some(exp)) = (model.as_ref(), experiment.as_ref()) else {
            set_last_error("null model or experiment handle");
            return MimoDaeStatus::NullArgument;
        };
        let csv = match utf8_arg(csv_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let json = match utf8_arg(json_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let run = || -> Result<(), Error> {
            let channels = evaluation_channels(exp.inner.eval.seed, exp.inner.eval.channels);
            let system = DaeSystem { config: &m.config, params: &m.params };
            let curve = ber_sweep(
                &system,
                &channels,
                &exp.inner.eval.grid_db,
                exp.inner.eval.frames_per_point,
                exp.inner.eval.seed,
                &channel_set_id(exp.inner.eval.seed, exp.inner.eval.channels),
            )?;
            write_curve_csv(Path::new(csv), &curve)?;
            write_curve_json(Path::new(json), &curve)?;
            Ok(())
        };
        match run() {
            Ok(()) => MimoDaeStatus::Ok,
            Err(e) => {
                set_last_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Sweep the classical baseline over the experiment's grid to CSV.
///
/// # Safety
/// `experiment` must be live; `csv_path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mimo_dae_baseline_to_csv(
    experiment: *const MimoDaeExperiment,
    csv_path: *const c_char,
) -> MimoDaeStatus {
    guard(|| {
        let Some(exp) = experiment.as_ref() else {
            set_last_error("null experiment handle");
            return MimoDaeStatus::NullArgument;
        };
        let csv = match utf8_arg(csv_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let run = || -> Result<(), Error> {
            let channels = evaluation_channels(exp.inner.eval.seed, exp.inner.eval.channels);
            let system = BaselineSystem { n_s: exp.inner.dae.n_s, power: exp.inner.dae.power };
            let curve = ber_sweep(
                &system,
                &channels,
                &exp.inner.eval.grid_db,
                exp.inner.eval.frames_per_point,
                exp.inner.eval.seed,
                &channel_set_id(exp.inner.eval.seed, exp.inner.eval.channels),
            )?;
            write_curve_csv(Path::new(csv), &curve)?;
            Ok(())
        };
        match run() {
            Ok(()) => MimoDaeStatus::Ok,
            Err(e) => {
                set_last_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Monte Carlo BER of the model at one Eb/N0 point.
///
/// # Safety
/// Handles must be live; `ber_out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn mimo_dae_eval_point(
    model: *const MimoDaeModel,
    experiment: *const MimoDaeExperiment,
    ebn0_db: f64,
    frames_per_point: u64,
    ber_out: *mut f64,
) -> MimoDaeStatus {
    guard(|| {
        let (Some(m), Some(exp)) = (model.as_ref(), experiment.as_ref()) else {
            set_last_error("null model or experiment handle");
            return MimoDaeStatus::NullArgument;
        };
        if ber_out.is_null() {
            set_last_error("null output pointer");
            return MimoDaeStatus::NullArgument;
        }
        if frames_per_point == 0 {
            set_last_error("frames_per_point must be >= 1");
            return MimoDaeStatus::InvalidConfig;
        }
        let channels = evaluation_channels(exp.inner.eval.seed, exp.inner.eval.channels);
        let system = DaeSystem { config: &m.config, params: &m.params };
        match ber_sweep(
            &system,
            &channels,
            &[ebn0_db],
            frames_per_point,
            exp.inner.eval.seed,
            &channel_set_id(exp.inner.eval.seed, exp.inner.eval.channels),
        ) {
            Ok(curve) => {
                *ber_out = curve.rows[0].ber;
                MimoDaeStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}
