//! C ABI over `solar-smdp`.
//!
//! Models and policies are opaque heap handles created by `smdp_*` constructors
//! and released with the matching `*_free`. Every fallible call returns an
//! [`SmdpStatus`]; on failure [`smdp_last_error`] describes the problem. The
//! message is per thread and stays valid until the next call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use solar_smdp::cli::{solve_rvi, solve_vi};
use solar_smdp::config::ExperimentConfig;
use solar_smdp::policy::greedy_policy;
use solar_smdp::simulator::simulate;
use solar_smdp::{validate, Error, Event, Model, Policy};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Validation = 4,
    NonConvergence = 5,
    InvalidArgument = 6,
    Io = 7,
    Panic = 8,
}

/// Validated system plus the solver and simulation settings it was loaded
/// with.
pub struct SmdpModel {
    config: ExperimentConfig,
    model: Model,
}

pub struct SmdpPolicy {
    policy: Policy,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SmdpStatus {
    match e {
        Error::Validation(_) => SmdpStatus::Validation,
        Error::Config(_) => SmdpStatus::Config,
        Error::NonConvergence { .. } => SmdpStatus::NonConvergence,
        Error::Io(_) | Error::Csv(_) => SmdpStatus::Io,
        _ => SmdpStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SmdpStatus, String)>) -> SmdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SmdpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SmdpStatus::Panic
        }
    }
}

fn lib(e: Error) -> (SmdpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SmdpStatus, String) {
    (SmdpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (SmdpStatus, String)> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

fn boxed_model(config: ExperimentConfig) -> Result<*mut SmdpModel, (SmdpStatus, String)> {
    let model = validate(&config.params()).map_err(lib)?;
    Ok(Box::into_raw(Box::new(SmdpModel { config, model })))
}

/// Message of the last failed call on this thread, or an empty string.
#[no_mangle]
pub extern "C" fn smdp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads the bundled reference configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn smdp_model_table2(out: *mut *mut SmdpModel) -> SmdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = boxed_model(ExperimentConfig::table2())?;
        unsafe { *out = m };
        Ok(())
    })
}

/// Parses a TOML configuration held in a NUL-terminated string.
///
/// # Safety
/// `toml` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smdp_model_from_toml(toml: *const c_char, out: *mut *mut SmdpModel) -> SmdpStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = unsafe { CStr::from_ptr(toml) }
            .to_str()
            .map_err(|e| (SmdpStatus::InvalidUtf8, e.to_string()))?;
        let config = ExperimentConfig::from_toml_str(text).map_err(lib)?;
        let m = boxed_model(config)?;
        unsafe { *out = m };
        Ok(())
    })
}

/// # Safety
/// `model` must come from an `smdp_model_*` constructor and not be freed
/// twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn smdp_model_free(model: *mut SmdpModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of decision states, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smdp_model_num_states(model: *const SmdpModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.model.num_states())
}

/// Index of state `<[r, m], event>`, where `event` is a 0-based class or -1
/// for a radiation change.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smdp_state_index(
    model: *const SmdpModel,
    solar: usize,
    battery: u32,
    event: i32,
    out: *mut usize,
) -> SmdpStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sp = m.model.space();
        let ev = match event {
            -1 => Event::SolarTransition,
            n if n >= 0 && (n as usize) < sp.classes => Event::PacketArrival(n as usize),
            _ => return Err((SmdpStatus::InvalidArgument, format!("event {event} out of range"))),
        };
        if solar >= sp.solar_states || battery > sp.max_units {
            return Err((SmdpStatus::InvalidArgument, "state out of range".into()));
        }
        unsafe { *out = sp.encode(solar, battery, ev) };
        Ok(())
    })
}

fn emit_policy(policy: Policy, out: *mut *mut SmdpPolicy) {
    unsafe { *out = Box::into_raw(Box::new(SmdpPolicy { policy })) };
}

/// Average-cost optimal policy by relative value iteration. `gain` receives
/// g* when not null.
///
/// # Safety
/// `model` must be a live handle, `out` writable, `gain` null or writable.
#[no_mangle]
pub unsafe extern "C" fn smdp_solve_average(
    model: *const SmdpModel,
    out: *mut *mut SmdpPolicy,
    gain: *mut f64,
) -> SmdpStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = solve_rvi(&m.model, &m.config.solver_config()).map_err(lib)?;
        if !gain.is_null() {
            unsafe { *gain = r.gain };
        }
        emit_policy(r.policy, out);
        Ok(())
    })
}

/// Discounted-cost optimal policy by value iteration.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smdp_solve_discounted(model: *const SmdpModel, out: *mut *mut SmdpPolicy) -> SmdpStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = solve_vi(&m.model, &m.config.solver_config()).map_err(lib)?;
        emit_policy(r.policy, out);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smdp_policy_greedy(model: *const SmdpModel, out: *mut *mut SmdpPolicy) -> SmdpStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        emit_policy(greedy_policy(&m.model), out);
        Ok(())
    })
}

/// Action code at `state`: 0 macro cell, 1 small cell, -1 no-op.
///
/// # Safety
/// `policy` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smdp_policy_action(policy: *const SmdpPolicy, state: usize, out: *mut i8) -> SmdpStatus {
    guard(|| {
        let p = unsafe { deref(policy, "policy") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        if state >= p.policy.len() {
            return Err((SmdpStatus::InvalidArgument, format!("state {state} out of range")));
        }
        unsafe { *out = p.policy.action(state).code() };
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library and not be freed twice. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn smdp_policy_free(policy: *mut SmdpPolicy) {
    if !policy.is_null() {
        drop(unsafe { Box::from_raw(policy) });
    }
}

/// Simulates `runs` runs of `horizon` seconds and reports the mean and sample
/// standard deviation of the per-run average cost.
///
/// # Safety
/// Handles must be live; `mean` and `stddev` writable.
#[no_mangle]
pub unsafe extern "C" fn smdp_simulate(
    model: *const SmdpModel,
    policy: *const SmdpPolicy,
    horizon: f64,
    runs: usize,
    seed: u64,
    mean: *mut f64,
    stddev: *mut f64,
) -> SmdpStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let p = unsafe { deref(policy, "policy") }?;
        if mean.is_null() || stddev.is_null() {
            return Err(null("output"));
        }
        let mut cfg = m.config.sim_config();
        cfg.horizon = horizon;
        cfg.runs = runs;
        cfg.seed = seed;
        let r = simulate(&p.policy, &m.model, &cfg).map_err(lib)?;
        unsafe {
            *mean = r.mean_avg_cost;
            *stddev = r.std_avg_cost;
        }
        Ok(())
    })
}
