//! C ABI over the quadruped environment and trained policies.
//!
//! Handles are opaque and owned by the caller: every `*_new`/`*_load` must
//! be paired with the matching `*_free`. Functions return a [`QtStatus`];
//! on failure `qt_last_error` describes the most recent error on the calling
//! thread. No function unwinds across the boundary.
//!
//! Handles are not synchronized. A handle may move between threads but must
//! not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use quadtorque::checkpoint::PolicyCheckpoint;
use quadtorque::env::quadruped::{make_quadruped, QuadrupedEnv, QuadrupedSpec};
use quadtorque::env::{DoneReason, EnvMode, Environment};
use quadtorque::model::{load_experiment, CommandConfig, ExperimentConfig, Task};
use quadtorque::ppo::ActorCritic;
use quadtorque::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Parse = 5,
    SimulationDiverged = 6,
    Checkpoint = 7,
    Panic = 8,
    Internal = 9,
}

/// Why an episode ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QtDone {
    Running = 0,
    Timeout = 1,
    Fall = 2,
    Failure = 3,
}

/// A single quadruped environment.
pub struct QtEnv {
    env: QuadrupedEnv,
    commands: CommandConfig,
    reset_done: bool,
}

/// A policy loaded from a checkpoint; evaluates the deterministic action.
pub struct QtPolicy {
    policy: ActorCritic,
    iteration: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> QtStatus {
    match e {
        Error::Io { .. } => QtStatus::Io,
        Error::Parse { .. } | Error::Csv(_) => QtStatus::Parse,
        Error::Validation { .. } | Error::ActionInvalid(_) | Error::TerrainTooSmall { .. } => {
            QtStatus::InvalidArgument
        }
        Error::ShapeMismatch { .. } => QtStatus::ShapeMismatch,
        Error::SimDiverged { .. } | Error::TorqueOutOfRange { .. } | Error::NonFinite(_) => {
            QtStatus::SimulationDiverged
        }
        Error::Checkpoint(_) => QtStatus::Checkpoint,
        Error::Other(_) => QtStatus::Internal,
    }
}

struct Fail(QtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(QtStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QtStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            QtStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(QtStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn slice_in<'a>(
    p: *const f64,
    len: usize,
    want: usize,
    what: &str,
) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != want {
        return Err(Fail(
            QtStatus::ShapeMismatch,
            format!("{what} has length {len}, expected {want}"),
        ));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(
    p: *mut f64,
    len: usize,
    want: usize,
    what: &str,
) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != want {
        return Err(Fail(
            QtStatus::ShapeMismatch,
            format!("{what} has length {len}, expected {want}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an environment from a TOML experiment file, or from the built-in
/// defaults when `config_path` is null. `eval` disables observation noise,
/// latency and pushes. Call `qt_env_reset` before stepping.
///
/// # Safety
/// `config_path` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qt_env_new(
    config_path: *const c_char,
    env_index: u32,
    eval: bool,
    out: *mut *mut QtEnv,
) -> QtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = if config_path.is_null() {
            ExperimentConfig::default()
        } else {
            load_experiment(path_arg(config_path, "config_path")?)?
        };
        if cfg.task != Task::Quadruped {
            return Err(Fail(
                QtStatus::InvalidArgument,
                "config is not a quadruped task".into(),
            ));
        }
        let spec = Arc::new(QuadrupedSpec::from_experiment(&cfg)?);
        let mode = if eval { EnvMode::Eval } else { EnvMode::Train };
        let env = make_quadruped(&spec, env_index as usize, mode)?;
        let handle = QtEnv {
            env,
            commands: cfg.env.commands.clone(),
            reset_done: false,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from `qt_env_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qt_env_free(env: *mut QtEnv) {
    if !env.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(env))));
    }
}

/// Observation length, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qt_env_obs_dim(env: *const QtEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.obs_dim())
}

/// Action length, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qt_env_act_dim(env: *const QtEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.act_dim())
}

/// Starts an episode and writes its first observation.
///
/// # Safety
/// `env` must be a live handle; `obs` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qt_env_reset(
    env: *mut QtEnv,
    seed: u64,
    obs: *mut f64,
    obs_len: usize,
) -> QtStatus {
    guard(|| {
        let h = env.as_mut().ok_or_else(|| null("env"))?;
        let out = slice_out(obs, obs_len, h.env.obs_dim(), "obs")?;
        out.copy_from_slice(&h.env.reset(seed));
        h.reset_done = true;
        Ok(())
    })
}

/// Applies one raw action. Writes the next observation, the step reward and
/// the done reason. After a done the environment must be reset.
///
/// # Safety
/// `env` must be a live handle; `action` must hold `act_len` doubles and
/// `obs` `obs_len` doubles; `reward` and `done` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qt_env_step(
    env: *mut QtEnv,
    action: *const f64,
    act_len: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut f64,
    done: *mut QtDone,
) -> QtStatus {
    guard(|| {
        let h = env.as_mut().ok_or_else(|| null("env"))?;
        if reward.is_null() || done.is_null() {
            return Err(null("reward/done"));
        }
        if !h.reset_done {
            return Err(Fail(
                QtStatus::InvalidArgument,
                "qt_env_reset must be called first".into(),
            ));
        }
        let a = slice_in(action, act_len, h.env.act_dim(), "action")?;
        let out = slice_out(obs, obs_len, h.env.obs_dim(), "obs")?;
        let t = h.env.step(a)?;
        out.copy_from_slice(&t.obs);
        *reward = t.reward;
        *done = match t.done {
            None => QtDone::Running,
            Some(DoneReason::Timeout) => QtDone::Timeout,
            Some(DoneReason::Fall) => QtDone::Fall,
            Some(DoneReason::Failure) => QtDone::Failure,
        };
        if t.done.is_some() {
            h.reset_done = false;
        }
        Ok(())
    })
}

/// Sets the velocity command `(vx, vy, wz)`, clamped to the configured
/// ranges. It takes effect in the next observation.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qt_env_set_command(
    env: *mut QtEnv,
    vx: f64,
    vy: f64,
    wz: f64,
) -> QtStatus {
    guard(|| {
        let h = env.as_mut().ok_or_else(|| null("env"))?;
        if ![vx, vy, wz].iter().all(|v| v.is_finite()) {
            return Err(Fail(
                QtStatus::InvalidArgument,
                "command must be finite".into(),
            ));
        }
        h.env.set_command(h.commands.clamp([vx, vy, wz]));
        Ok(())
    })
}

/// Writes the command currently in effect into `cmd[0..3]`.
///
/// # Safety
/// `env` must be a live handle; `cmd` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn qt_env_get_command(env: *const QtEnv, cmd: *mut f64) -> QtStatus {
    guard(|| {
        let h = env.as_ref().ok_or_else(|| null("env"))?;
        slice_out(cmd, 3, 3, "cmd")?.copy_from_slice(&h.env.command());
        Ok(())
    })
}

/// Loads a policy checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qt_policy_load(path: *const c_char, out: *mut *mut QtPolicy) -> QtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ckpt = PolicyCheckpoint::load(path_arg(path, "path")?)?;
        let handle = QtPolicy {
            policy: ckpt.policy,
            iteration: ckpt.iteration,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from `qt_policy_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qt_policy_free(policy: *mut QtPolicy) {
    if !policy.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(policy))));
    }
}

/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qt_policy_obs_dim(policy: *const QtPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.policy.obs_dim())
}

/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qt_policy_act_dim(policy: *const QtPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.policy.act_dim())
}

/// Training iteration the checkpoint was written at, or 0 for null.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qt_policy_iteration(policy: *const QtPolicy) -> u64 {
    policy.as_ref().map_or(0, |p| p.iteration)
}

/// Deterministic (mean) action for a raw observation.
///
/// # Safety
/// `policy` must be a live handle; `obs` must hold `obs_len` doubles and
/// `action` `act_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qt_policy_act(
    policy: *const QtPolicy,
    obs: *const f64,
    obs_len: usize,
    action: *mut f64,
    act_len: usize,
) -> QtStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let o = slice_in(obs, obs_len, p.policy.obs_dim(), "obs")?;
        let out = slice_out(action, act_len, p.policy.act_dim(), "action")?;
        out.copy_from_slice(&p.policy.act(o)?);
        Ok(())
    })
}
