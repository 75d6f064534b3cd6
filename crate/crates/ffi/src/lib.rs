//! C interface to the microswim simulator and trained policies.
//!
//! Every fallible call returns an `MsStatus`; on anything but `Ok` the
//! message is available from `ms_last_error` on the same thread. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use microswim::distill::{math_policy_action, MathPolicy};
use microswim::env::{Environment, MicrorobotEnv, ACTION_LEN, OBS_LEN};
use microswim::harness::checkpoint::load_actor;
use microswim::harness::config::RunConfig;
use microswim::harness::logs::MathPolicyFile;
use microswim::magnetics::sample_field;
use microswim::neural::{action_to_command, policy_mean, Actor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Checkpoint = 5,
    Simulation = 6,
    Panic = 7,
}

/// Simulator instance.
pub struct MsEnv {
    config: RunConfig,
    env: MicrorobotEnv,
}

/// Actor network loaded from a checkpoint.
pub struct MsPolicy {
    actor: Actor,
}

/// Closed-form policy produced by distillation.
pub struct MsMathPolicy {
    policy: MathPolicy,
}

/// Per-step results from `ms_env_step`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MsStepInfo {
    pub reward: f64,
    pub theta_before_deg: f64,
    pub delta_theta_deg: f64,
    pub done: bool,
    pub goal_reached: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MsStatus, String);

impl Failure {
    fn new(status: MsStatus, msg: impl ToString) -> Self {
        Failure(status, msg.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> MsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(MsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(MsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::new(MsStatus::NullPointer, format!("{what} is null")));
    }
    if len != want {
        return Err(Failure::new(MsStatus::InvalidArgument, format!("{what} has length {len}, expected {want}")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a>(p: *mut f64, len: usize, want: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::new(MsStatus::NullPointer, format!("{what} is null")));
    }
    if len < want {
        return Err(Failure::new(MsStatus::InvalidArgument, format!("{what} holds {len} values, need {want}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, want))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(MsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(MsStatus::NullPointer, format!("{what} is null")))
}

fn sim_err(e: impl ToString) -> Failure {
    Failure::new(MsStatus::Simulation, e)
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn ms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn ms_obs_len() -> usize {
    OBS_LEN
}

#[no_mangle]
pub extern "C" fn ms_action_len() -> usize {
    ACTION_LEN
}

/// Creates a simulator from TOML run configuration text; NULL uses the
/// defaults. The environment must be reset before stepping.
///
/// # Safety
/// `config_toml` is NULL or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ms_env_new(config_toml: *const c_char, out: *mut *mut MsEnv) -> MsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(MsStatus::NullPointer, "out is null"));
        }
        let config = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml_str(str_arg(config_toml, "config")?).map_err(|e| Failure::new(MsStatus::Config, e))?
        };
        let env = config.build_env();
        *out = Box::into_raw(Box::new(MsEnv { config, env }));
        Ok(())
    })
}

/// # Safety
/// `env` is NULL or came from `ms_env_new` and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_env_free(env: *mut MsEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Starts an episode at a seeded random position and writes the
/// observation (`ms_obs_len()` values) into `obs`.
///
/// # Safety
/// `env` is a live handle and `obs` points to `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_env_reset(env: *mut MsEnv, seed: u64, obs: *mut f64, obs_len: usize) -> MsStatus {
    guard(|| {
        let env = handle_mut(env, "env")?;
        let out = out_arg(obs, obs_len, OBS_LEN, "obs")?;
        out.copy_from_slice(&env.env.reset(seed));
        Ok(())
    })
}

/// Like `ms_env_reset` but places the robot at `theta_deg`.
///
/// # Safety
/// As for `ms_env_reset`.
#[no_mangle]
pub unsafe extern "C" fn ms_env_reset_at(env: *mut MsEnv, theta_deg: f64, seed: u64, obs: *mut f64, obs_len: usize) -> MsStatus {
    guard(|| {
        let env = handle_mut(env, "env")?;
        if !theta_deg.is_finite() {
            return Err(Failure::new(MsStatus::InvalidArgument, "theta is not finite"));
        }
        let out = out_arg(obs, obs_len, OBS_LEN, "obs")?;
        out.copy_from_slice(&env.env.reset_at(theta_deg, seed));
        Ok(())
    })
}

/// Applies one action. The observation written to `obs` is the state
/// after the step (the next episode's first state when `done`).
///
/// # Safety
/// `env` is a live handle, `action` points to `action_len` doubles, `obs`
/// to `obs_len` doubles and `info` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ms_env_step(
    env: *mut MsEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    info: *mut MsStepInfo,
) -> MsStatus {
    guard(|| {
        let env = handle_mut(env, "env")?;
        let a = slice_arg(action, action_len, ACTION_LEN, "action")?;
        let out = out_arg(obs, obs_len, OBS_LEN, "obs")?;
        let step = env.env.step(a).map_err(sim_err)?;
        out.copy_from_slice(&step.observation);
        if let Some(info) = info.as_mut() {
            *info = MsStepInfo {
                reward: step.reward,
                theta_before_deg: step.position_before,
                delta_theta_deg: step.progress,
                done: step.done,
                goal_reached: step.goal_reached,
            };
        }
        Ok(())
    })
}

/// Current robot angle in degrees, [0, 360).
///
/// # Safety
/// `env` is a live handle and `theta_deg` is writable.
#[no_mangle]
pub unsafe extern "C" fn ms_env_theta(env: *const MsEnv, theta_deg: *mut f64) -> MsStatus {
    guard(|| {
        let env = handle(env, "env")?;
        let out = out_arg(theta_deg, 1, 1, "theta_deg")?;
        out[0] = env.env.position();
        Ok(())
    })
}

/// Field (T) at the robot's current position for `action` at time `t`.
///
/// # Safety
/// `env` is a live handle, `action` points to 4 doubles and `b` to 3.
#[no_mangle]
pub unsafe extern "C" fn ms_env_field(env: *const MsEnv, action: *const f64, action_len: usize, t: f64, b: *mut f64) -> MsStatus {
    guard(|| {
        let env = handle(env, "env")?;
        let a = slice_arg(action, action_len, ACTION_LEN, "action")?;
        let out = out_arg(b, 3, 3, "b")?;
        let cmd = action_to_command(a).map_err(sim_err)?;
        let position = env.config.swimmer.position(env.env.position());
        let s = sample_field(&cmd, &position, t, &env.env.turret).map_err(sim_err)?;
        out.copy_from_slice(&[s.b.x, s.b.y, s.b.z]);
        Ok(())
    })
}

/// Loads an actor from a checkpoint file (actor or full agent).
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ms_policy_load(path: *const c_char, out: *mut *mut MsPolicy) -> MsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(MsStatus::NullPointer, "out is null"));
        }
        let path = str_arg(path, "path")?;
        let ckpt = load_actor(Path::new(path)).map_err(|e| Failure::new(MsStatus::Checkpoint, e))?;
        if ckpt.actor.obs_len() != OBS_LEN || ckpt.actor.action_len() != ACTION_LEN {
            return Err(Failure::new(MsStatus::Checkpoint, "checkpoint does not fit the simulator"));
        }
        *out = Box::into_raw(Box::new(MsPolicy { actor: ckpt.actor }));
        Ok(())
    })
}

/// # Safety
/// `policy` is NULL or came from `ms_policy_load` and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_policy_free(policy: *mut MsPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Deterministic action (squashed mean) for one observation.
///
/// # Safety
/// `policy` is a live handle, `obs` points to `obs_len` doubles and
/// `action` to `action_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_policy_mean_action(
    policy: *const MsPolicy,
    obs: *const f64,
    obs_len: usize,
    action: *mut f64,
    action_len: usize,
) -> MsStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        let s = slice_arg(obs, obs_len, OBS_LEN, "obs")?;
        let out = out_arg(action, action_len, ACTION_LEN, "action")?;
        out.copy_from_slice(&policy_mean(&p.actor, s).map_err(sim_err)?);
        Ok(())
    })
}

/// Loads a distilled policy file.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ms_math_policy_load(path: *const c_char, out: *mut *mut MsMathPolicy) -> MsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(MsStatus::NullPointer, "out is null"));
        }
        let path = str_arg(path, "path")?;
        let text = std::fs::read_to_string(path).map_err(|e| Failure::new(MsStatus::Io, format!("{path}: {e}")))?;
        let file = MathPolicyFile::from_toml_str(&text).map_err(|e| Failure::new(MsStatus::Config, e))?;
        let policy = file.policy();
        if policy.dims.len() != ACTION_LEN {
            return Err(Failure::new(MsStatus::Config, format!("policy has {} dimensions", policy.dims.len())));
        }
        *out = Box::into_raw(Box::new(MsMathPolicy { policy }));
        Ok(())
    })
}

/// # Safety
/// `policy` is NULL or came from `ms_math_policy_load` and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_math_policy_free(policy: *mut MsMathPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Action of a distilled policy at `theta_deg`.
///
/// # Safety
/// `policy` is a live handle and `action` points to `action_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_math_policy_action(policy: *const MsMathPolicy, theta_deg: f64, action: *mut f64, action_len: usize) -> MsStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        if !theta_deg.is_finite() {
            return Err(Failure::new(MsStatus::InvalidArgument, "theta is not finite"));
        }
        let out = out_arg(action, action_len, ACTION_LEN, "action")?;
        out.copy_from_slice(&math_policy_action(&p.policy, theta_deg));
        Ok(())
    })
}
