//! C ABI over the fastswarm simulator and estimators.
//!
//! Objects are opaque handles created by a `*_new` function and released by
//! the matching `*_free`. Every fallible call returns an [`FsStatus`]; on
//! failure a description is kept per thread and can be read with
//! [`fs_last_error_message`]. Output pointers are only written on success.
//!
//! Pointer arguments must be null or valid for the documented element count.
//! Handles must not be used from two threads at once.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::Matrix2;

use fastswarm::lkf::{Channel, Covariance6, Lkf, LkfError, LkfModel, Measurement2, StateVector6};
use fastswarm::metrics::summarize;
use fastswarm::mrse::{lambda_estimate, VioSample};
use fastswarm::sim::config::ScenarioConfig;
use fastswarm::sim::record::{LogHeader, RunArtifacts, TickRecord};
use fastswarm::sim::World;
use fastswarm::velest::{fit_response_model, ResponseSample};
use fastswarm::{Error, Vec2};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Numerical = 4,
    Precondition = 5,
    Simulation = 6,
    Fit = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

pub const FS_CHANNEL_POSITION: u32 = 0;
pub const FS_CHANNEL_VELOCITY: u32 = 1;
pub const FS_CHANNEL_ACCELERATION: u32 = 2;

/// Ground truth of one agent, world frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FsAgentState {
    pub id: u32,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub heading: f64,
}

/// Onboard estimates of one agent from the most recent tick, world frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FsAgentEstimate {
    pub id: u32,
    pub fused_position: [f64; 2],
    pub fused_velocity: [f64; 2],
    pub mrse_position: [f64; 2],
    pub vio_position: [f64; 2],
    pub commanded_velocity: [f64; 2],
    pub lambda: f64,
    pub neighbor_count: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FsResponseSample {
    pub velocity: [f64; 2],
    pub next_command: [f64; 2],
    pub next_velocity: [f64; 2],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FsResponseFit {
    pub q1: f64,
    pub q2: f64,
    pub residual_norm: f64,
    pub rows: usize,
}

/// A running scenario and the tick records produced so far.
pub struct FsSimulation {
    world: World,
    header: LogHeader,
    ticks: Vec<TickRecord>,
}

/// A constant-acceleration Kalman filter over `(x, y, ẋ, ẏ, ẍ, ÿ)`.
pub struct FsFilter {
    model: LkfModel,
    filter: Lkf,
}

struct Failure {
    status: FsStatus,
    message: String,
}

impl Failure {
    fn new(status: FsStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<LkfError> for Failure {
    fn from(e: LkfError) -> Self {
        let status = match e {
            LkfError::NumericalFault { .. } => FsStatus::Numerical,
            LkfError::Precondition(_) => FsStatus::Precondition,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Filter(f) => f.into(),
            Error::Config(_) => Failure::new(FsStatus::Config, e.to_string()),
            Error::Simulation(_) => Failure::new(FsStatus::Simulation, e.to_string()),
            Error::VelocityEstimation(_) => Failure::new(FsStatus::Fit, e.to_string()),
            Error::Io(_) | Error::Log(_) => Failure::new(FsStatus::Io, e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn guard(f: impl FnOnce() -> Outcome) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("panic: {detail}"));
            FsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(FsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(FsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(FsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(Failure::new(FsStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(FsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(FsStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure::new(FsStatus::Io, e.to_string()))
}

fn pair(v: &Vec2) -> [f64; 2] {
    [v.x, v.y]
}

/// Message of the most recent failure on the calling thread, or null. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn fs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a simulation from the text of a scenario TOML file.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_new(config_toml: *const c_char, out: *mut *mut FsSimulation) -> FsStatus {
    guard(|| {
        let source = text(config_toml, "config_toml")?;
        if out.is_null() {
            return Err(Failure::new(FsStatus::NullPointer, "out is null"));
        }
        let config = ScenarioConfig::from_toml_str(source).map_err(Error::from)?;
        let world = World::new(config)?;
        let header = world.header();
        let sim = Box::new(FsSimulation {
            world,
            header,
            ticks: Vec::new(),
        });
        put(out, Box::into_raw(sim), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fs_simulation_free(sim: *mut FsSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances one tick.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_step(sim: *mut FsSimulation) -> FsStatus {
    guard(|| {
        let sim = borrow_mut(sim, "sim")?;
        let record = sim.world.step().map_err(Error::from)?;
        sim.ticks.push(record);
        Ok(())
    })
}

/// Advances until the configured scenario duration is reached.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_run(sim: *mut FsSimulation) -> FsStatus {
    guard(|| {
        let sim = borrow_mut(sim, "sim")?;
        while sim.world.tick() < sim.world.config().ticks() {
            let record = sim.world.step().map_err(Error::from)?;
            sim.ticks.push(record);
        }
        Ok(())
    })
}

/// Number of ticks taken and the total the scenario runs for.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_progress(
    sim: *const FsSimulation,
    ticks_done: *mut u64,
    ticks_total: *mut u64,
) -> FsStatus {
    guard(|| {
        let sim = borrow(sim, "sim")?;
        put(ticks_done, sim.world.tick(), "ticks_done")?;
        put(ticks_total, sim.world.config().ticks(), "ticks_total")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fs_simulation_time(sim: *const FsSimulation, out: *mut f64) -> FsStatus {
    guard(|| put(out, borrow(sim, "sim")?.world.time(), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn fs_simulation_agent_count(sim: *const FsSimulation, out: *mut usize) -> FsStatus {
    guard(|| put(out, borrow(sim, "sim")?.world.truth().len(), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn fs_simulation_agent_state(
    sim: *const FsSimulation,
    index: usize,
    out: *mut FsAgentState,
) -> FsStatus {
    guard(|| {
        let sim = borrow(sim, "sim")?;
        let truth = sim.world.truth();
        let a = truth.get(index).ok_or_else(|| {
            Failure::new(
                FsStatus::OutOfRange,
                format!("agent index {index} out of range for {} agents", truth.len()),
            )
        })?;
        let state = FsAgentState {
            id: a.id.0,
            position: pair(&a.position),
            velocity: pair(&a.velocity),
            acceleration: pair(&a.acceleration),
            heading: a.heading,
        };
        put(out, state, "out")
    })
}

/// Estimates the agent acted on during the last tick. Fails with
/// `Precondition` before the first step.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_agent_estimate(
    sim: *const FsSimulation,
    index: usize,
    out: *mut FsAgentEstimate,
) -> FsStatus {
    guard(|| {
        let sim = borrow(sim, "sim")?;
        let last = sim
            .ticks
            .last()
            .ok_or_else(|| Failure::new(FsStatus::Precondition, "no tick has been simulated yet"))?;
        let r = last.agents.get(index).ok_or_else(|| {
            Failure::new(
                FsStatus::OutOfRange,
                format!("agent index {index} out of range for {} agents", last.agents.len()),
            )
        })?;
        let origin = sim.world.origins()[index];
        let estimate = FsAgentEstimate {
            id: r.id.0,
            fused_position: pair(&(r.fused_position + origin)),
            fused_velocity: pair(&r.fused_velocity),
            mrse_position: pair(&(r.mrse_position + origin)),
            vio_position: pair(&(r.vio_position + origin)),
            commanded_velocity: pair(&r.command.v_d),
            lambda: r.lambda,
            neighbor_count: r.neighbors.len() as u32,
        };
        put(out, estimate, "out")
    })
}

/// Metrics over the ticks simulated so far as a JSON object. Release the
/// string with `fs_string_free`.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_summary_json(sim: *const FsSimulation, out: *mut *mut c_char) -> FsStatus {
    guard(|| {
        let sim = borrow(sim, "sim")?;
        if out.is_null() {
            return Err(Failure::new(FsStatus::NullPointer, "out is null"));
        }
        let summary = summarize(&sim.header, &sim.ticks);
        let json = serde_json::to_string(&summary).map_err(|e| Failure::new(FsStatus::Io, e.to_string()))?;
        put(out, owned_string(json)?, "out")
    })
}

/// Writes the run log of the ticks simulated so far to `path`.
#[no_mangle]
pub unsafe extern "C" fn fs_simulation_write_log(sim: *const FsSimulation, path: *const c_char) -> FsStatus {
    guard(|| {
        let sim = borrow(sim, "sim")?;
        let path = text(path, "path")?;
        let artifacts = RunArtifacts {
            header: sim.header.clone(),
            ticks: sim.ticks.clone(),
            summary: summarize(&sim.header, &sim.ticks),
        };
        let file = File::create(path).map_err(|e| Failure::new(FsStatus::Io, format!("{path}: {e}")))?;
        let mut w = BufWriter::new(file);
        artifacts.write_log(&mut w)?;
        w.flush().map_err(|e| Failure::new(FsStatus::Io, e.to_string()))
    })
}

/// Creates a constant-acceleration filter. `q_diag`, `state` hold 6 values;
/// `cov` holds 36 values in row-major order.
#[no_mangle]
pub unsafe extern "C" fn fs_filter_new(
    dt: f64,
    q_diag: *const f64,
    state: *const f64,
    cov: *const f64,
    out: *mut *mut FsFilter,
) -> FsStatus {
    guard(|| {
        let q = StateVector6::from_column_slice(slice(q_diag, 6, "q_diag")?);
        let x = StateVector6::from_column_slice(slice(state, 6, "state")?);
        let p = Covariance6::from_row_slice(slice(cov, 36, "cov")?);
        if out.is_null() {
            return Err(Failure::new(FsStatus::NullPointer, "out is null"));
        }
        let model = LkfModel::constant_acceleration(dt, q)?;
        let filter = Box::new(FsFilter {
            model,
            filter: Lkf::new("ffi", x, p),
        });
        put(out, Box::into_raw(filter), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fs_filter_free(filter: *mut FsFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

#[no_mangle]
pub unsafe extern "C" fn fs_filter_predict(filter: *mut FsFilter) -> FsStatus {
    guard(|| {
        let f = borrow_mut(filter, "filter")?;
        f.filter.predict(&f.model, None)?;
        Ok(())
    })
}

/// Fuses a 2-D measurement of one `FS_CHANNEL_*` state pair. `z` holds 2
/// values, `r` a row-major 2×2 covariance.
#[no_mangle]
pub unsafe extern "C" fn fs_filter_correct(
    filter: *mut FsFilter,
    channel: u32,
    z: *const f64,
    r: *const f64,
    stamp: f64,
) -> FsStatus {
    guard(|| {
        let f = borrow_mut(filter, "filter")?;
        let channel = match channel {
            FS_CHANNEL_POSITION => Channel::Position,
            FS_CHANNEL_VELOCITY => Channel::Velocity,
            FS_CHANNEL_ACCELERATION => Channel::Acceleration,
            other => return Err(Failure::new(FsStatus::OutOfRange, format!("unknown channel {other}"))),
        };
        let z = slice(z, 2, "z")?;
        let r = Matrix2::from_row_slice(slice(r, 4, "r")?);
        let meas = Measurement2::for_channel(channel, Vec2::new(z[0], z[1]), r, stamp)?;
        f.filter.correct(&meas)?;
        Ok(())
    })
}

/// Copies the 6-value state estimate into `out`.
#[no_mangle]
pub unsafe extern "C" fn fs_filter_state(filter: *const FsFilter, out: *mut f64) -> FsStatus {
    guard(|| {
        let f = borrow(filter, "filter")?;
        if out.is_null() {
            return Err(Failure::new(FsStatus::NullPointer, "out is null"));
        }
        std::slice::from_raw_parts_mut(out, 6).copy_from_slice(f.filter.state.as_slice());
        Ok(())
    })
}

/// Copies the 6×6 covariance into `out`, row-major.
#[no_mangle]
pub unsafe extern "C" fn fs_filter_covariance(filter: *const FsFilter, out: *mut f64) -> FsStatus {
    guard(|| {
        let f = borrow(filter, "filter")?;
        if out.is_null() {
            return Err(Failure::new(FsStatus::NullPointer, "out is null"));
        }
        let dst = std::slice::from_raw_parts_mut(out, 36);
        for (i, row) in f.filter.cov.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                dst[6 * i + j] = *v;
            }
        }
        Ok(())
    })
}

/// VIO reliability estimate from feature statistics, in [0, 1].
/// `track_ages` holds `n_ages` tracking times in seconds.
#[no_mangle]
pub unsafe extern "C" fn fs_lambda_estimate(
    feature_count: usize,
    max_features: usize,
    track_ages: *const f64,
    n_ages: usize,
    average_track_age: f64,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        let sample = VioSample {
            position: Vec2::zeros(),
            velocity: Vec2::zeros(),
            acceleration: Vec2::zeros(),
            feature_count,
            max_features,
            track_ages: slice(track_ages, n_ages, "track_ages")?.to_vec(),
            average_track_age,
        };
        put(out, lambda_estimate(&sample), "out")
    })
}

/// Least-squares fit of the first-order velocity response model.
#[no_mangle]
pub unsafe extern "C" fn fs_fit_response_model(
    samples: *const FsResponseSample,
    n_samples: usize,
    out: *mut FsResponseFit,
) -> FsStatus {
    guard(|| {
        let rows: Vec<ResponseSample> = slice(samples, n_samples, "samples")?
            .iter()
            .map(|s| ResponseSample {
                velocity: Vec2::new(s.velocity[0], s.velocity[1]),
                next_command: Vec2::new(s.next_command[0], s.next_command[1]),
                next_velocity: Vec2::new(s.next_velocity[0], s.next_velocity[1]),
            })
            .collect();
        let fit = fit_response_model(&rows).map_err(Error::from)?;
        let result = FsResponseFit {
            q1: fit.model.q1,
            q2: fit.model.q2,
            residual_norm: fit.residual_norm,
            rows: fit.rows,
        };
        put(out, result, "out")
    })
}
