//! Full-state multi-robot state estimation (MRSE) of the focal UAV and its
//! adaptive fusion with visual-inertial odometry.
//!
//! The focal filter uses the first-order velocity-lag model
//!
//! ```text
//! A = | 1 0 Δt 0  Δt²/2 0     |    B = | 0      0      |
//!     | 0 1 0  Δt 0     Δt²/2 |        | 0      0      |
//!     | 0 0 e  0  Δt    0     |        | 1 − e  0      |
//!     | 0 0 0  e  0     Δt    |        | 0      1 − e  |
//!     | 0 0 0  0  1     0     |        | 0      0      |
//!     | 0 0 0  0  0     1     |        | 0      0      |
//! ```
//!
//! with `e = exp(−Δt/τ)` and the commanded velocity as input. Position fixes
//! come from the tracked neighbors, acceleration from the IMU.
//!
//! Fusion with VIO happens outside the filter: the fused position integrates
//! `λ·Δp_VIO + (1 − λ)·Δp_MRSE`, velocity and acceleration are convex
//! combinations, and `λ` slews toward a feature-based quality estimate.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::geometry::{AgentId, Vec2};
use crate::lkf::{Channel, Covariance6, InputMatrix, Lkf, LkfError, LkfModel, Measurement2, StateVector6};
use crate::tracker::TrackView;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MrseConfig {
    /// Velocity time constant of the focal model [s].
    pub tau: f64,
    pub q_diag: [f64; 6],
    /// Noise of the neighbor-based position fix [m].
    pub fix_sigma: f64,
    /// IMU acceleration noise assumed by the filter [m/s²].
    pub accel_sigma: f64,
    /// Noise of the velocity fix used by the velocity-only baseline [m/s].
    pub velocity_fix_sigma: f64,
    /// Slew rate `q` of the fusion parameter [1/s].
    pub lambda_rate: f64,
    /// Static position standard deviation attached to the fused output [m].
    pub fused_position_sigma: f64,
}

impl Default for MrseConfig {
    fn default() -> Self {
        MrseConfig {
            tau: 0.3,
            q_diag: [0.002, 0.002, 0.02, 0.02, 0.5, 0.5],
            fix_sigma: 1.0,
            accel_sigma: 0.2,
            velocity_fix_sigma: 2.0,
            lambda_rate: 0.2,
            fused_position_sigma: 0.5,
        }
    }
}

impl MrseConfig {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.tau > 0.0) {
            v.push(format!("{prefix}tau must be > 0"));
        }
        if self.q_diag.iter().any(|q| !(*q >= 0.0)) {
            v.push(format!("{prefix}q_diag entries must be >= 0"));
        }
        for (name, s) in [
            ("fix_sigma", self.fix_sigma),
            ("accel_sigma", self.accel_sigma),
            ("velocity_fix_sigma", self.velocity_fix_sigma),
        ] {
            if !(s > 0.0) {
                v.push(format!("{prefix}{name} must be > 0"));
            }
        }
        if !(self.lambda_rate > 0.0) {
            v.push(format!("{prefix}lambda_rate must be > 0"));
        }
        if !(self.fused_position_sigma >= 0.0) {
            v.push(format!("{prefix}fused_position_sigma must be >= 0"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalModel {
    pub tau: f64,
    pub dt: f64,
    pub q_diag: [f64; 6],
}

impl FocalModel {
    pub fn decay(&self) -> f64 {
        (-self.dt / self.tau).exp()
    }

    pub fn lkf_model(&self) -> Result<LkfModel, LkfError> {
        if !(self.tau > 0.0) {
            return Err(LkfError::Precondition(format!("time constant must be positive, got {}", self.tau)));
        }
        let dt = self.dt;
        let e = self.decay();
        let h = 0.5 * dt * dt;
        #[rustfmt::skip]
        let a = Covariance6::from_row_slice(&[
            1.0, 0.0, dt,  0.0, h,   0.0,
            0.0, 1.0, 0.0, dt,  0.0, h,
            0.0, 0.0, e,   0.0, dt,  0.0,
            0.0, 0.0, 0.0, e,   0.0, dt,
            0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ]);
        let mut b = InputMatrix::zeros();
        b[(2, 0)] = 1.0 - e;
        b[(3, 1)] = 1.0 - e;
        LkfModel::new(a, b, StateVector6::from(self.q_diag), dt)
    }
}

/// Position of the focal UAV implied by each neighbor seen this tick:
/// `track position − relative observation`, averaged. `None` when no
/// neighbor has both a live track and a fresh observation.
pub fn mrse_position_fix(tracks: &[TrackView], observations: &[(AgentId, Vec2)]) -> Option<Vec2> {
    let mut sum = Vec2::zeros();
    let mut n = 0usize;
    for (id, rel) in observations {
        if let Ok(i) = tracks.binary_search_by(|t| t.id.cmp(id)) {
            sum += tracks[i].position - rel;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Velocity of the focal UAV implied by neighbors observed in two
/// consecutive ticks: `track velocity − finite-differenced relative position`.
pub fn mrse_velocity_fix(
    tracks: &[TrackView],
    current: &[(AgentId, Vec2)],
    previous: &[(AgentId, Vec2)],
    dt: f64,
) -> Option<Vec2> {
    let mut sum = Vec2::zeros();
    let mut n = 0usize;
    for (id, rel) in current {
        let Some((_, prev)) = previous.iter().find(|(p, _)| p == id) else {
            continue;
        };
        if let Ok(i) = tracks.binary_search_by(|t| t.id.cmp(id)) {
            sum += tracks[i].velocity - (rel - prev) / dt;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn initial_cov() -> Covariance6 {
    Covariance6::from_diagonal(&StateVector6::from([0.01, 0.01, 0.01, 0.01, 0.1, 0.1]))
}

/// Full-state focal filter.
#[derive(Debug, Clone)]
pub struct MrseFilter {
    model: LkfModel,
    pub filter: Lkf,
    fix_r: Matrix2<f64>,
    accel_r: Matrix2<f64>,
}

impl MrseFilter {
    pub fn new(config: &MrseConfig, dt: f64, initial: StateVector6) -> Result<Self, LkfError> {
        let model = FocalModel {
            tau: config.tau,
            dt,
            q_diag: config.q_diag,
        }
        .lkf_model()?;
        Ok(MrseFilter {
            model,
            filter: Lkf::new("mrse", initial, initial_cov()),
            fix_r: Matrix2::identity() * config.fix_sigma.powi(2),
            accel_r: Matrix2::identity() * config.accel_sigma.powi(2),
        })
    }

    pub fn model(&self) -> &LkfModel {
        &self.model
    }

    /// Predicts with the commanded velocity, then corrects with the position
    /// fix and the IMU acceleration, in that order.
    pub fn step(
        &mut self,
        fix: Option<Vec2>,
        accel: Option<Vec2>,
        command: &Vec2,
        stamp: f64,
    ) -> Result<StateVector6, LkfError> {
        self.filter.predict(&self.model, Some(command))?;
        if let Some(p) = fix {
            let m = Measurement2::for_channel(Channel::Position, p, self.fix_r, stamp)?;
            self.filter.correct(&m)?;
        }
        if let Some(a) = accel {
            let m = Measurement2::for_channel(Channel::Acceleration, a, self.accel_r, stamp)?;
            self.filter.correct(&m)?;
        }
        Ok(self.filter.state)
    }

    pub fn state(&self) -> &StateVector6 {
        &self.filter.state
    }
}

/// Velocity-only estimator: same model and inputs, but neighbors contribute
/// only a velocity fix, so position is pure integration of the estimate.
#[derive(Debug, Clone)]
pub struct VelocityOnlyBaseline {
    model: LkfModel,
    pub filter: Lkf,
    vel_r: Matrix2<f64>,
    accel_r: Matrix2<f64>,
}

impl VelocityOnlyBaseline {
    pub fn new(config: &MrseConfig, dt: f64, initial: StateVector6) -> Result<Self, LkfError> {
        let model = FocalModel {
            tau: config.tau,
            dt,
            q_diag: config.q_diag,
        }
        .lkf_model()?;
        Ok(VelocityOnlyBaseline {
            model,
            filter: Lkf::new("velocity-only baseline", initial, initial_cov()),
            vel_r: Matrix2::identity() * config.velocity_fix_sigma.powi(2),
            accel_r: Matrix2::identity() * config.accel_sigma.powi(2),
        })
    }

    pub fn step(
        &mut self,
        velocity_fix: Option<Vec2>,
        accel: Option<Vec2>,
        command: &Vec2,
        stamp: f64,
    ) -> Result<StateVector6, LkfError> {
        self.filter.predict(&self.model, Some(command))?;
        if let Some(v) = velocity_fix {
            let m = Measurement2::for_channel(Channel::Velocity, v, self.vel_r, stamp)?;
            self.filter.correct(&m)?;
        }
        if let Some(a) = accel {
            let m = Measurement2::for_channel(Channel::Acceleration, a, self.accel_r, stamp)?;
            self.filter.correct(&m)?;
        }
        Ok(self.filter.state)
    }
}

/// One VIO output with the feature statistics that drive `λ_e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VioSample {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    /// Current number of tracked features `c_f`.
    pub feature_count: usize,
    /// Maximal number of features `C_f`.
    pub max_features: usize,
    /// Per-feature tracking times `t_i` [s].
    pub track_ages: Vec<f64>,
    /// Average feature tracking time `t_A` [s].
    pub average_track_age: f64,
}

/// `λ_e = c_f·Σt_i / (t_A·C_f²)`, clamped to [0, 1].
pub fn lambda_estimate(vio: &VioSample) -> f64 {
    if !(vio.average_track_age > 0.0) || vio.max_features == 0 {
        return 0.0;
    }
    let c_max = vio.max_features as f64;
    let age_sum: f64 = vio.track_ages.iter().sum();
    let value = vio.feature_count as f64 * age_sum / (vio.average_track_age * c_max * c_max);
    if value.is_finite() {
        value.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Slews `λ` toward `λ_e` by at most `q·Δt`, landing exactly on `λ_e` when
/// it is within one step.
pub fn lambda_update(previous: f64, estimate: f64, rate: f64, dt: f64) -> f64 {
    let step = rate * dt;
    let next = if (previous - estimate).abs() <= step {
        estimate
    } else if previous > estimate {
        previous - step
    } else {
        previous + step
    };
    next.clamp(0.0, 1.0)
}

/// Per-source state used by the fusion stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
}

impl SourceState {
    pub fn from_state(x: &StateVector6) -> Self {
        SourceState {
            position: Vec2::new(x[0], x[1]),
            velocity: Vec2::new(x[2], x[3]),
            acceleration: Vec2::new(x[4], x[5]),
        }
    }
}

impl From<&VioSample> for SourceState {
    fn from(v: &VioSample) -> Self {
        SourceState {
            position: v.position,
            velocity: v.velocity,
            acceleration: v.acceleration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionState {
    pub lambda: f64,
    pub lambda_estimate: f64,
    /// Slew rate `q` [1/s].
    pub rate: f64,
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    last_vio: Option<Vec2>,
    last_mrse: Option<Vec2>,
}

impl FusionState {
    pub fn new(position: Vec2, rate: f64) -> Self {
        FusionState {
            lambda: 1.0,
            lambda_estimate: 1.0,
            rate,
            position,
            velocity: Vec2::zeros(),
            acceleration: Vec2::zeros(),
            last_vio: None,
            last_mrse: None,
        }
    }

    /// Blends both sources with weight `lambda` on VIO. Position deltas are
    /// taken against the previous call; the first call only latches them.
    pub fn fuse(&mut self, vio: &SourceState, mrse: &SourceState, lambda: f64) {
        let lambda = lambda.clamp(0.0, 1.0);
        if let (Some(pv), Some(pm)) = (self.last_vio, self.last_mrse) {
            let dv = vio.position - pv;
            let dm = mrse.position - pm;
            self.position += dv * lambda + dm * (1.0 - lambda);
        }
        self.velocity = vio.velocity * lambda + mrse.velocity * (1.0 - lambda);
        self.acceleration = vio.acceleration * lambda + mrse.acceleration * (1.0 - lambda);
        self.last_vio = Some(vio.position);
        self.last_mrse = Some(mrse.position);
        self.lambda = lambda;
    }

    /// λ_e from the VIO sample, λ slew, then fusion.
    pub fn update(&mut self, vio: &VioSample, mrse: &SourceState, dt: f64) {
        self.lambda_estimate = lambda_estimate(vio);
        let lambda = lambda_update(self.lambda, self.lambda_estimate, self.rate, dt);
        self.fuse(&SourceState::from(vio), mrse, lambda);
    }
}

/// Static covariance attached to the fused position.
pub fn fused_position_covariance(sigma: f64) -> Matrix2<f64> {
    Matrix2::identity() * sigma * sigma
}
