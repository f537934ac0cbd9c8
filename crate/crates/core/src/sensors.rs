//! Seeded emulation of the onboard sensors: relative localization with a
//! rear blind spot, VIO with a feature-count model, IMU, target perception
//! and the velocity broadcast channel.
//!
//! Every (agent, sensor) pair draws from its own ChaCha stream derived from
//! the master seed, so agents can be sensed in any order or in parallel.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{bearing_of, wrap_angle, AgentId, Vec2};
use crate::mrse::VioSample;
use crate::tracker::RelativeObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingMode {
    /// Point along the commanded velocity.
    Velocity,
    /// Point toward the target.
    Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VioConfig {
    pub position_sigma: f64,
    pub velocity_sigma: f64,
    pub acceleration_sigma: f64,
    /// Random-walk intensity of the velocity bias [m/s/√s].
    pub bias_walk_sigma: f64,
    /// Bias walk is scaled by `1 + gain·(1 − c_f/C_f)`.
    pub starvation_gain: f64,
    /// `C_f`.
    pub max_features: usize,
    /// Ground speed at which no features survive [m/s].
    pub speed_starve: f64,
    pub feature_count_sigma: f64,
    /// Correlation time of the feature-count noise [s].
    pub feature_count_correlation: f64,
    /// Mean feature lifetime while hovering [s].
    pub hover_track_life: f64,
    /// Ground length over which features leave the image [m].
    pub footprint_length: f64,
    /// `t_A` [s].
    pub average_track_age: f64,
}

impl Default for VioConfig {
    fn default() -> Self {
        VioConfig {
            position_sigma: 0.05,
            velocity_sigma: 0.05,
            acceleration_sigma: 0.1,
            bias_walk_sigma: 0.002,
            starvation_gain: 4.0,
            max_features: 150,
            speed_starve: 8.0,
            feature_count_sigma: 2.0,
            feature_count_correlation: 2.0,
            hover_track_life: 50.0,
            footprint_length: 28.0,
            average_track_age: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommConfig {
    pub enabled: bool,
    pub latency_ticks: u64,
    pub drop_prob: f64,
}

impl Default for CommConfig {
    fn default() -> Self {
        CommConfig {
            enabled: true,
            latency_ticks: 1,
            drop_prob: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub bearing_sigma: f64,
    /// Multiplicative range noise.
    pub distance_sigma_rel: f64,
    pub dropout_prob: f64,
    pub max_range: f64,
    pub fov_horizontal: f64,
    pub blind_spot: f64,
    pub imu_accel_sigma: f64,
    /// Noise of the emulated relative target position [m].
    pub target_sigma: f64,
    pub heading_mode: HeadingMode,
    pub vio: VioConfig,
    pub comm: CommConfig,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            bearing_sigma: 1f64.to_radians(),
            distance_sigma_rel: 0.1,
            dropout_prob: 0.1,
            max_range: 60.0,
            fov_horizontal: 320f64.to_radians(),
            blind_spot: 40f64.to_radians(),
            imu_accel_sigma: 0.1,
            target_sigma: 0.5,
            heading_mode: HeadingMode::Velocity,
            vio: VioConfig::default(),
            comm: CommConfig::default(),
        }
    }
}

impl SensorConfig {
    /// Every sensor collapses to ground truth.
    pub fn noiseless() -> Self {
        SensorConfig {
            bearing_sigma: 0.0,
            distance_sigma_rel: 0.0,
            dropout_prob: 0.0,
            imu_accel_sigma: 0.0,
            target_sigma: 0.0,
            vio: VioConfig {
                position_sigma: 0.0,
                velocity_sigma: 0.0,
                acceleration_sigma: 0.0,
                bias_walk_sigma: 0.0,
                feature_count_sigma: 0.0,
                ..VioConfig::default()
            },
            comm: CommConfig {
                drop_prob: 0.0,
                ..CommConfig::default()
            },
            ..SensorConfig::default()
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if (self.fov_horizontal + self.blind_spot - TAU).abs() > 1e-9 {
            v.push(format!("{prefix}fov_horizontal + blind_spot must equal 2*pi"));
        }
        if !(self.fov_horizontal > 0.0 && self.blind_spot >= 0.0) {
            v.push(format!("{prefix}fov_horizontal must be > 0 and blind_spot >= 0"));
        }
        let sigmas = [
            ("bearing_sigma", self.bearing_sigma),
            ("distance_sigma_rel", self.distance_sigma_rel),
            ("imu_accel_sigma", self.imu_accel_sigma),
            ("target_sigma", self.target_sigma),
            ("vio.position_sigma", self.vio.position_sigma),
            ("vio.velocity_sigma", self.vio.velocity_sigma),
            ("vio.acceleration_sigma", self.vio.acceleration_sigma),
            ("vio.bias_walk_sigma", self.vio.bias_walk_sigma),
            ("vio.feature_count_sigma", self.vio.feature_count_sigma),
        ];
        for (name, s) in sigmas {
            if !(s >= 0.0) {
                v.push(format!("{prefix}{name} must be >= 0"));
            }
        }
        for (name, p) in [("dropout_prob", self.dropout_prob), ("comm.drop_prob", self.comm.drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                v.push(format!("{prefix}{name} must be in [0, 1]"));
            }
        }
        if !(self.max_range > 0.0) {
            v.push(format!("{prefix}max_range must be > 0"));
        }
        let vio = &self.vio;
        if vio.max_features == 0 {
            v.push(format!("{prefix}vio.max_features must be > 0"));
        }
        for (name, x) in [
            ("vio.speed_starve", vio.speed_starve),
            ("vio.feature_count_correlation", vio.feature_count_correlation),
            ("vio.hover_track_life", vio.hover_track_life),
            ("vio.footprint_length", vio.footprint_length),
            ("vio.average_track_age", vio.average_track_age),
        ] {
            if !(x > 0.0) {
                v.push(format!("{prefix}{name} must be > 0"));
            }
        }
        if !(vio.starvation_gain >= 0.0) {
            v.push(format!("{prefix}vio.starvation_gain must be >= 0"));
        }
        v
    }
}

/// Sensor streams; each (agent, stream) pair owns an independent RNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorStream {
    Relative = 1,
    Vio = 2,
    Imu = 3,
    Comm = 4,
    Target = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, agent: AgentId, stream: SensorStream) -> ChaCha8Rng {
    let s = splitmix64(splitmix64(splitmix64(seed) ^ u64::from(agent.0)) ^ stream as u64);
    ChaCha8Rng::seed_from_u64(s)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn gauss2(rng: &mut ChaCha8Rng) -> Vec2 {
    Vec2::new(gauss(rng), gauss(rng))
}

/// Ground truth of one agent in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub id: AgentId,
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    pub heading: f64,
}

/// Whether a body-frame bearing lies inside the horizontal field of view
/// (outside the rear blind spot).
pub fn in_field_of_view(body_bearing: f64, fov: f64) -> bool {
    wrap_angle(body_bearing).abs() <= 0.5 * fov
}

/// Relative observations of every other agent in range and outside the
/// blind spot, each independently dropped with `dropout_prob`.
pub fn observe(
    world: &[AgentTruth],
    observer: usize,
    cfg: &SensorConfig,
    stamp: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<RelativeObservation> {
    let me = &world[observer];
    let mut out = Vec::new();
    for other in world.iter().filter(|a| a.id != me.id) {
        // Fixed draw pattern per candidate keeps streams aligned across visibility changes.
        let keep: f64 = rng.random();
        let nb = gauss(rng);
        let nd = gauss(rng);
        let rel = other.position - me.position;
        let distance = rel.norm();
        let body_bearing = wrap_angle(bearing_of(&rel) - me.heading);
        if distance > cfg.max_range || distance <= 0.0 || !in_field_of_view(body_bearing, cfg.fov_horizontal) {
            continue;
        }
        if keep < cfg.dropout_prob {
            continue;
        }
        let bearing = if cfg.bearing_sigma > 0.0 {
            wrap_angle(body_bearing + cfg.bearing_sigma * nb)
        } else {
            body_bearing
        };
        let distance = if cfg.distance_sigma_rel > 0.0 {
            (distance * (1.0 + cfg.distance_sigma_rel * nd)).max(1e-3)
        } else {
            distance
        };
        out.push(RelativeObservation {
            observer: me.id,
            observed: other.id,
            bearing,
            distance,
            stamp,
        });
    }
    out
}

pub fn imu_sample(acceleration: &Vec2, sigma: f64, rng: &mut ChaCha8Rng) -> Vec2 {
    let n = gauss2(rng);
    if sigma > 0.0 {
        acceleration + n * sigma
    } else {
        *acceleration
    }
}

pub fn target_sample(relative: &Vec2, sigma: f64, rng: &mut ChaCha8Rng) -> Vec2 {
    let n = gauss2(rng);
    if sigma > 0.0 {
        relative + n * sigma
    } else {
        *relative
    }
}

/// Drifting VIO with a feature population whose size shrinks with ground
/// speed and whose tracks die faster as features sweep through the image.
#[derive(Debug, Clone)]
pub struct VioEmulator {
    cfg: VioConfig,
    bias: Vec2,
    drift: Vec2,
    ages: Vec<f64>,
    count_offset: f64,
}

impl VioEmulator {
    pub fn new(cfg: VioConfig, rng: &mut ChaCha8Rng) -> Self {
        let mean_life = cfg.hover_track_life;
        let ages = (0..cfg.max_features)
            .map(|_| {
                let u: f64 = rng.random();
                -mean_life * (1.0 - u).ln()
            })
            .collect();
        VioEmulator {
            cfg,
            bias: Vec2::zeros(),
            drift: Vec2::zeros(),
            ages,
            count_offset: 0.0,
        }
    }

    pub fn drift(&self) -> Vec2 {
        self.drift
    }

    fn update_features(&mut self, speed: f64, dt: f64, rng: &mut ChaCha8Rng) {
        let c = &self.cfg;
        let hazard = 1.0 / c.hover_track_life + speed / c.footprint_length;
        let p_die = 1.0 - (-hazard * dt).exp();
        let mut survivors = Vec::with_capacity(self.ages.len());
        for age in &self.ages {
            let u: f64 = rng.random();
            if u >= p_die {
                survivors.push(age + dt);
            }
        }
        let c_max = c.max_features as f64;
        let nominal = c_max * (1.0 - speed / c.speed_starve).max(0.0);
        let rho = (-dt / c.feature_count_correlation).exp();
        self.count_offset = rho * self.count_offset + (1.0 - rho * rho).sqrt() * c.feature_count_sigma * gauss(rng);
        let target = (nominal + self.count_offset).round().clamp(0.0, c_max) as usize;
        while survivors.len() > target {
            let idx = rng.random_range(0..survivors.len());
            survivors.swap_remove(idx);
        }
        survivors.resize(target.max(survivors.len()), 0.0);
        self.ages = survivors;
    }

    /// One VIO output for an agent whose true state is given in its local frame.
    pub fn sample(
        &mut self,
        position: &Vec2,
        velocity: &Vec2,
        acceleration: &Vec2,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> VioSample {
        self.update_features(velocity.norm(), dt, rng);
        let c = &self.cfg;
        let quality = self.ages.len() as f64 / c.max_features as f64;
        let walk = c.bias_walk_sigma * dt.sqrt() * (1.0 + c.starvation_gain * (1.0 - quality));
        self.bias += gauss2(rng) * walk;
        self.drift += self.bias * dt;
        let np = gauss2(rng) * c.position_sigma;
        let nv = gauss2(rng) * c.velocity_sigma;
        let na = gauss2(rng) * c.acceleration_sigma;
        VioSample {
            position: position + self.drift + np,
            velocity: velocity + self.bias + nv,
            acceleration: acceleration + na,
            feature_count: self.ages.len(),
            max_features: c.max_features,
            track_ages: self.ages.clone(),
            average_track_age: c.average_track_age,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityMessage {
    pub sender: AgentId,
    pub velocity: Vec2,
    pub stamp: f64,
}

/// Inbound velocity channel of one receiver.
#[derive(Debug, Clone)]
pub struct CommChannel {
    cfg: CommConfig,
    in_flight: VecDeque<(u64, VelocityMessage)>,
}

impl CommChannel {
    pub fn new(cfg: CommConfig) -> Self {
        CommChannel {
            cfg,
            in_flight: VecDeque::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.cfg.enabled
    }

    /// Queues broadcasts sent at `tick`; each message is dropped independently.
    pub fn transmit(&mut self, tick: u64, messages: &[VelocityMessage], rng: &mut ChaCha8Rng) {
        if !self.cfg.enabled {
            return;
        }
        for m in messages {
            let u: f64 = rng.random();
            if u >= self.cfg.drop_prob {
                self.in_flight.push_back((tick + self.cfg.latency_ticks, *m));
            }
        }
    }

    /// Messages due at `tick`, in send order.
    pub fn deliver(&mut self, tick: u64) -> Vec<VelocityMessage> {
        let mut out = Vec::new();
        while let Some((due, _)) = self.in_flight.front() {
            if *due > tick {
                break;
            }
            out.push(self.in_flight.pop_front().unwrap().1);
        }
        out
    }
}

/// Heading that keeps the field of view pointed along the chosen direction,
/// holding the previous value when that direction is undefined.
pub fn choose_heading(mode: HeadingMode, command: &Vec2, target: &Vec2, previous: f64) -> f64 {
    let dir = match mode {
        HeadingMode::Velocity => command,
        HeadingMode::Goal => target,
    };
    if dir.norm() > 0.2 {
        bearing_of(dir)
    } else {
        previous
    }
}
