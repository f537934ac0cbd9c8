//! Scenario configuration, loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControllerGains;
use crate::geometry::{unit, Vec2};
use crate::mrse::MrseConfig;
use crate::sensors::SensorConfig;
use crate::tracker::TrackerConfig;
use crate::velest::ResponseModel;

/// Every violated field, one message each.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid scenario configuration: {}", .0.join("; "))]
pub struct ConfigError(pub Vec<String>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// First-order velocity time constant [s].
    pub tau: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// The onboard velocity loop closes on the fused velocity estimate, so
    /// estimation error shows up as a velocity offset of the real vehicle.
    pub odometry_feedback: bool,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            tau: 0.5,
            v_max: 8.0,
            a_max: 4.0,
            odometry_feedback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Rows of `per_row` agents, `spacing` apart, every other row shifted by
    /// half a spacing so that neighbors form equilateral triangles.
    Triangular {
        spacing: f64,
        per_row: usize,
        #[serde(default)]
        origin: [f64; 2],
    },
    Explicit { positions: Vec<[f64; 2]> },
}

impl Default for Layout {
    fn default() -> Self {
        Layout::Triangular {
            spacing: 13.0,
            per_row: 3,
            origin: [0.0, 0.0],
        }
    }
}

impl Layout {
    pub fn positions(&self, n: usize) -> Vec<Vec2> {
        match self {
            Layout::Triangular {
                spacing,
                per_row,
                origin,
            } => {
                let per_row = (*per_row).max(1);
                let row_height = spacing * 3f64.sqrt() / 2.0;
                (0..n)
                    .map(|i| {
                        let row = i / per_row;
                        let col = i % per_row;
                        let shift = if row % 2 == 1 { 0.5 * spacing } else { 0.0 };
                        Vec2::new(origin[0] + row as f64 * row_height, origin[1] + col as f64 * spacing + shift)
                    })
                    .collect()
            }
            Layout::Explicit { positions } => positions.iter().take(n).map(|p| Vec2::new(p[0], p[1])).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub speed: f64,
    /// [rad/s], positive counter-clockwise.
    #[serde(default)]
    pub turn_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Static {
        position: [f64; 2],
    },
    /// Constant-speed path through the points; holds the last one.
    Waypoints {
        points: Vec<[f64; 2]>,
        speed: f64,
    },
    /// Intruder flying a sequence of constant-speed, constant-turn-rate arcs.
    Scripted {
        start: [f64; 2],
        heading: f64,
        segments: Vec<Segment>,
    },
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Static { position: [230.0, 13.0] }
    }
}

impl TargetSpec {
    pub fn position_at(&self, t: f64) -> Vec2 {
        match self {
            TargetSpec::Static { position } => Vec2::new(position[0], position[1]),
            TargetSpec::Waypoints { points, speed } => {
                let pts: Vec<Vec2> = points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
                let Some(first) = pts.first() else {
                    return Vec2::zeros();
                };
                let mut remaining = speed * t.max(0.0);
                let mut here = *first;
                for next in &pts[1..] {
                    let leg = (next - here).norm();
                    if remaining <= leg {
                        return here + (next - here) * (remaining / leg.max(f64::MIN_POSITIVE));
                    }
                    remaining -= leg;
                    here = *next;
                }
                here
            }
            TargetSpec::Scripted {
                start,
                heading,
                segments,
            } => {
                let mut p = Vec2::new(start[0], start[1]);
                let mut psi = *heading;
                let mut t_left = t.max(0.0);
                for s in segments {
                    let h = t_left.min(s.duration);
                    if s.turn_rate.abs() < 1e-12 {
                        p += unit(psi) * s.speed * h;
                    } else {
                        let r = s.speed / s.turn_rate;
                        let psi_end = psi + s.turn_rate * h;
                        p += Vec2::new(psi_end.sin() - psi.sin(), psi.cos() - psi_end.cos()) * r;
                        psi = psi_end;
                    }
                    t_left -= h;
                    if t_left <= 0.0 {
                        break;
                    }
                }
                p
            }
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self {
            TargetSpec::Static { .. } => {}
            TargetSpec::Waypoints { points, speed } => {
                if points.is_empty() {
                    v.push("target.points must not be empty".to_string());
                }
                if !(*speed >= 0.0) {
                    v.push("target.speed must be >= 0".to_string());
                }
            }
            TargetSpec::Scripted { segments, .. } => {
                for (i, s) in segments.iter().enumerate() {
                    if !(s.duration >= 0.0) || !(s.speed >= 0.0) || !s.turn_rate.is_finite() {
                        v.push(format!("target.segments[{i}] needs duration >= 0, speed >= 0 and finite turn_rate"));
                    }
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_agents: usize,
    /// [s]
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub safety_radius: f64,
    /// Smoothing window of the cluster velocity ratio [s].
    pub cvr_window: f64,
    /// Run agent stages on the rayon pool. Not serialized, so logs do not
    /// depend on it.
    #[serde(skip_serializing)]
    pub parallel: bool,
    /// Include per-track states in tick records.
    pub log_tracks: bool,
    pub layout: Layout,
    pub target: TargetSpec,
    pub gains: ControllerGains,
    pub sensors: SensorConfig,
    pub tracker: TrackerConfig,
    pub mrse: MrseConfig,
    pub plant: PlantConfig,
    /// Needed when communication is off.
    pub response_model: Option<ResponseModel>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".to_string(),
            n_agents: 6,
            duration: 70.0,
            dt: 0.1,
            seed: 0,
            safety_radius: 2.0,
            cvr_window: 1.0,
            parallel: false,
            log_tracks: true,
            layout: Layout::default(),
            target: TargetSpec::default(),
            gains: ControllerGains::default(),
            sensors: SensorConfig::default(),
            tracker: TrackerConfig::default(),
            mrse: MrseConfig::default(),
            plant: PlantConfig::default(),
            response_model: Some(ResponseModel { q1: 0.818730753, q2: 0.181269247 }),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config is always representable as TOML")
    }

    pub fn comm_enabled(&self) -> bool {
        self.sensors.comm.enabled
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.dt).round().max(0.0) as u64
    }

    pub fn initial_positions(&self) -> Vec<Vec2> {
        self.layout.positions(self.n_agents)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt > 0.0) {
            v.push("dt must be > 0".to_string());
        }
        if self.n_agents < 1 {
            v.push("n_agents must be >= 1".to_string());
        }
        if !(self.duration >= 0.0) {
            v.push("duration must be >= 0".to_string());
        }
        if !(self.safety_radius > 0.0) {
            v.push("safety_radius must be > 0".to_string());
        }
        if !(self.cvr_window > 0.0) {
            v.push("cvr_window must be > 0".to_string());
        }
        let positions = self.initial_positions();
        if positions.len() < self.n_agents {
            v.push(format!(
                "layout provides {} positions for {} agents",
                positions.len(),
                self.n_agents
            ));
        }
        if positions.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            v.push("layout positions must be finite".to_string());
        }
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if (positions[i] - positions[j]).norm() < self.safety_radius {
                    v.push(format!("initial positions of agents {i} and {j} are closer than safety_radius"));
                }
            }
        }
        v.extend(self.target.violations());
        v.extend(self.gains.violations("gains."));
        v.extend(self.sensors.violations("sensors."));
        v.extend(self.mrse.violations("mrse."));
        let t = &self.tracker;
        for (name, x) in [
            ("tracker.distance_sigma_rel", t.distance_sigma_rel),
            ("tracker.bearing_sigma", t.bearing_sigma),
        ] {
            if !(x >= 0.0) {
                v.push(format!("{name} must be >= 0"));
            }
        }
        for (name, x) in [
            ("tracker.position_sigma_floor", t.position_sigma_floor),
            ("tracker.velocity_sigma_comm", t.velocity_sigma_comm),
            ("tracker.velocity_sigma_estimated", t.velocity_sigma_estimated),
            ("tracker.drop_after", t.drop_after),
            ("tracker.init_velocity_var", t.init_velocity_var),
            ("tracker.init_acceleration_var", t.init_acceleration_var),
        ] {
            if !(x > 0.0) {
                v.push(format!("{name} must be > 0"));
            }
        }
        if t.q_diag.iter().any(|q| !(*q >= 0.0)) {
            v.push("tracker.q_diag entries must be >= 0".to_string());
        }
        let p = &self.plant;
        for (name, x) in [("plant.tau", p.tau), ("plant.v_max", p.v_max), ("plant.a_max", p.a_max)] {
            if !(x > 0.0) {
                v.push(format!("{name} must be > 0"));
            }
        }
        match self.response_model {
            Some(m) if !(m.q1.is_finite() && m.q2.is_finite()) => {
                v.push("response_model q1, q2 must be finite".to_string());
            }
            None if !self.comm_enabled() => {
                v.push("response_model is required when communication is disabled".to_string());
            }
            _ => {}
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(v))
        }
    }
}
