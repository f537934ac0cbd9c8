//! Point-mass plant: first-order velocity lag with speed and acceleration caps.

use serde::{Deserialize, Serialize};

use super::config::PlantConfig;
use crate::geometry::Vec2;
use crate::velest::ResponseSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub position: Vec2,
    pub velocity: Vec2,
    /// Mean acceleration over the last step.
    pub acceleration: Vec2,
}

impl PlantState {
    pub fn at_rest(position: Vec2) -> Self {
        PlantState {
            position,
            velocity: Vec2::zeros(),
            acceleration: Vec2::zeros(),
        }
    }
}

/// Advances one step toward `target_velocity`. The uncapped velocity is the
/// exact lag solution; the velocity change is then limited to `a_max·dt`
/// and the result projected onto the `v_max` disc.
pub fn plant_step(state: &PlantState, target_velocity: &Vec2, cfg: &PlantConfig, dt: f64) -> PlantState {
    let decay = (-dt / cfg.tau).exp();
    let v = state.velocity;
    let mut next = target_velocity + (v - target_velocity) * decay;
    let dv = next - v;
    let dv_max = cfg.a_max * dt;
    if dv.norm() > dv_max {
        next = v + dv * (dv_max / dv.norm());
    }
    let speed = next.norm();
    if speed > cfg.v_max {
        next *= cfg.v_max / speed;
    }
    PlantState {
        position: state.position + (v + next) * (0.5 * dt),
        velocity: next,
        acceleration: (next - v) / dt,
    }
}

/// Commanded-velocity profiles (steps, ramps, sinusoids) flown by a lone
/// plant, recorded as response-model training samples.
pub fn training_samples(cfg: &PlantConfig, dt: f64) -> Vec<ResponseSample> {
    let steps = [(1.5, 0.0), (0.0, 0.0), (-1.0, 1.0), (0.0, 1.5), (0.0, 0.0)];
    let mut profiles: Vec<Box<dyn Fn(f64) -> Vec2>> = Vec::new();
    profiles.push(Box::new(move |t: f64| {
        let (x, y) = steps[((t / 4.0) as usize).min(steps.len() - 1)];
        Vec2::new(x, y)
    }));
    profiles.push(Box::new(|t: f64| {
        let r = (0.25 * t).min(3.0);
        Vec2::new(r, -0.5 * r)
    }));
    profiles.push(Box::new(|t: f64| {
        Vec2::new(2.5 * (0.8 * t).sin(), 1.5 * (0.5 * t).cos() - 1.5)
    }));
    let ticks = (20.0 / dt).round() as usize;
    let mut out = Vec::new();
    for profile in &profiles {
        let mut s = PlantState::at_rest(Vec2::zeros());
        for k in 0..ticks {
            let command = profile(k as f64 * dt);
            let next = plant_step(&s, &command, cfg, dt);
            out.push(ResponseSample {
                velocity: s.velocity,
                next_command: command,
                next_velocity: next.velocity,
            });
            s = next;
        }
    }
    out
}
