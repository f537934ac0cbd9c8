//! Communication-less estimation of neighbor velocities.
//!
//! For every observable UAV the focal UAV guesses that agent's neighborhood
//! from its own surroundings, replays the shared flocking law from the
//! agent's point of view to get its desired velocity `v_d`, and runs the
//! first-order response model
//!
//! ```text
//! v_e(k+1) = q1·v_e(k) + q2·v_d(k+1)
//! ```
//!
//! whose parameters are fitted offline by least squares.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    Candidate, ControllerGains, FlockingController, NeighborMember, NeighborSelector, Neighborhood,
};
use crate::geometry::{bearing_of, wrap_angle, AgentId, Vec2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VelocityEstimationError {
    #[error("response model fit failed: system with {rows} rows is rank deficient")]
    RankDeficient { rows: usize },
    #[error("response model fit failed: {0}")]
    Fit(String),
    #[error("configuration error: response model is not fitted")]
    NotFitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub q1: f64,
    pub q2: f64,
}

impl ResponseModel {
    /// Exact discretization of a first-order lag with time constant `tau`.
    pub fn first_order(tau: f64, dt: f64) -> Self {
        let e = (-dt / tau).exp();
        ResponseModel { q1: e, q2: 1.0 - e }
    }

    /// Declared plausibility bounds `0 < q1 < 1`, `q2 > 0`.
    pub fn is_plausible(&self) -> bool {
        self.q1 > 0.0 && self.q1 < 1.0 && self.q2 > 0.0
    }

    pub fn step(&self, previous: &Vec2, desired: &Vec2) -> Vec2 {
        previous * self.q1 + desired * self.q2
    }
}

/// One regression row: `(v_e(k), v_d(k+1)) → v_e(k+1)`, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub velocity: Vec2,
    pub next_command: Vec2,
    pub next_velocity: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseFit {
    pub model: ResponseModel,
    pub residual_norm: f64,
    pub rows: usize,
}

/// Least-squares fit of `(q1, q2)`; both axes of every sample become rows of
/// one overdetermined system.
pub fn fit_response_model(samples: &[ResponseSample]) -> Result<ResponseFit, VelocityEstimationError> {
    let rows = samples.len() * 2;
    if rows < 2 {
        return Err(VelocityEstimationError::RankDeficient { rows });
    }
    let mut x = DMatrix::<f64>::zeros(rows, 2);
    let mut y = DVector::<f64>::zeros(rows);
    for (k, s) in samples.iter().enumerate() {
        for axis in 0..2 {
            let r = 2 * k + axis;
            x[(r, 0)] = s.velocity[axis];
            x[(r, 1)] = s.next_command[axis];
            y[r] = s.next_velocity[axis];
        }
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(VelocityEstimationError::Fit("non-finite sample".into()));
    }
    let svd = x.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min <= 1e-10 * s_max {
        return Err(VelocityEstimationError::RankDeficient { rows });
    }
    let theta = svd
        .solve(&y, 0.0)
        .map_err(|e| VelocityEstimationError::Fit(e.to_string()))?;
    let model = ResponseModel {
        q1: theta[0],
        q2: theta[1],
    };
    if !model.is_plausible() {
        warn!("fitted response model {model:?} is outside 0 < q1 < 1, q2 > 0");
    }
    let residual_norm = (&x * &theta - &y).norm();
    Ok(ResponseFit {
        model,
        residual_norm,
        rows,
    })
}

/// What the focal UAV assumes an observed agent can sense.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSensing {
    pub max_range: f64,
    pub fov: f64,
    /// How long an agent that left the guessed field of view stays a
    /// candidate, mirroring the track drop timeout [s].
    pub hold: f64,
}

impl ViewSensing {
    fn sees(&self, rel: &Vec2, heading: f64) -> bool {
        rel.norm() <= self.max_range && wrap_angle(bearing_of(rel) - heading).abs() <= 0.5 * self.fov
    }
}

/// Guessed neighborhood of one observed agent, expressed relative to it.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedNeighborhoodView {
    pub observed: AgentId,
    pub members: Vec<Candidate>,
}

/// Heading guess for an observed agent: along its tracked velocity, or
/// `fallback` when it is nearly hovering.
pub fn estimated_heading(velocity: &Vec2, fallback: f64) -> f64 {
    if velocity.norm() > 0.5 {
        bearing_of(velocity)
    } else {
        fallback
    }
}

/// Runs the focal UAV's own selection rule from the observed agent's
/// position, over the other observed agents the focal UAV believes it can
/// see (range and field of view from its guessed heading). The focal UAV
/// itself is a candidate under the same visibility test.
pub fn estimate_neighbor_neighborhood(
    surroundings: &[Candidate],
    observed: usize,
    focal: AgentId,
    focal_velocity: &Vec2,
    heading: f64,
    sensing: &ViewSensing,
    selector: &dyn NeighborSelector,
) -> EstimatedNeighborhoodView {
    let candidates: Vec<Candidate> = relative_to(surroundings, observed, focal, focal_velocity)
        .filter(|c| sensing.sees(&c.rel_position, heading))
        .collect();
    EstimatedNeighborhoodView {
        observed: surroundings[observed].id,
        members: selector.select(&candidates, heading),
    }
}

/// Everyone but the observed agent, the focal UAV included, relative to the
/// observed agent.
fn relative_to<'a>(
    surroundings: &'a [Candidate],
    observed: usize,
    focal: AgentId,
    focal_velocity: &Vec2,
) -> impl Iterator<Item = Candidate> + 'a {
    let me = surroundings[observed];
    surroundings
        .iter()
        .filter(move |c| c.id != me.id)
        .map(move |c| Candidate {
            id: c.id,
            rel_position: c.rel_position - me.rel_position,
            velocity: c.velocity,
        })
        .chain(std::iter::once(Candidate {
            id: focal,
            rel_position: -me.rel_position,
            velocity: *focal_velocity,
        }))
}

#[derive(Debug, Clone, PartialEq)]
struct ObservedMemory {
    controller: FlockingController,
    estimate: Vec2,
    /// Time since each candidate was last inside the guessed field of view.
    hidden_for: BTreeMap<AgentId, f64>,
}

/// Output for one observed agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub id: AgentId,
    pub velocity: Vec2,
    pub desired: Vec2,
}

/// Per-focal-UAV estimator state: one replayed controller and one previous
/// estimate per observed agent.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityEstimator {
    gains: ControllerGains,
    model: Option<ResponseModel>,
    sensing: ViewSensing,
    memory: BTreeMap<AgentId, ObservedMemory>,
}

impl VelocityEstimator {
    pub fn new(gains: ControllerGains, model: Option<ResponseModel>, sensing: ViewSensing) -> Self {
        VelocityEstimator {
            gains,
            model,
            sensing,
            memory: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> Option<ResponseModel> {
        self.model
    }

    /// Estimates the velocity of every agent in `surroundings` (relative
    /// positions and tracked velocities, sorted by id). `target` is the
    /// target position relative to the focal UAV.
    #[allow(clippy::too_many_arguments)]
    pub fn estimate_velocities(
        &mut self,
        surroundings: &[Candidate],
        focal: AgentId,
        focal_velocity: &Vec2,
        target: &Vec2,
        fallback_heading: f64,
        selector: &dyn NeighborSelector,
        dt: f64,
    ) -> Result<Vec<VelocityEstimate>, VelocityEstimationError> {
        let model = self.model.ok_or(VelocityEstimationError::NotFitted)?;
        self.memory.retain(|id, _| surroundings.iter().any(|c| c.id == *id));
        let mut out = Vec::with_capacity(surroundings.len());
        for (idx, agent) in surroundings.iter().enumerate() {
            let heading = estimated_heading(&agent.velocity, fallback_heading);
            let gains = &self.gains;
            let mem = self.memory.entry(agent.id).or_insert_with(|| ObservedMemory {
                controller: FlockingController::new(gains.clone(), heading),
                estimate: agent.velocity,
                hidden_for: BTreeMap::new(),
            });
            let sensing = &self.sensing;
            let candidates: Vec<Candidate> = relative_to(surroundings, idx, focal, focal_velocity)
                .filter(|c| {
                    let age = mem.hidden_for.entry(c.id).or_insert(f64::INFINITY);
                    if sensing.sees(&c.rel_position, heading) {
                        *age = 0.0;
                    } else {
                        *age += dt;
                    }
                    *age <= sensing.hold
                })
                .collect();
            let hood = Neighborhood {
                members: selector
                    .select(&candidates, heading)
                    .iter()
                    .map(|c| NeighborMember::from_relative(Some(c.id), &c.rel_position, c.velocity))
                    .collect(),
            };
            let target_i = target - agent.rel_position;
            let (cmd, _, _) = mem.controller.replay(&hood, &target_i, dt);
            mem.estimate = model.step(&mem.estimate, &cmd.v_d);
            out.push(VelocityEstimate {
                id: agent.id,
                velocity: mem.estimate,
                desired: cmd.v_d,
            });
        }
        Ok(out)
    }
}
