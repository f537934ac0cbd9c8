//! State-feedback flocking law with group-velocity feedforward.
//!
//! The desired lateral velocity is
//!
//! ```text
//! v_d = k_p·r_d + k_v·ṙ_d + v_G
//! ```
//!
//! where `r_d` is the desired position relative to the focal UAV, built from
//! the neighborhood as `Σ w(φ_i, Ψ)·g(φ_i, d_i)`, and `v_G` is the group
//! velocity along the group heading `Ψ`, ramped down near the target.
//!
//! Geometry of `g`:
//! - an isolated neighbor pulls the focal UAV along the line of sight until
//!   the distance equals `d_des`: `g = û(φ)·(d − d_des)`;
//! - two neighbors whose bearings differ by less than `θ_tri` form a
//!   triangle: both contribute the apex at distance `d_des` from each of
//!   them, on the focal UAV's side of their baseline.
//!
//! Weights are `exp(−θ_i/θ_scale)` normalized over the neighborhood, with
//! `θ_i = |wrap(φ_i − Ψ)|`, so neighbors behind the focal UAV count less.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{bearing_of, unit, wrap_angle, AgentId, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerGains {
    /// Position feedback gain [1/s].
    pub k_p: f64,
    /// Velocity feedback gain [-].
    pub k_v: f64,
    /// Maximal group speed `v_D` [m/s].
    pub max_group_speed: f64,
    /// Below this distance to the target the group velocity is zero [m].
    pub d_min: f64,
    /// Above this distance the group velocity saturates at `v_D` [m].
    pub d_max: f64,
    /// Desired inter-agent distance [m].
    pub d_des: f64,
    /// Bearing separation under which two neighbors form a triangle [rad].
    pub theta_tri: f64,
    /// Angular scale of the weight function [rad].
    pub theta_scale: f64,
    /// Maximal neighborhood size.
    pub n_max: usize,
    /// Output clamp as a multiple of `v_D`.
    pub v_max_factor: f64,
    /// Cutoff of the one-pole filter on the `r_d` finite difference [Hz].
    pub rate_cutoff_hz: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            k_p: 0.4,
            k_v: 0.3,
            max_group_speed: 5.0,
            d_min: 15.0,
            d_max: 40.0,
            d_des: 13.0,
            theta_tri: PI / 3.0,
            theta_scale: PI / 4.0,
            n_max: 4,
            v_max_factor: 1.2,
            rate_cutoff_hz: 2.0,
        }
    }
}

impl ControllerGains {
    pub fn v_max(&self) -> f64 {
        self.v_max_factor * self.max_group_speed
    }

    /// Lists every violated constraint, prefixed with `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                v.push(format!("{prefix}{msg}"));
            }
        };
        check(self.k_p > 0.0, "k_p must be > 0");
        check(self.k_v > 0.0, "k_v must be > 0");
        check(self.max_group_speed >= 0.0, "max_group_speed must be >= 0");
        check(self.d_min > 0.0 && self.d_min < self.d_max, "require 0 < d_min < d_max");
        check(self.d_des > 0.0, "d_des must be > 0");
        check(self.theta_tri > 0.0 && self.theta_tri < PI, "theta_tri must be in (0, pi)");
        check(self.theta_scale > 0.0, "theta_scale must be > 0");
        check(self.n_max >= 1, "n_max must be >= 1");
        check(self.v_max_factor >= 1.0, "v_max_factor must be >= 1");
        check(self.rate_cutoff_hz > 0.0, "rate_cutoff_hz must be > 0");
        v
    }
}

/// One member of the neighborhood, relative to the focal UAV. `id` is `None`
/// for the target once it joins the neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborMember {
    pub id: Option<AgentId>,
    pub bearing: f64,
    pub distance: f64,
    pub rel_velocity: Vec2,
}

impl NeighborMember {
    pub fn from_relative(id: Option<AgentId>, rel_position: &Vec2, rel_velocity: Vec2) -> Self {
        NeighborMember {
            id,
            bearing: bearing_of(rel_position),
            distance: rel_position.norm(),
            rel_velocity,
        }
    }

    pub fn position(&self) -> Vec2 {
        unit(self.bearing) * self.distance
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub members: Vec<NeighborMember>,
}

impl Neighborhood {
    pub fn center(&self) -> Option<Vec2> {
        if self.members.is_empty() {
            return None;
        }
        let sum: Vec2 = self.members.iter().map(|m| m.position()).sum();
        Some(sum / self.members.len() as f64)
    }

    pub fn ids(&self) -> Vec<AgentId> {
        self.members.iter().filter_map(|m| m.id).collect()
    }
}

/// An agent the focal UAV could pick as neighbor, relative to itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: AgentId,
    pub rel_position: Vec2,
    pub velocity: Vec2,
}

/// Picks the neighborhood out of the surroundings. Swap-in point for other
/// selection rules.
pub trait NeighborSelector {
    fn select(&self, candidates: &[Candidate], group_heading: f64) -> Vec<Candidate>;
}

/// The `n_max` nearest candidates, ties broken by ascending id.
#[derive(Debug, Clone, Copy)]
pub struct NearestSelector {
    pub n_max: usize,
}

impl NeighborSelector for NearestSelector {
    fn select(&self, candidates: &[Candidate], _group_heading: f64) -> Vec<Candidate> {
        let mut sorted = candidates.to_vec();
        sorted.sort_by(|a, b| {
            a.rel_position
                .norm()
                .total_cmp(&b.rel_position.norm())
                .then(a.id.cmp(&b.id))
        });
        sorted.truncate(self.n_max);
        sorted
    }
}

/// Direction from the neighborhood center to the goal. Returns `previous`
/// when the two coincide.
pub fn group_heading(center: &Vec2, goal: &Vec2, previous: f64) -> f64 {
    let d = goal - center;
    if d.norm() <= 1e-9 {
        previous
    } else {
        wrap_angle(bearing_of(&d))
    }
}

/// Normalized weights, strictly decreasing in the angle between bearing and heading.
pub fn weights(bearings: &[f64], heading: f64, theta_scale: f64) -> Vec<f64> {
    let thetas: Vec<f64> = bearings.iter().map(|b| wrap_angle(b - heading).abs()).collect();
    let min = thetas.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = thetas.iter().map(|t| (-(t - min) / theta_scale).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Greedy pairing of members whose bearings are closer than `theta_tri`,
/// closest pair first. Returns the partner index per member.
fn pair_members(members: &[NeighborMember], theta_tri: f64) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            let sep = wrap_angle(members[i].bearing - members[j].bearing).abs();
            if sep < theta_tri {
                pairs.push((sep, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut partner = vec![None; members.len()];
    for (_, i, j) in pairs {
        if partner[i].is_none() && partner[j].is_none() {
            partner[i] = Some(j);
            partner[j] = Some(i);
        }
    }
    partner
}

fn single_offset(member: &NeighborMember, d_des: f64) -> Vec2 {
    unit(member.bearing) * (member.distance - d_des)
}

/// Apex of the triangle with side `d_des` on the focal UAV's side of the
/// baseline between two neighbors.
fn triangle_apex(a: &Vec2, b: &Vec2, d_des: f64) -> Option<Vec2> {
    let mid = (a + b) * 0.5;
    let base = b - a;
    let half = base.norm() * 0.5;
    let normal = if half > 1e-9 {
        let n = Vec2::new(-base.y, base.x) / (2.0 * half);
        if n.dot(&mid) > 0.0 {
            -n
        } else {
            n
        }
    } else if mid.norm() > 1e-9 {
        -mid / mid.norm()
    } else {
        return None;
    };
    let height = (d_des * d_des - half * half).max(0.0).sqrt();
    Some(mid + normal * height)
}

/// Per-member desired position of the focal UAV relative to itself.
pub fn member_offsets(n: &Neighborhood, gains: &ControllerGains) -> Vec<Vec2> {
    let partner = pair_members(&n.members, gains.theta_tri);
    n.members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            partner[i]
                .and_then(|j| triangle_apex(&m.position(), &n.members[j].position(), gains.d_des))
                .unwrap_or_else(|| single_offset(m, gains.d_des))
        })
        .collect()
}

pub fn desired_position(n: &Neighborhood, heading: f64, gains: &ControllerGains) -> Vec2 {
    if n.members.is_empty() {
        return Vec2::zeros();
    }
    let bearings: Vec<f64> = n.members.iter().map(|m| m.bearing).collect();
    let w = weights(&bearings, heading, gains.theta_scale);
    member_offsets(n, gains)
        .iter()
        .zip(w)
        .map(|(g, w)| g * w)
        .sum()
}

/// Group speed ramp: zero inside `d_min`, `v_D` beyond `d_max`, linear between.
pub fn group_speed(target_distance: f64, gains: &ControllerGains) -> f64 {
    if target_distance <= gains.d_min {
        0.0
    } else if target_distance > gains.d_max {
        gains.max_group_speed
    } else {
        gains.max_group_speed * (target_distance - gains.d_min) / (gains.d_max - gains.d_min)
    }
}

pub fn group_velocity(target: &Vec2, heading: f64, gains: &ControllerGains) -> Vec2 {
    unit(heading) * group_speed(target.norm(), gains)
}

/// Desired velocity together with its three components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlockingCommand {
    pub v_d: Vec2,
    pub position_feedback: Vec2,
    pub velocity_feedback: Vec2,
    pub feedforward: Vec2,
}

impl Default for FlockingCommand {
    fn default() -> Self {
        FlockingCommand {
            v_d: Vec2::zeros(),
            position_feedback: Vec2::zeros(),
            velocity_feedback: Vec2::zeros(),
            feedforward: Vec2::zeros(),
        }
    }
}

/// Result of one controller evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub command: FlockingCommand,
    pub neighborhood: Neighborhood,
    pub heading: f64,
    pub desired_position: Vec2,
}

/// Flocking law plus the one tick of memory it needs: the previous `r_d`
/// for the rate estimate and the previous group heading.
#[derive(Debug, Clone, PartialEq)]
pub struct FlockingController {
    pub gains: ControllerGains,
    prev_rd: Option<Vec2>,
    rd_rate: Vec2,
    heading: f64,
}

impl FlockingController {
    pub fn new(gains: ControllerGains, initial_heading: f64) -> Self {
        FlockingController {
            gains,
            prev_rd: None,
            rd_rate: Vec2::zeros(),
            heading: initial_heading,
        }
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn rd_rate(&self) -> Vec2 {
        self.rd_rate
    }

    fn update_rate(&mut self, rd: &Vec2, dt: f64) -> Vec2 {
        if let Some(prev) = self.prev_rd {
            let raw = (rd - prev) / dt;
            let rc = 1.0 / (2.0 * PI * self.gains.rate_cutoff_hz);
            let alpha = dt / (dt + rc);
            self.rd_rate += (raw - self.rd_rate) * alpha;
        }
        self.prev_rd = Some(*rd);
        self.rd_rate
    }

    /// Evaluates the control law for a given neighborhood and heading,
    /// updating the `ṙ_d` estimate. The target joins the neighborhood once
    /// it is within `d_min`.
    pub fn compute_command(&mut self, n: &Neighborhood, heading: f64, target: &Vec2, dt: f64) -> (FlockingCommand, Vec2) {
        let g = &self.gains;
        let mut hood = n.clone();
        if target.norm() <= g.d_min && target.norm() > 0.0 {
            hood.members.push(NeighborMember::from_relative(None, target, Vec2::zeros()));
        }
        let rd = desired_position(&hood, heading, g);
        let feedforward = group_velocity(target, heading, g);
        let rate = self.update_rate(&rd, dt);
        let g = &self.gains;
        let mut cmd = FlockingCommand {
            v_d: Vec2::zeros(),
            position_feedback: rd * g.k_p,
            velocity_feedback: rate * g.k_v,
            feedforward,
        };
        cmd.v_d = cmd.position_feedback + cmd.velocity_feedback + cmd.feedforward;
        let speed = cmd.v_d.norm();
        let v_max = g.v_max();
        if speed > v_max {
            let s = v_max / speed;
            cmd.position_feedback *= s;
            cmd.velocity_feedback *= s;
            cmd.feedforward *= s;
            cmd.v_d = cmd.position_feedback + cmd.velocity_feedback + cmd.feedforward;
        }
        (cmd, rd)
    }

    /// Group heading update followed by the control law, for an already
    /// selected neighborhood. Returns the command, `r_d` and the heading.
    pub fn replay(&mut self, neighborhood: &Neighborhood, target: &Vec2, dt: f64) -> (FlockingCommand, Vec2, f64) {
        let center = neighborhood.center().unwrap_or_else(Vec2::zeros);
        let heading = group_heading(&center, target, self.heading);
        self.heading = heading;
        let (command, rd) = self.compute_command(neighborhood, heading, target, dt);
        (command, rd, heading)
    }

    /// Full controller tick: neighbor selection, group heading, control law.
    pub fn step(
        &mut self,
        surroundings: &[Candidate],
        selector: &dyn NeighborSelector,
        target: &Vec2,
        dt: f64,
    ) -> ControlOutput {
        let selected = selector.select(surroundings, self.heading);
        let neighborhood = Neighborhood {
            members: selected
                .iter()
                .map(|c| NeighborMember::from_relative(Some(c.id), &c.rel_position, c.velocity))
                .collect(),
        };
        let (command, rd, heading) = self.replay(&neighborhood, target, dt);
        ControlOutput {
            command,
            neighborhood,
            heading,
            desired_position: rd,
        }
    }
}
