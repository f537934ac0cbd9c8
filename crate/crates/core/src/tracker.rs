//! Bank of per-neighbor Kalman filters.
//!
//! Each observable UAV gets its own constant-acceleration filter in the
//! observer's local frame. Position corrections come from relative
//! bearing/distance observations transformed with the observer pose;
//! velocity corrections come from the communication channel or from the
//! communication-less estimator. Within a tick, corrections are applied in
//! ascending id order, positions before velocities.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::geometry::{bearing_of, rotate, unit, AgentId, Vec2};
use crate::lkf::{Channel, Covariance6, Lkf, LkfError, LkfModel, Measurement2, StateVector6};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Per-step process variances for (x, y, ẋ, ẏ, ẍ, ÿ).
    pub q_diag: [f64; 6],
    /// Radial position noise as a fraction of range.
    pub distance_sigma_rel: f64,
    /// Bearing noise [rad]; tangential noise is `range · bearing_sigma`.
    pub bearing_sigma: f64,
    /// Range-independent position noise floor [m]; also absorbs observer pose error.
    pub position_sigma_floor: f64,
    /// Noise of communicated velocities [m/s].
    pub velocity_sigma_comm: f64,
    /// Noise of velocities produced by the communication-less estimator [m/s].
    pub velocity_sigma_estimated: f64,
    /// Tracks without a position update for longer than this are dropped [s].
    pub drop_after: f64,
    pub init_velocity_var: f64,
    pub init_acceleration_var: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            q_diag: [0.002, 0.002, 0.02, 0.02, 0.3, 0.3],
            distance_sigma_rel: 0.1,
            bearing_sigma: 1f64.to_radians(),
            position_sigma_floor: 0.5,
            velocity_sigma_comm: 0.3,
            velocity_sigma_estimated: 0.8,
            drop_after: 2.0,
            init_velocity_var: 25.0,
            init_acceleration_var: 10.0,
        }
    }
}

/// Observation of `observed` by `observer`: bearing in the observer's body
/// frame and range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeObservation {
    pub observer: AgentId,
    pub observed: AgentId,
    pub bearing: f64,
    pub distance: f64,
    pub stamp: f64,
}

impl RelativeObservation {
    /// Relative position in axes parallel to the local frame.
    pub fn relative_vector(&self, observer_heading: f64) -> Vec2 {
        rotate(&(unit(self.bearing) * self.distance), observer_heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverPose {
    pub position: Vec2,
    pub heading: f64,
}

/// Converts an observation into an absolute position in the observer's local frame.
pub fn observation_to_local(obs: &RelativeObservation, pose: &ObserverPose) -> Vec2 {
    pose.position + obs.relative_vector(pose.heading)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocitySource {
    Communicated,
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTrack {
    pub id: AgentId,
    pub filter: Lkf,
    pub last_pos_stamp: f64,
    pub last_vel_stamp: f64,
    /// Time since the last position correction [s].
    pub staleness: f64,
}

/// Read-only view of one track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackView {
    pub id: AgentId,
    pub position: Vec2,
    pub velocity: Vec2,
    pub staleness: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounters {
    pub stale_observations: u64,
    pub unknown_velocity_ids: u64,
}

#[derive(Debug, Clone)]
pub struct TrackBank {
    config: TrackerConfig,
    model: LkfModel,
    tracks: BTreeMap<AgentId, NeighborTrack>,
    pub dropped: DropCounters,
}

impl TrackBank {
    pub fn new(config: TrackerConfig, dt: f64) -> Result<Self, LkfError> {
        let model = LkfModel::constant_acceleration(dt, StateVector6::from(config.q_diag))?;
        Ok(TrackBank {
            config,
            model,
            tracks: BTreeMap::new(),
            dropped: DropCounters::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn model(&self) -> &LkfModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn get(&self, id: AgentId) -> Option<&NeighborTrack> {
        self.tracks.get(&id)
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.tracks.contains_key(&id)
    }

    /// Position measurement covariance: radial/tangential noise along the
    /// line of sight `los` (local axes) at `range`, plus an isotropic floor.
    fn position_covariance(&self, range: f64, los: f64) -> Matrix2<f64> {
        let radial = self.config.distance_sigma_rel * range;
        let tangential = self.config.bearing_sigma * range;
        let floor = self.config.position_sigma_floor.powi(2);
        let u = unit(los);
        let normal = Vec2::new(-u.y, u.x);
        u * u.transpose() * radial.powi(2) + normal * normal.transpose() * tangential.powi(2)
            + Matrix2::identity() * floor
    }

    /// Applies a relative-position observation. Returns the absolute position
    /// used as measurement, or `None` when the observation was stale.
    pub fn ingest_position(
        &mut self,
        obs: &RelativeObservation,
        pose: &ObserverPose,
    ) -> Result<Option<Vec2>, LkfError> {
        let z = observation_to_local(obs, pose);
        let measured = self.position_covariance(obs.distance, obs.bearing + pose.heading);
        // Existing tracks get the noise at the predicted geometry rather than
        // the measured one, so R does not correlate with the measurement error.
        let predicted = self.tracks.get(&obs.observed).map(|t| t.filter.position() - pose.position);
        let r = match predicted {
            Some(rel) if rel.norm() > 1e-9 => self.position_covariance(rel.norm(), bearing_of(&rel)),
            _ => measured,
        };
        match self.tracks.get_mut(&obs.observed) {
            Some(track) => {
                if obs.stamp < track.last_pos_stamp {
                    self.dropped.stale_observations += 1;
                    warn!("dropping out-of-order observation of {} at t={}", obs.observed, obs.stamp);
                    return Ok(None);
                }
                let meas = Measurement2::for_channel(Channel::Position, z, r, obs.stamp)
                    .map_err(|e| e.in_filter(&track.filter.name))?;
                track.filter.correct(&meas)?;
                track.last_pos_stamp = obs.stamp;
                track.staleness = 0.0;
            }
            None => {
                let pos_var = measured.diagonal().max();
                let mut state = StateVector6::zeros();
                state[0] = z.x;
                state[1] = z.y;
                let c = &self.config;
                let cov = Covariance6::from_diagonal(&StateVector6::from([
                    pos_var,
                    pos_var,
                    c.init_velocity_var,
                    c.init_velocity_var,
                    c.init_acceleration_var,
                    c.init_acceleration_var,
                ]));
                self.tracks.insert(
                    obs.observed,
                    NeighborTrack {
                        id: obs.observed,
                        filter: Lkf::new(format!("track {}", obs.observed), state, cov),
                        last_pos_stamp: obs.stamp,
                        last_vel_stamp: f64::NEG_INFINITY,
                        staleness: 0.0,
                    },
                );
            }
        }
        Ok(Some(z))
    }

    /// Applies a velocity measurement. Velocities of agents without a live
    /// track are dropped and counted; returns whether a correction happened.
    pub fn ingest_velocity(
        &mut self,
        id: AgentId,
        velocity: Vec2,
        stamp: f64,
        source: VelocitySource,
    ) -> Result<bool, LkfError> {
        let sigma = match source {
            VelocitySource::Communicated => self.config.velocity_sigma_comm,
            VelocitySource::Estimated => self.config.velocity_sigma_estimated,
        };
        let Some(track) = self.tracks.get_mut(&id) else {
            self.dropped.unknown_velocity_ids += 1;
            return Ok(false);
        };
        if stamp < track.last_vel_stamp {
            self.dropped.stale_observations += 1;
            return Ok(false);
        }
        let meas = Measurement2::for_channel(Channel::Velocity, velocity, Matrix2::identity() * sigma * sigma, stamp)
            .map_err(|e| e.in_filter(&track.filter.name))?;
        track.filter.correct(&meas)?;
        track.last_vel_stamp = stamp;
        Ok(true)
    }

    /// Applies one tick worth of measurements in the canonical order
    /// (ascending id, positions before velocities), independent of the
    /// order in which they arrived.
    pub fn ingest_batch(
        &mut self,
        observations: &[RelativeObservation],
        pose: &ObserverPose,
        velocities: &[(AgentId, Vec2, f64)],
        source: VelocitySource,
    ) -> Result<(), LkfError> {
        let mut obs: Vec<&RelativeObservation> = observations.iter().collect();
        obs.sort_by(|a, b| a.observed.cmp(&b.observed).then(a.stamp.total_cmp(&b.stamp)));
        for o in obs {
            self.ingest_position(o, pose)?;
        }
        let mut vel: Vec<&(AgentId, Vec2, f64)> = velocities.iter().collect();
        vel.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.total_cmp(&b.2)));
        for (id, v, stamp) in vel {
            self.ingest_velocity(*id, *v, *stamp, source)?;
        }
        Ok(())
    }

    /// Predicts every track forward and drops tracks whose staleness exceeds
    /// the configured threshold.
    pub fn step(&mut self, dt: f64) -> Result<(), LkfError> {
        if !(dt > 0.0) {
            return Err(LkfError::Precondition(format!("step duration must be positive, got {dt}")));
        }
        if (dt - self.model.dt).abs() > 1e-12 {
            self.model = LkfModel::constant_acceleration(dt, self.model.q_diag)?;
        }
        for track in self.tracks.values_mut() {
            track.filter.predict(&self.model, None)?;
            track.staleness += dt;
        }
        let limit = self.config.drop_after;
        self.tracks.retain(|_, t| t.staleness <= limit);
        Ok(())
    }

    /// Tracks sorted by id.
    pub fn snapshot(&self) -> Vec<TrackView> {
        self.tracks
            .values()
            .map(|t| TrackView {
                id: t.id,
                position: t.filter.position(),
                velocity: t.filter.velocity(),
                staleness: t.staleness,
            })
            .collect()
    }

    pub fn tracks(&self) -> impl Iterator<Item = &NeighborTrack> {
        self.tracks.values()
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::lkf;

    fn obs(id: u32, bearing: f64, distance: f64, stamp: f64) -> RelativeObservation {
        RelativeObservation {
            observer: AgentId(0),
            observed: AgentId(id),
            bearing,
            distance,
            stamp,
        }
    }

    fn origin() -> ObserverPose {
        ObserverPose {
            position: Vec2::zeros(),
            heading: 0.0,
        }
    }

    #[test]
    fn axis_aligned_observation() {
        let z = observation_to_local(&obs(1, 0.0, 10.0, 0.0), &origin());
        assert!((z - Vec2::new(10.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotated_observer() {
        let pose = ObserverPose {
            position: Vec2::new(5.0, 5.0),
            heading: PI / 2.0,
        };
        let z = observation_to_local(&obs(1, 0.0, 10.0, 0.0), &pose);
        assert!((z - Vec2::new(5.0, 15.0)).norm() < 1e-12);
    }

    #[test]
    fn first_sight_spawns_position_initialized_track() {
        let mut bank = TrackBank::new(TrackerConfig::default(), 0.1).unwrap();
        bank.ingest_position(&obs(3, 0.0, 10.0, 0.0), &origin()).unwrap();
        let t = bank.get(AgentId(3)).unwrap();
        assert_eq!(t.filter.position(), Vec2::new(10.0, 0.0));
        assert_eq!(t.filter.velocity(), Vec2::zeros());
        assert_eq!(t.filter.cov[(2, 2)], 25.0);
        assert_eq!(t.filter.cov[(4, 4)], 10.0);
    }

    #[test]
    fn out_of_order_observation_is_counted_not_fatal() {
        let mut bank = TrackBank::new(TrackerConfig::default(), 0.1).unwrap();
        bank.ingest_position(&obs(1, 0.0, 10.0, 1.0), &origin()).unwrap();
        let before = bank.get(AgentId(1)).unwrap().clone();
        assert_eq!(bank.ingest_position(&obs(1, 0.0, 12.0, 0.5), &origin()).unwrap(), None);
        assert_eq!(bank.dropped.stale_observations, 1);
        assert_eq!(bank.get(AgentId(1)).unwrap(), &before);
    }

    #[test]
    fn dominant_velocity_measurement() {
        let cfg = TrackerConfig {
            velocity_sigma_comm: 1e-4,
            ..TrackerConfig::default()
        };
        let mut bank = TrackBank::new(cfg, 0.1).unwrap();
        bank.ingest_position(&obs(1, 0.0, 10.0, 0.0), &origin()).unwrap();
        assert!(bank
            .ingest_velocity(AgentId(1), Vec2::new(5.0, 0.0), 0.0, VelocitySource::Communicated)
            .unwrap());
        let v = bank.get(AgentId(1)).unwrap().filter.velocity();
        assert!((v - Vec2::new(5.0, 0.0)).norm() < 1e-3, "{v}");
    }

    #[test]
    fn velocity_for_unknown_id_leaves_bank_unchanged() {
        let mut bank = TrackBank::new(TrackerConfig::default(), 0.1).unwrap();
        bank.ingest_position(&obs(1, 0.0, 10.0, 0.0), &origin()).unwrap();
        let before = bank.snapshot();
        let applied = bank
            .ingest_velocity(AgentId(9), Vec2::new(1.0, 1.0), 0.0, VelocitySource::Communicated)
            .unwrap();
        assert!(!applied);
        assert_eq!(bank.snapshot(), before);
        assert_eq!(bank.dropped.unknown_velocity_ids, 1);
    }

    #[test]
    fn simultaneous_measurements_apply_position_first() {
        let mut bank = TrackBank::new(TrackerConfig::default(), 0.1).unwrap();
        bank.ingest_position(&obs(1, 0.0, 10.0, 0.0), &origin()).unwrap();
        bank.step(0.1).unwrap();
        let mut manual = bank.clone();
        let o = obs(1, 0.1, 11.0, 0.1);
        let v = Vec2::new(2.0, -1.0);
        bank.ingest_batch(&[o], &origin(), &[(AgentId(1), v, 0.1)], VelocitySource::Communicated)
            .unwrap();
        manual.ingest_position(&o, &origin()).unwrap();
        manual.ingest_velocity(AgentId(1), v, 0.1, VelocitySource::Communicated).unwrap();
        assert_eq!(bank.snapshot(), manual.snapshot());
    }

    #[test]
    fn empty_bank_steps_to_empty_bank() {
        let mut bank = TrackBank::new(TrackerConfig::default(), 0.1).unwrap();
        bank.step(0.1).unwrap();
        assert!(bank.is_empty());
        assert!(bank.step(0.0).is_err());
    }

    #[test]
    fn stale_track_is_dropped_after_crossing_threshold() {
        let cfg = TrackerConfig {
            drop_after: 2.0,
            ..TrackerConfig::default()
        };
        let mut bank = TrackBank::new(cfg, 0.5).unwrap();
        bank.ingest_position(&obs(1, 0.0, 10.0, 0.0), &origin()).unwrap();
        for _ in 0..4 {
            bank.step(0.5).unwrap();
        }
        // staleness == 2.0: still alive
        assert_eq!(bank.len(), 1);
        bank.step(0.5).unwrap();
        assert!(bank.is_empty());
    }

    #[test]
    fn step_equals_per_track_predict() {
        let mut bank = TrackBank::new(TrackerConfig::default(), 0.1).unwrap();
        for id in 1..4 {
            bank.ingest_position(&obs(id, id as f64 * 0.7, 10.0 + id as f64, 0.0), &origin()).unwrap();
            bank.ingest_velocity(AgentId(id), Vec2::new(id as f64, 1.0), 0.0, VelocitySource::Communicated)
                .unwrap();
        }
        let expected: Vec<_> = bank
            .tracks()
            .map(|t| lkf::predict(&t.filter.state, &t.filter.cov, bank.model(), None).unwrap())
            .collect();
        bank.step(0.1).unwrap();
        for (t, (x, p)) in bank.tracks().zip(expected) {
            assert_eq!(t.filter.state, x);
            assert_eq!(t.filter.cov, p);
        }
    }

    #[test]
    fn snapshot_is_sorted_and_reflects_drops() {
        let mut bank = TrackBank::new(TrackerConfig::default(), 0.1).unwrap();
        for id in [7, 2, 5] {
            bank.ingest_position(&obs(id, 0.3, 10.0, 0.0), &origin()).unwrap();
        }
        let ids: Vec<u32> = bank.snapshot().iter().map(|t| t.id.0).collect();
        assert_eq!(ids, vec![2, 5, 7]);
        // Keep 2 and 7 alive, let 5 go stale.
        for k in 1..=21 {
            let t = k as f64 * 0.1;
            bank.step(0.1).unwrap();
            bank.ingest_position(&obs(2, 0.3, 10.0, t), &origin()).unwrap();
            bank.ingest_position(&obs(7, 0.3, 10.0, t), &origin()).unwrap();
        }
        let snap = bank.snapshot();
        assert_eq!(snap.len(), 2);
        let track = bank.get(AgentId(7)).unwrap();
        assert_eq!(snap[1].position, track.filter.position());
        assert_eq!(snap[1].velocity, track.filter.velocity());
    }
}
