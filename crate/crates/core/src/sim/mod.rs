//! Deterministic tick loop.
//!
//! Each tick every agent senses the world snapshot left by the previous
//! tick, runs its own estimation and control stack, and produces a command.
//! Only after all agents are done does the plant integrate, so agent stages
//! can run in any order or in parallel without changing a single bit of
//! the output.
//!
//! Per-agent order within a tick:
//! sense, track prediction, MRSE and baseline steps (position fix from the
//! predicted tracks), λ update and fusion, track position updates against
//! the fused pose, neighbor velocities (communicated or estimated),
//! controller, broadcast.

pub mod config;
pub mod plant;
pub mod record;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::control::{Candidate, FlockingCommand, FlockingController, NearestSelector};
use crate::geometry::{bearing_of, is_finite, AgentId, Vec2};
use crate::lkf::{LkfError, StateVector6};
use crate::metrics::summarize;
use crate::mrse::{mrse_position_fix, mrse_velocity_fix, FusionState, MrseFilter, SourceState, VelocityOnlyBaseline};
use crate::sensors::{
    choose_heading, imu_sample, observe, stream_rng, target_sample, AgentTruth, CommChannel, SensorStream,
    VelocityMessage, VioEmulator,
};
use crate::tracker::{ObserverPose, TrackBank, VelocitySource};
use crate::velest::{VelocityEstimationError, VelocityEstimator, ViewSensing};

use config::ScenarioConfig;
use plant::{plant_step, PlantState};
use record::{AgentRecord, LogHeader, RunArtifacts, TickRecord, VelocityEstimateRecord, LOG_FORMAT, LOG_VERSION};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite value in {stage} of {agent} at tick {tick}")]
    NonFinite { agent: AgentId, stage: &'static str, tick: u64 },
    #[error("{stage} of {agent} failed at tick {tick}: {source}")]
    Filter {
        agent: AgentId,
        stage: &'static str,
        tick: u64,
        source: LkfError,
    },
    #[error("velocity estimation of {agent} failed at tick {tick}: {source}")]
    Velocity {
        agent: AgentId,
        tick: u64,
        source: VelocityEstimationError,
    },
    #[error("plant of {agent} violated its caps at tick {tick}: {detail}")]
    PlantCaps { agent: AgentId, tick: u64, detail: String },
}

/// All pairs closer than `radius`, as (lower id, higher id).
pub fn detect_collisions(agents: &[AgentTruth], radius: f64) -> Vec<(AgentId, AgentId)> {
    let mut out = Vec::new();
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            if (agents[i].position - agents[j].position).norm() < radius {
                let (a, b) = (agents[i].id, agents[j].id);
                out.push((a.min(b), a.max(b)));
            }
        }
    }
    out
}

struct Streams {
    relative: ChaCha8Rng,
    vio: ChaCha8Rng,
    imu: ChaCha8Rng,
    comm: ChaCha8Rng,
    target: ChaCha8Rng,
}

/// Onboard state of one agent.
struct Agent {
    id: AgentId,
    origin: Vec2,
    tracks: TrackBank,
    mrse: MrseFilter,
    baseline: VelocityOnlyBaseline,
    fusion: FusionState,
    vio: VioEmulator,
    controller: FlockingController,
    estimator: VelocityEstimator,
    inbox: CommChannel,
    streams: Streams,
    prev_relative: Vec<(AgentId, Vec2)>,
    command: FlockingCommand,
    neighborhood: Vec<AgentId>,
}

struct AgentOutput {
    record: AgentRecord,
    heading: f64,
    broadcast: VelocityMessage,
}

fn check(v: &Vec2, agent: AgentId, stage: &'static str, tick: u64) -> Result<(), SimError> {
    if is_finite(v) {
        Ok(())
    } else {
        Err(SimError::NonFinite { agent, stage, tick })
    }
}

impl Agent {
    fn new(cfg: &ScenarioConfig, index: usize, start: Vec2, heading: f64) -> Result<Self, SimError> {
        let id = AgentId(index as u32);
        let seed = cfg.seed;
        let filter_err = |stage| move |source| SimError::Filter {
            agent: id,
            stage,
            tick: 0,
            source,
        };
        let mut vio_rng = stream_rng(seed, id, SensorStream::Vio);
        let vio = VioEmulator::new(cfg.sensors.vio.clone(), &mut vio_rng);
        Ok(Agent {
            id,
            origin: start,
            tracks: TrackBank::new(cfg.tracker.clone(), cfg.dt).map_err(filter_err("tracker init"))?,
            mrse: MrseFilter::new(&cfg.mrse, cfg.dt, StateVector6::zeros()).map_err(filter_err("mrse init"))?,
            baseline: VelocityOnlyBaseline::new(&cfg.mrse, cfg.dt, StateVector6::zeros())
                .map_err(filter_err("baseline init"))?,
            fusion: FusionState::new(Vec2::zeros(), cfg.mrse.lambda_rate),
            vio,
            controller: FlockingController::new(cfg.gains.clone(), heading),
            estimator: VelocityEstimator::new(
                cfg.gains.clone(),
                cfg.response_model,
                ViewSensing {
                    max_range: cfg.sensors.max_range,
                    fov: cfg.sensors.fov_horizontal,
                    hold: cfg.tracker.drop_after,
                },
            ),
            inbox: CommChannel::new(cfg.sensors.comm.clone()),
            streams: Streams {
                relative: stream_rng(seed, id, SensorStream::Relative),
                vio: vio_rng,
                imu: stream_rng(seed, id, SensorStream::Imu),
                comm: stream_rng(seed, id, SensorStream::Comm),
                target: stream_rng(seed, id, SensorStream::Target),
            },
            prev_relative: Vec::new(),
            command: FlockingCommand::default(),
            neighborhood: Vec::new(),
        })
    }

    fn step(
        &mut self,
        cfg: &ScenarioConfig,
        world: &[AgentTruth],
        index: usize,
        target: &Vec2,
        tick: u64,
    ) -> Result<AgentOutput, SimError> {
        let id = self.id;
        let dt = cfg.dt;
        let time = tick as f64 * dt;
        let me = world[index];
        let ferr = |stage: &'static str| move |source| SimError::Filter {
            agent: id,
            stage,
            tick,
            source,
        };

        let observations = observe(world, index, &cfg.sensors, time, &mut self.streams.relative);
        let imu = imu_sample(&me.acceleration, cfg.sensors.imu_accel_sigma, &mut self.streams.imu);
        let target_rel = target_sample(&(target - me.position), cfg.sensors.target_sigma, &mut self.streams.target);
        let vio = self.vio.sample(
            &(me.position - self.origin),
            &me.velocity,
            &me.acceleration,
            dt,
            &mut self.streams.vio,
        );
        check(&vio.position, id, "vio", tick)?;

        if tick > 0 {
            self.tracks.step(dt).map_err(ferr("track prediction"))?;
        }
        let predicted = self.tracks.snapshot();
        let relative: Vec<(AgentId, Vec2)> = observations
            .iter()
            .map(|o| (o.observed, o.relative_vector(me.heading)))
            .collect();

        if tick > 0 {
            let fix = mrse_position_fix(&predicted, &relative);
            self.mrse
                .step(fix, Some(imu), &self.command.v_d, time)
                .map_err(ferr("mrse"))?;
            let vfix = mrse_velocity_fix(&predicted, &relative, &self.prev_relative, dt);
            self.baseline
                .step(vfix, Some(imu), &self.command.v_d, time)
                .map_err(ferr("velocity-only baseline"))?;
        }
        self.prev_relative = relative;
        let mrse = SourceState::from_state(self.mrse.state());
        check(&mrse.position, id, "mrse", tick)?;
        check(&mrse.velocity, id, "mrse", tick)?;

        self.fusion.update(&vio, &mrse, dt);
        check(&self.fusion.position, id, "fusion", tick)?;
        check(&self.fusion.velocity, id, "fusion", tick)?;

        let pose = ObserverPose {
            position: self.fusion.position,
            heading: me.heading,
        };
        let mut velocity_estimates = Vec::new();
        if self.inbox.enabled() {
            let delivered: Vec<(AgentId, Vec2, f64)> = self
                .inbox
                .deliver(tick)
                .into_iter()
                .map(|m| (m.sender, m.velocity, m.stamp))
                .collect();
            self.tracks
                .ingest_batch(&observations, &pose, &delivered, VelocitySource::Communicated)
                .map_err(ferr("track update"))?;
        } else {
            self.tracks
                .ingest_batch(&observations, &pose, &[], VelocitySource::Estimated)
                .map_err(ferr("track update"))?;
            let surroundings = self.candidates();
            let estimates = self
                .estimator
                .estimate_velocities(
                    &surroundings,
                    id,
                    &self.fusion.velocity,
                    &target_rel,
                    self.controller.heading(),
                    &NearestSelector { n_max: cfg.gains.n_max },
                    dt,
                )
                .map_err(|source| SimError::Velocity { agent: id, tick, source })?;
            let batch: Vec<(AgentId, Vec2, f64)> = estimates.iter().map(|e| (e.id, e.velocity, time)).collect();
            for (_, v, _) in &batch {
                check(v, id, "velocity estimation", tick)?;
            }
            self.tracks
                .ingest_batch(&[], &pose, &batch, VelocitySource::Estimated)
                .map_err(ferr("track update"))?;
            velocity_estimates = estimates
                .iter()
                .map(|e| VelocityEstimateRecord {
                    id: e.id,
                    velocity: e.velocity,
                    desired: e.desired,
                })
                .collect();
        }

        let surroundings = self.candidates();
        let selector = NearestSelector { n_max: cfg.gains.n_max };
        let out = self.controller.step(&surroundings, &selector, &target_rel, dt);
        check(&out.command.v_d, id, "controller", tick)?;
        self.command = out.command;
        self.neighborhood = out.neighborhood.ids();
        let heading = choose_heading(cfg.sensors.heading_mode, &out.command.v_d, &target_rel, me.heading);

        let record = AgentRecord {
            id,
            position: me.position,
            velocity: me.velocity,
            heading: me.heading,
            command: out.command,
            fused_position: self.fusion.position,
            fused_velocity: self.fusion.velocity,
            mrse_position: mrse.position,
            mrse_velocity: mrse.velocity,
            baseline_position: Vec2::new(self.baseline.filter.state[0], self.baseline.filter.state[1]),
            vio_position: vio.position,
            lambda: self.fusion.lambda,
            lambda_estimate: self.fusion.lambda_estimate,
            feature_count: vio.feature_count,
            neighbors: self.neighborhood.clone(),
            tracks: if cfg.log_tracks { self.tracks.snapshot() } else { Vec::new() },
            velocity_estimates,
        };
        Ok(AgentOutput {
            record,
            heading,
            broadcast: VelocityMessage {
                sender: id,
                velocity: self.fusion.velocity,
                stamp: time,
            },
        })
    }

    fn candidates(&self) -> Vec<Candidate> {
        self.tracks
            .snapshot()
            .into_iter()
            .map(|t| Candidate {
                id: t.id,
                rel_position: t.position - self.fusion.position,
                velocity: t.velocity,
            })
            .collect()
    }
}

/// A running scenario.
pub struct World {
    config: ScenarioConfig,
    tick: u64,
    truth: Vec<AgentTruth>,
    agents: Vec<Agent>,
    origins: Vec<Vec2>,
}

impl World {
    pub fn new(config: ScenarioConfig) -> Result<Self, crate::Error> {
        config.validate()?;
        let starts = config.initial_positions();
        let target = config.target.position_at(0.0);
        let mut truth = Vec::with_capacity(starts.len());
        let mut agents = Vec::with_capacity(starts.len());
        for (i, p) in starts.iter().enumerate() {
            let to_target = target - p;
            let heading = if to_target.norm() > 0.0 { bearing_of(&to_target) } else { 0.0 };
            truth.push(AgentTruth {
                id: AgentId(i as u32),
                position: *p,
                velocity: Vec2::zeros(),
                acceleration: Vec2::zeros(),
                heading,
            });
            agents.push(Agent::new(&config, i, *p, heading)?);
        }
        Ok(World {
            config,
            tick: 0,
            truth,
            agents,
            origins: starts,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn truth(&self) -> &[AgentTruth] {
        &self.truth
    }

    pub fn origins(&self) -> &[Vec2] {
        &self.origins
    }

    pub fn header(&self) -> LogHeader {
        LogHeader {
            format: LOG_FORMAT.to_string(),
            version: LOG_VERSION,
            config: self.config.clone(),
            origins: self.origins.clone(),
        }
    }

    /// Advances every agent by one tick and returns the record of the
    /// snapshot the agents acted on.
    pub fn step(&mut self) -> Result<TickRecord, SimError> {
        let cfg = &self.config;
        let tick = self.tick;
        let time = tick as f64 * cfg.dt;
        let target = cfg.target.position_at(time);
        let world = &self.truth;
        let results: Vec<Result<AgentOutput, SimError>> = if cfg.parallel {
            self.agents
                .par_iter_mut()
                .enumerate()
                .map(|(i, a)| a.step(cfg, world, i, &target, tick))
                .collect()
        } else {
            self.agents
                .iter_mut()
                .enumerate()
                .map(|(i, a)| a.step(cfg, world, i, &target, tick))
                .collect()
        };
        let outputs = results.into_iter().collect::<Result<Vec<_>, _>>()?;

        let collisions = detect_collisions(&self.truth, cfg.safety_radius);

        let messages: Vec<VelocityMessage> = outputs.iter().map(|o| o.broadcast).collect();
        for agent in &mut self.agents {
            let others: Vec<VelocityMessage> = messages.iter().filter(|m| m.sender != agent.id).copied().collect();
            agent.inbox.transmit(tick + 1, &others, &mut agent.streams.comm);
        }

        let plant_cfg = &cfg.plant;
        for (truth, out) in self.truth.iter_mut().zip(&outputs) {
            let mut target_velocity = out.record.command.v_d;
            if plant_cfg.odometry_feedback {
                target_velocity -= out.record.fused_velocity - truth.velocity;
            }
            let state = PlantState {
                position: truth.position,
                velocity: truth.velocity,
                acceleration: truth.acceleration,
            };
            let next = plant_step(&state, &target_velocity, plant_cfg, cfg.dt);
            if next.velocity.norm() > plant_cfg.v_max * (1.0 + 1e-12)
                || next.acceleration.norm() > plant_cfg.a_max * (1.0 + 1e-9)
            {
                return Err(SimError::PlantCaps {
                    agent: truth.id,
                    tick,
                    detail: format!(
                        "speed {} acceleration {}",
                        next.velocity.norm(),
                        next.acceleration.norm()
                    ),
                });
            }
            check(&next.position, truth.id, "plant", tick)?;
            truth.position = next.position;
            truth.velocity = next.velocity;
            truth.acceleration = next.acceleration;
            truth.heading = out.heading;
        }
        self.tick += 1;

        Ok(TickRecord {
            tick,
            time,
            target,
            agents: outputs.into_iter().map(|o| o.record).collect(),
            collisions,
        })
    }
}

/// Runs a scenario for its configured duration.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunArtifacts, crate::Error> {
    let mut world = World::new(config.clone())?;
    let header = world.header();
    let n = config.ticks();
    let mut ticks = Vec::with_capacity(n as usize);
    for _ in 0..n {
        ticks.push(world.step()?);
    }
    let summary = summarize(&header, &ticks);
    Ok(RunArtifacts { header, ticks, summary })
}
