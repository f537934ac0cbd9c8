//! Measurements behind the acceptance report. Each function returns numbers;
//! thresholds live with the callers.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::Matrix2;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use fastswarm::control::{group_speed, group_velocity, weights, ControllerGains, FlockingController, NeighborMember, Neighborhood};
use fastswarm::geometry::{rotate, wrap_angle, AgentId, Vec2};
use fastswarm::lkf::{nees, Channel, Covariance6, Lkf, Measurement2, StateVector6};
use fastswarm::mrse::{FocalModel, MrseConfig, MrseFilter};
use fastswarm::sim::config::ScenarioConfig;
use fastswarm::sim::record::RunArtifacts;
use fastswarm::sim::run_scenario;
use fastswarm::tracker::{ObserverPose, RelativeObservation, TrackBank, TrackerConfig, VelocitySource};
use fastswarm::velest::{fit_response_model, ResponseSample};

use super::oracle::{self, Mat};

pub fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"));
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64, floor: f64) -> Mat {
    let l: Mat = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()).collect();
    let mut p = oracle::mul(&l, &oracle::transpose(&l));
    for (i, row) in p.iter_mut().enumerate() {
        row[i] += floor;
    }
    p
}

fn to_cov6(p: &Mat) -> Covariance6 {
    Covariance6::from_fn(|i, j| p[i][j])
}

fn to_mat2(r: &Mat) -> Matrix2<f64> {
    Matrix2::from_fn(|i, j| r[i][j])
}

fn from_cov6(p: &Covariance6) -> Mat {
    (0..6).map(|i| (0..6).map(|j| p[(i, j)]).collect()).collect()
}

fn channel(k: usize) -> Channel {
    [Channel::Position, Channel::Velocity, Channel::Acceleration][k]
}

#[derive(Debug, Clone, Copy)]
pub struct OracleReport {
    pub cycles: usize,
    pub max_state_error: f64,
    pub max_cov_error: f64,
    pub seconds: f64,
}

struct Tally {
    state: f64,
    cov: f64,
}

impl Tally {
    fn update(&mut self, f: &Lkf, x: &[f64], p: &Mat) {
        for i in 0..6 {
            self.state = self.state.max((f.state[i] - x[i]).abs());
            for (j, v) in p[i].iter().enumerate() {
                self.cov = self.cov.max((f.cov[(i, j)] - v).abs());
            }
        }
    }
}

/// Random predict/correct cycles through the tracker model, the focal model
/// and the focal filter, each compared with the dense oracle after every
/// cycle. Sequences of 50 cycles start from fresh random states.
pub fn filter_oracle(cycles: usize, seed: u64) -> OracleReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally { state: 0.0, cov: 0.0 };
    let mut done = 0;
    let mut sequence = 0usize;
    while done < cycles {
        let len = 50.min(cycles - done);
        let dt = rng.random_range(0.02..0.2);
        let q: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..0.5));
        let x0: Vec<f64> = (0..6).map(|_| rng.random_range(-20.0..20.0)).collect();
        let scale = rng.random_range(0.1..3.0);
        let p0 = random_spd(&mut rng, 6, scale, 0.01);
        match sequence % 3 {
            0 => {
                let bank = TrackBank::new(
                    TrackerConfig {
                        q_diag: q,
                        ..TrackerConfig::default()
                    },
                    dt,
                )
                .unwrap();
                let model = bank.model().clone();
                let a = oracle::ca_transition(dt);
                let mut f = Lkf::new("tracker", StateVector6::from_column_slice(&x0), to_cov6(&p0));
                let (mut x, mut p) = (x0, p0);
                for _ in 0..len {
                    f.predict(&model, None).unwrap();
                    (x, p) = oracle::predict(&x, &p, &a, None, &q);
                    for _ in 0..rng.random_range(0..=3usize) {
                        let k = rng.random_range(0..3usize);
                        let scale = rng.random_range(0.1..2.0);
                        let r = random_spd(&mut rng, 2, scale, 0.05);
                        let z = [
                            x[2 * k] + rng.random_range(-3.0..3.0),
                            x[2 * k + 1] + rng.random_range(-3.0..3.0),
                        ];
                        let m = Measurement2::for_channel(channel(k), Vec2::new(z[0], z[1]), to_mat2(&r), 0.0).unwrap();
                        f.correct(&m).unwrap();
                        (x, p) = oracle::correct(&x, &p, &oracle::selector(2 * k), &r, &z);
                    }
                    tally.update(&f, &x, &p);
                }
            }
            1 => {
                let tau = rng.random_range(0.1..2.0);
                let model = FocalModel { tau, dt, q_diag: q }.lkf_model().unwrap();
                let (a, b) = oracle::lag_model(dt, tau);
                let mut f = Lkf::new("focal", StateVector6::from_column_slice(&x0), to_cov6(&p0));
                let (mut x, mut p) = (x0, p0);
                for _ in 0..len {
                    let u = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
                    f.predict(&model, Some(&Vec2::new(u[0], u[1]))).unwrap();
                    (x, p) = oracle::predict(&x, &p, &a, Some((&b, &u)), &q);
                    if rng.random_bool(0.7) {
                        let k = rng.random_range(0..3usize);
                        let scale = rng.random_range(0.1..2.0);
                        let r = random_spd(&mut rng, 2, scale, 0.05);
                        let z = [
                            x[2 * k] + rng.random_range(-3.0..3.0),
                            x[2 * k + 1] + rng.random_range(-3.0..3.0),
                        ];
                        let m = Measurement2::for_channel(channel(k), Vec2::new(z[0], z[1]), to_mat2(&r), 0.0).unwrap();
                        f.correct(&m).unwrap();
                        (x, p) = oracle::correct(&x, &p, &oracle::selector(2 * k), &r, &z);
                    }
                    tally.update(&f, &x, &p);
                }
            }
            _ => {
                let config = MrseConfig {
                    tau: rng.random_range(0.1..2.0),
                    q_diag: q,
                    fix_sigma: rng.random_range(0.2..3.0),
                    accel_sigma: rng.random_range(0.05..1.0),
                    ..MrseConfig::default()
                };
                let mut f = MrseFilter::new(&config, dt, StateVector6::from_column_slice(&x0)).unwrap();
                let (a, b) = oracle::lag_model(dt, config.tau);
                let fix_r = oracle::diag(&[config.fix_sigma.powi(2); 2]);
                let accel_r = oracle::diag(&[config.accel_sigma.powi(2); 2]);
                let (mut x, mut p) = (x0, from_cov6(&f.filter.cov));
                for k in 0..len {
                    let u = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
                    let fix = rng
                        .random_bool(0.8)
                        .then(|| [x[0] + rng.random_range(-2.0..2.0), x[1] + rng.random_range(-2.0..2.0)]);
                    let accel = rng
                        .random_bool(0.8)
                        .then(|| [x[4] + rng.random_range(-1.0..1.0), x[5] + rng.random_range(-1.0..1.0)]);
                    f.step(
                        fix.map(|z| Vec2::new(z[0], z[1])),
                        accel.map(|z| Vec2::new(z[0], z[1])),
                        &Vec2::new(u[0], u[1]),
                        k as f64 * dt,
                    )
                    .unwrap();
                    (x, p) = oracle::predict(&x, &p, &a, Some((&b, &u)), &q);
                    if let Some(z) = fix {
                        (x, p) = oracle::correct(&x, &p, &oracle::selector(0), &fix_r, &z);
                    }
                    if let Some(z) = accel {
                        (x, p) = oracle::correct(&x, &p, &oracle::selector(4), &accel_r, &z);
                    }
                    tally.update(&f.filter, &x, &p);
                }
            }
        }
        done += len;
        sequence += 1;
    }
    OracleReport {
        cycles: done,
        max_state_error: tally.state,
        max_cov_error: tally.cov,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NeesReport {
    pub runs: usize,
    pub dof: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl NeesReport {
    fn new(values: &[f64], dof: usize) -> Self {
        let runs = values.len();
        let chi = ChiSquared::new((runs * dof) as f64).unwrap();
        NeesReport {
            runs,
            dof,
            mean: values.iter().sum::<f64>() / runs as f64,
            lower: chi.inverse_cdf(0.025) / runs as f64,
            upper: chi.inverse_cdf(0.975) / runs as f64,
        }
    }

    pub fn consistent(&self) -> bool {
        self.mean >= self.lower && self.mean <= self.upper
    }
}

fn propagate(x: &[f64], a: &Mat, input: Option<(&Mat, &[f64])>, q: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut next = oracle::mul_vec(a, x);
    if let Some((b, u)) = input {
        for (n, bu) in next.iter_mut().zip(oracle::mul_vec(b, u)) {
            *n += bu;
        }
    }
    for (n, qi) in next.iter_mut().zip(q) {
        *n += qi.sqrt() * gauss(rng);
    }
    next
}

/// One neighbor track fed by bearing/range observations and communicated
/// velocities drawn with the noise the tracker assumes. Returns the full-state
/// NEES after `steps` ticks.
fn track_nees_run(seed: u64, steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrackerConfig::default();
    let dt = 0.1;
    let mut bank = TrackBank::new(cfg.clone(), dt).unwrap();
    let a = oracle::ca_transition(dt);
    let pose = ObserverPose {
        position: Vec2::zeros(),
        heading: 0.0,
    };
    let id = AgentId(1);
    let mut x = vec![
        20.0,
        5.0,
        cfg.init_velocity_var.sqrt() * gauss(&mut rng),
        cfg.init_velocity_var.sqrt() * gauss(&mut rng),
        cfg.init_acceleration_var.sqrt() * gauss(&mut rng),
        cfg.init_acceleration_var.sqrt() * gauss(&mut rng),
    ];
    for k in 0..=steps {
        if k > 0 {
            x = propagate(&x, &a, None, &cfg.q_diag, &mut rng);
            bank.step(dt).unwrap();
        }
        let stamp = k as f64 * dt;
        let rel = Vec2::new(x[0], x[1]);
        let d = rel.norm();
        let los = rel / d;
        let normal = Vec2::new(-los.y, los.x);
        let noisy = rel
            + los * (cfg.distance_sigma_rel * d * gauss(&mut rng))
            + normal * (cfg.bearing_sigma * d * gauss(&mut rng))
            + Vec2::new(gauss(&mut rng), gauss(&mut rng)) * cfg.position_sigma_floor;
        let obs = RelativeObservation {
            observer: AgentId(0),
            observed: id,
            bearing: noisy.y.atan2(noisy.x),
            distance: noisy.norm(),
            stamp,
        };
        bank.ingest_position(&obs, &pose).unwrap();
        let v = Vec2::new(x[2], x[3])
            + Vec2::new(gauss(&mut rng), gauss(&mut rng)) * cfg.velocity_sigma_comm;
        bank.ingest_velocity(id, v, stamp, VelocitySource::Communicated).unwrap();
    }
    let track = bank.get(id).expect("track stays alive");
    nees(&track.filter.state, &track.filter.cov, &StateVector6::from_column_slice(&x)).unwrap()
}

/// The focal filter on a commanded trajectory with matched process,
/// position-fix and IMU noise.
fn focal_nees_run(seed: u64, steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MrseConfig::default();
    let dt = 0.1;
    let (a, b) = oracle::lag_model(dt, cfg.tau);
    let mean = StateVector6::from([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let mut f = MrseFilter::new(&cfg, dt, mean).unwrap();
    let p0 = f.filter.cov;
    let mut x: Vec<f64> = (0..6).map(|i| mean[i] + p0[(i, i)].sqrt() * gauss(&mut rng)).collect();
    for k in 1..=steps {
        let t = k as f64 * dt;
        let u = [3.0 * (0.4 * t).sin() + 2.0, 2.0 * (0.25 * t).cos()];
        x = propagate(&x, &a, Some((&b, &u)), &cfg.q_diag, &mut rng);
        let fix = Vec2::new(x[0], x[1]) + Vec2::new(gauss(&mut rng), gauss(&mut rng)) * cfg.fix_sigma;
        let accel = Vec2::new(x[4], x[5]) + Vec2::new(gauss(&mut rng), gauss(&mut rng)) * cfg.accel_sigma;
        f.step(Some(fix), Some(accel), &Vec2::new(u[0], u[1]), t).unwrap();
    }
    nees(&f.filter.state, &f.filter.cov, &StateVector6::from_column_slice(&x)).unwrap()
}

pub fn track_nees(runs: usize, steps: usize, seed: u64) -> NeesReport {
    let values: Vec<f64> = (0..runs as u64)
        .into_par_iter()
        .map(|r| track_nees_run(seed.wrapping_mul(1_000_003).wrapping_add(r), steps))
        .collect();
    NeesReport::new(&values, 6)
}

pub fn focal_nees(runs: usize, steps: usize, seed: u64) -> NeesReport {
    let values: Vec<f64> = (0..runs as u64)
        .into_par_iter()
        .map(|r| focal_nees_run(seed.wrapping_mul(1_000_003).wrapping_add(r), steps))
        .collect();
    NeesReport::new(&values, 6)
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn failed<T: std::fmt::Debug>(name: &str, r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| format!("{name}: {e}"))
}

/// Weights sum to one and fall with the angle off the heading.
pub fn weight_properties(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(-10.0f64..10.0, 1..8), -10.0f64..10.0, 0.05f64..3.0);
    failed(
        "weights",
        runner(cases).run(&strategy, |(bearings, heading, scale)| {
            let w = weights(&bearings, heading, scale);
            let total: f64 = w.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12, "sum {total}");
            let theta: Vec<f64> = bearings.iter().map(|b| wrap_angle(b - heading).abs()).collect();
            for i in 0..w.len() {
                for j in 0..w.len() {
                    if theta[i] < theta[j] {
                        prop_assert!(w[i] >= w[j], "theta {} < {} but w {} < {}", theta[i], theta[j], w[i], w[j]);
                        if w[j] > 0.0 && theta[j] - theta[i] > 1e-12 {
                            prop_assert!(w[i] > w[j]);
                        }
                    }
                }
            }
            Ok(())
        }),
    )
}

/// The group velocity ramp has no jump at either end.
pub fn group_velocity_continuity(cases: u32) -> Result<(), String> {
    let strategy = (1.0f64..30.0, 1.0f64..60.0, 0.0f64..10.0, 1e-12f64..1e-6, -PI..PI);
    failed(
        "group velocity",
        runner(cases).run(&strategy, |(d_min, span, v_d, eps, heading)| {
            let gains = ControllerGains {
                d_min,
                d_max: d_min + span,
                max_group_speed: v_d,
                ..ControllerGains::default()
            };
            let slope = v_d / span;
            for edge in [gains.d_min, gains.d_max] {
                let below = group_speed(edge - eps, &gains);
                let above = group_speed(edge + eps, &gains);
                prop_assert!((above - below).abs() <= 2.0 * eps * slope + 1e-12, "jump at {edge}: {below} -> {above}");
                let dir = Vec2::new(heading.cos(), heading.sin());
                let vb = group_velocity(&(dir * (edge - eps)), heading, &gains);
                let va = group_velocity(&(dir * (edge + eps)), heading, &gains);
                prop_assert!((va - vb).norm() <= 2.0 * eps * slope + 1e-12);
            }
            Ok(())
        }),
    )
}

fn neighborhood(members: &[(f64, f64, f64, f64)], phi: f64, shift: f64) -> Neighborhood {
    Neighborhood {
        members: members
            .iter()
            .enumerate()
            .map(|(i, &(bearing, distance, vx, vy))| {
                let v = Vec2::new(vx, vy);
                let p = Vec2::new(bearing.cos(), bearing.sin()) * distance + v * shift;
                NeighborMember::from_relative(Some(AgentId(i as u32 + 1)), &rotate(&p, phi), rotate(&v, phi))
            })
            .collect(),
    }
}

/// Rotating every input of the control law rotates its output.
pub fn rotation_equivariance(cases: u32) -> Result<(), String> {
    let member = (-PI..PI, 0.5f64..40.0, -5.0f64..5.0, -5.0f64..5.0);
    let strategy = (
        prop::collection::vec(member, 0..6),
        -PI..PI,
        (-300.0f64..300.0, -300.0f64..300.0),
        -PI..PI,
    );
    failed(
        "rotation equivariance",
        runner(cases).run(&strategy, |(members, heading, (tx, ty), phi)| {
            let dt = 0.1;
            let target = Vec2::new(tx, ty);
            let mut plain = FlockingController::new(ControllerGains::default(), heading);
            let mut turned = FlockingController::new(ControllerGains::default(), wrap_angle(heading + phi));
            for step in 0..2 {
                let shift = step as f64 * dt;
                let (a, ra) = plain.compute_command(&neighborhood(&members, 0.0, shift), heading, &target, dt);
                let (b, rb) = turned.compute_command(
                    &neighborhood(&members, phi, shift),
                    wrap_angle(heading + phi),
                    &rotate(&target, phi),
                    dt,
                );
                let err = (rotate(&a.v_d, phi) - b.v_d).norm();
                if err > 1e-9 || (rotate(&ra, phi) - rb).norm() > 1e-9 {
                    return Err(TestCaseError::fail(format!("v_d off by {err} at step {step}")));
                }
            }
            Ok(())
        }),
    )
}

/// Recovery error of `(q1, q2)` from exact synthetic samples.
pub fn response_fit_error() -> f64 {
    let (q1, q2) = (0.8187307530779818, 0.18126924692201815);
    let mut samples = Vec::new();
    let mut v = Vec2::zeros();
    for k in 0..400 {
        let t = k as f64 * 0.1;
        let cmd = Vec2::new(4.0 * (0.3 * t).sin(), if k % 80 < 40 { 2.0 } else { -1.0 });
        let next = v * q1 + cmd * q2;
        samples.push(ResponseSample {
            velocity: v,
            next_command: cmd,
            next_velocity: next,
        });
        v = next;
    }
    let fit = fit_response_model(&samples).unwrap();
    (fit.model.q1 - q1).abs().max((fit.model.q2 - q2).abs())
}

pub struct SeedRun {
    pub seed: u64,
    pub seconds: f64,
    pub artifacts: RunArtifacts,
}

/// Runs `count` seeds starting at the config seed, in parallel.
pub fn run_seeds(cfg: &ScenarioConfig, count: u64) -> Vec<SeedRun> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut c = cfg.clone();
            c.seed = cfg.seed + k;
            let start = Instant::now();
            let artifacts = run_scenario(&c).unwrap_or_else(|e| panic!("seed {}: {e}", c.seed));
            SeedRun {
                seed: c.seed,
                seconds: start.elapsed().as_secs_f64(),
                artifacts,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct LambdaTrace {
    pub min: f64,
    pub max: f64,
    /// Mean over agents and ticks while the swarm cruises above 80 % of `v_D`.
    pub cruise_mean: f64,
    /// Mean over agents during the last five seconds.
    pub final_mean: f64,
}

pub fn lambda_trace(artifacts: &RunArtifacts) -> LambdaTrace {
    let cfg = &artifacts.header.config;
    let cruise_speed = 0.8 * cfg.gains.max_group_speed;
    let tail_start = artifacts.ticks.last().map_or(0.0, |t| t.time) - 5.0;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut cruise, mut n_cruise, mut tail, mut n_tail) = (0.0, 0usize, 0.0, 0usize);
    for t in &artifacts.ticks {
        let n = t.agents.len() as f64;
        let speed = t.agents.iter().map(|a| a.velocity).sum::<Vec2>().norm() / n;
        let mean_lambda = t.agents.iter().map(|a| a.lambda).sum::<f64>() / n;
        for a in &t.agents {
            min = min.min(a.lambda);
            max = max.max(a.lambda);
        }
        if speed > cruise_speed {
            cruise += mean_lambda;
            n_cruise += 1;
        }
        if t.time >= tail_start {
            tail += mean_lambda;
            n_tail += 1;
        }
    }
    LambdaTrace {
        min,
        max,
        cruise_mean: if n_cruise > 0 { cruise / n_cruise as f64 } else { f64::NAN },
        final_mean: tail / n_tail.max(1) as f64,
    }
}
