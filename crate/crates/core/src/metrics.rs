//! Run metrics, computed from ground truth in the log only, plus the
//! comm/no-comm ablation and plot-data export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{AgentId, Vec2};
use crate::sim::config::ScenarioConfig;
use crate::sim::record::{LogHeader, TickRecord};
use crate::sim::run_scenario;

/// Cluster velocity ratio: center speed over `v_d`, with the center speed
/// from centered differences spanning `window` seconds (one-sided near the
/// ends). Empty for fewer than two samples.
pub fn compute_cvr(centers: &[Vec2], dt: f64, v_d: f64, window: f64) -> Vec<f64> {
    let n = centers.len();
    if n < 2 || !(v_d > 0.0) || !(dt > 0.0) {
        return Vec::new();
    }
    let half = ((window / (2.0 * dt)).round() as usize).max(1);
    (0..n)
        .map(|k| {
            let a = k.saturating_sub(half);
            let b = (k + half).min(n - 1);
            let speed = (centers[b] - centers[a]).norm() / ((b - a) as f64 * dt);
            speed / v_d
        })
        .collect()
}

/// Mean and population standard deviation of the pair distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
}

/// Distance statistics over every (tick, unordered neighbor pair) sample.
/// A pair counts once per tick when either agent has the other in its
/// neighborhood. `None` when no pair ever occurs.
pub fn compute_neighbor_distance_stats(ticks: &[TickRecord]) -> Option<DistanceStats> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for t in ticks {
        let pos: BTreeMap<AgentId, Vec2> = t.agents.iter().map(|a| (a.id, a.position)).collect();
        let mut pairs = BTreeSet::new();
        for a in &t.agents {
            for b in &a.neighbors {
                if pos.contains_key(b) && *b != a.id {
                    pairs.insert((a.id.min(*b), a.id.max(*b)));
                }
            }
        }
        for (a, b) in pairs {
            let d = (pos[&a] - pos[&b]).norm();
            sum += d;
            sum_sq += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Some(DistanceStats {
        mean,
        std: var.sqrt(),
        samples: n,
    })
}

fn center(t: &TickRecord) -> Vec2 {
    let mut c = Vec2::zeros();
    for a in &t.agents {
        c += a.position;
    }
    c / t.agents.len().max(1) as f64
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn rms(xs: impl Iterator<Item = f64>) -> Option<f64> {
    mean(xs.map(|x| x * x)).map(f64::sqrt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub id: AgentId,
    pub lambda_mean: f64,
    pub lambda_min: f64,
    /// Fused position error at the end of the run [m].
    pub final_position_error: f64,
    pub fused_position_rms: f64,
    pub mrse_position_rms: f64,
    pub baseline_position_rms: f64,
    pub vio_position_rms: f64,
    pub fused_velocity_error_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub ticks: usize,
    pub duration: f64,
    pub cvr: Vec<f64>,
    pub cvr_mean: f64,
    /// Mean over ticks where the swarm center is farther than `d_max` from
    /// the target, i.e. the cruise part of the approach.
    pub cvr_transit_mean: Option<f64>,
    pub neighbor_distance: Option<DistanceStats>,
    pub min_pair_distance: Option<f64>,
    /// (tick, pair) samples closer than the safety radius.
    pub collisions: usize,
    pub agents: Vec<AgentMetrics>,
    /// Mean fused position error at run end [m].
    pub position_error: f64,
    /// Mean fused velocity error over the run [m/s].
    pub velocity_error: f64,
    /// Length of the swarm-center trajectory [m].
    pub trajectory_length: f64,
    /// Mean swarm-center speed [m/s].
    pub group_velocity: f64,
    /// RMS error of communication-less neighbor velocity estimates against
    /// the neighbor's true velocity one tick later.
    pub velocity_estimate_rms: Option<f64>,
    /// Final distance from the swarm center to the target [m].
    pub final_target_distance: f64,
}

pub fn summarize(header: &LogHeader, ticks: &[TickRecord]) -> MetricsSummary {
    let cfg = &header.config;
    let dt = cfg.dt;
    let centers: Vec<Vec2> = ticks.iter().map(center).collect();
    let cvr = compute_cvr(&centers, dt, cfg.gains.max_group_speed, cfg.cvr_window);
    let cvr_mean = mean(cvr.iter().copied()).unwrap_or(0.0);
    let cvr_transit_mean = mean(
        cvr.iter()
            .zip(ticks)
            .zip(&centers)
            .filter(|((_, t), c)| (t.target - *c).norm() > cfg.gains.d_max)
            .map(|((v, _), _)| *v),
    );

    let mut min_pair: Option<f64> = None;
    let mut collisions = 0;
    for t in ticks {
        for i in 0..t.agents.len() {
            for j in i + 1..t.agents.len() {
                let d = (t.agents[i].position - t.agents[j].position).norm();
                min_pair = Some(min_pair.map_or(d, |m| m.min(d)));
                if d < cfg.safety_radius {
                    collisions += 1;
                }
            }
        }
    }

    let n_agents = ticks.first().map_or(0, |t| t.agents.len());
    let mut agents = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let origin = header.origins.get(i).copied().unwrap_or_else(Vec2::zeros);
        let recs = || ticks.iter().map(move |t| &t.agents[i]);
        let err = |f: fn(&crate::sim::record::AgentRecord) -> Vec2| {
            rms(recs().map(move |a| (f(a) - (a.position - origin)).norm())).unwrap_or(0.0)
        };
        let last = ticks.last().map(|t| &t.agents[i]);
        agents.push(AgentMetrics {
            id: recs().next().map_or(AgentId(i as u32), |a| a.id),
            lambda_mean: mean(recs().map(|a| a.lambda)).unwrap_or(1.0),
            lambda_min: recs().map(|a| a.lambda).fold(1.0, f64::min),
            final_position_error: last.map_or(0.0, |a| (a.fused_position - (a.position - origin)).norm()),
            fused_position_rms: err(|a| a.fused_position),
            mrse_position_rms: err(|a| a.mrse_position),
            baseline_position_rms: err(|a| a.baseline_position),
            vio_position_rms: err(|a| a.vio_position),
            fused_velocity_error_mean: mean(recs().map(|a| (a.fused_velocity - a.velocity).norm())).unwrap_or(0.0),
        });
    }

    let mut est_err = Vec::new();
    for w in ticks.windows(2) {
        let next: BTreeMap<AgentId, Vec2> = w[1].agents.iter().map(|a| (a.id, a.velocity)).collect();
        for a in &w[0].agents {
            for e in &a.velocity_estimates {
                if let Some(v) = next.get(&e.id) {
                    est_err.push((e.velocity - v).norm());
                }
            }
        }
    }

    let trajectory_length: f64 = centers.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let duration = ticks.len().saturating_sub(1) as f64 * dt;
    MetricsSummary {
        ticks: ticks.len(),
        duration,
        cvr_mean,
        cvr,
        cvr_transit_mean,
        neighbor_distance: compute_neighbor_distance_stats(ticks),
        min_pair_distance: min_pair,
        collisions,
        position_error: mean(agents.iter().map(|a| a.final_position_error)).unwrap_or(0.0),
        velocity_error: mean(agents.iter().map(|a| a.fused_velocity_error_mean)).unwrap_or(0.0),
        agents,
        trajectory_length,
        group_velocity: if duration > 0.0 { trajectory_length / duration } else { 0.0 },
        velocity_estimate_rms: rms(est_err.into_iter()),
        final_target_distance: ticks.last().map_or(0.0, |t| (t.target - center(t)).norm()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub comm: MetricsSummary,
    pub no_comm: MetricsSummary,
    /// no-comm minus comm.
    pub sigma_d_delta: Option<f64>,
    pub cvr_delta: f64,
}

/// Runs the scenario with communication on and off, same seed.
pub fn run_ablation(config: &ScenarioConfig) -> crate::Result<AblationReport> {
    let mut on = config.clone();
    on.sensors.comm.enabled = true;
    let mut off = config.clone();
    off.sensors.comm.enabled = false;
    let comm = run_scenario(&on)?.summary;
    let no_comm = run_scenario(&off)?.summary;
    let sigma_d_delta = match (&comm.neighbor_distance, &no_comm.neighbor_distance) {
        (Some(a), Some(b)) => Some(b.std - a.std),
        _ => None,
    };
    Ok(AblationReport {
        seed: config.seed,
        cvr_delta: no_comm.cvr_mean - comm.cvr_mean,
        sigma_d_delta,
        comm,
        no_comm,
    })
}

/// Writes one delimited text file per figure into `dir`: trajectories,
/// λ traces, velocity-estimate comparison and CVR.
pub fn export_plot_data(dir: &Path, ticks: &[TickRecord], summary: &MetricsSummary) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| -> std::io::Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };

    let mut f = open("trajectories.csv")?;
    writeln!(f, "time,agent,x,y,vx,vy")?;
    for t in ticks {
        for a in &t.agents {
            writeln!(
                f,
                "{},{},{},{},{},{}",
                t.time, a.id.0, a.position.x, a.position.y, a.velocity.x, a.velocity.y
            )?;
        }
        writeln!(f, "{},target,{},{},,", t.time, t.target.x, t.target.y)?;
    }
    f.flush()?;

    let mut f = open("lambda.csv")?;
    writeln!(f, "time,agent,lambda,lambda_estimate,feature_count")?;
    for t in ticks {
        for a in &t.agents {
            writeln!(
                f,
                "{},{},{},{},{}",
                t.time, a.id.0, a.lambda, a.lambda_estimate, a.feature_count
            )?;
        }
    }
    f.flush()?;

    let mut f = open("velocity_estimates.csv")?;
    writeln!(f, "time,observer,observed,estimate_vx,estimate_vy,true_vx,true_vy")?;
    for w in ticks.windows(2) {
        let next: BTreeMap<AgentId, Vec2> = w[1].agents.iter().map(|a| (a.id, a.velocity)).collect();
        for a in &w[0].agents {
            for e in &a.velocity_estimates {
                if let Some(v) = next.get(&e.id) {
                    writeln!(
                        f,
                        "{},{},{},{},{},{},{}",
                        w[0].time, a.id.0, e.id.0, e.velocity.x, e.velocity.y, v.x, v.y
                    )?;
                }
            }
        }
    }
    f.flush()?;

    let mut f = open("cvr.csv")?;
    writeln!(f, "time,cvr")?;
    for (t, c) in ticks.iter().zip(&summary.cvr) {
        writeln!(f, "{},{}", t.time, c)?;
    }
    f.flush()
}
