//! Line-delimited JSON run log: one header, one record per tick, one summary.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::control::FlockingCommand;
use crate::error::{Error, Result};
use crate::geometry::{AgentId, Vec2};
use crate::metrics::MetricsSummary;
use crate::tracker::TrackView;

pub const LOG_FORMAT: &str = "fastswarm-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub config: ScenarioConfig,
    /// World position of each agent's local frame origin.
    pub origins: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimateRecord {
    pub id: AgentId,
    pub velocity: Vec2,
    /// Replayed desired velocity behind the estimate.
    pub desired: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: AgentId,
    pub position: Vec2,
    pub velocity: Vec2,
    pub heading: f64,
    pub command: FlockingCommand,
    /// Estimates below are in the agent's local frame.
    pub fused_position: Vec2,
    pub fused_velocity: Vec2,
    pub mrse_position: Vec2,
    pub mrse_velocity: Vec2,
    pub baseline_position: Vec2,
    pub vio_position: Vec2,
    pub lambda: f64,
    pub lambda_estimate: f64,
    pub feature_count: usize,
    pub neighbors: Vec<AgentId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tracks: Vec<TrackView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub velocity_estimates: Vec<VelocityEstimateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    pub target: Vec2,
    pub agents: Vec<AgentRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub collisions: Vec<(AgentId, AgentId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum LogLine {
    Header(LogHeader),
    Tick(TickRecord),
    Summary(MetricsSummary),
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub summary: MetricsSummary,
}

impl RunArtifacts {
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = |l: LogLine| -> Result<()> {
            serde_json::to_writer(&mut out, &l).map_err(|e| Error::Log(e.to_string()))?;
            out.write_all(b"\n")?;
            Ok(())
        };
        line(LogLine::Header(self.header.clone()))?;
        for t in &self.ticks {
            line(LogLine::Tick(t.clone()))?;
        }
        line(LogLine::Summary(self.summary.clone()))?;
        Ok(())
    }

    pub fn log_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_log(&mut buf)?;
        Ok(buf)
    }
}

/// Parsed log; the summary is absent for truncated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub summary: Option<MetricsSummary>,
}

pub fn read_log<R: BufRead>(input: R) -> Result<ParsedLog> {
    let mut header = None;
    let mut ticks = Vec::new();
    let mut summary = None;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine =
            serde_json::from_str(&line).map_err(|e| Error::Log(format!("line {}: {e}", n + 1)))?;
        match parsed {
            LogLine::Header(h) => {
                if h.format != LOG_FORMAT || h.version != LOG_VERSION {
                    return Err(Error::Log(format!(
                        "unsupported log format {} version {}",
                        h.format, h.version
                    )));
                }
                header = Some(h);
            }
            LogLine::Tick(t) => ticks.push(t),
            LogLine::Summary(s) => summary = Some(s),
        }
    }
    let header = header.ok_or_else(|| Error::Log("missing header record".to_string()))?;
    Ok(ParsedLog { header, ticks, summary })
}
