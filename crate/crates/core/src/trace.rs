//! Per-tick run traces and their line-delimited persistence format.
//!
//! A trace file is a sequence of JSON lines:
//!
//! 1. a header (`"kind": "header"`) carrying the scenario, gains and settings;
//! 2. one record per tick (`"kind": "tick"`);
//! 3. a footer (`"kind": "footer"`) with the recorded [`RunResult`] and the
//!    SHA-256 of every preceding line, each terminated by `\n`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{ControlAction, GainSet};
use crate::error::{Error, Result};
use crate::fusion::Situation;
use crate::plant::VehicleState;
use crate::route::Point;
use crate::scenario::{ActorPose, Scenario};
use crate::scoring::{InfractionEvent, RunResult, ShutdownEvent};
use crate::sim::RunSettings;

pub const TRACE_FORMAT: &str = "drivetune-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TickEvent {
    Infraction(InfractionEvent),
    Shutdown(ShutdownEvent),
}

/// Everything observed and commanded during one tick. `state`, `actors` and
/// `time` describe the world after the tick's plant step; the actions are
/// those that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    pub state: VehicleState,
    pub v_ref: f64,
    pub measured_speed: f64,
    pub waypoints: Vec<Point>,
    pub action_traj: ControlAction,
    pub action_ctl: ControlAction,
    pub action: ControlAction,
    pub situation: Situation,
    pub actors: Vec<ActorPose>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<TickEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub scenario: Scenario,
    pub repetition: u32,
    pub gains: GainSet,
    pub settings: RunSettings,
    pub initial_state: VehicleState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub records: Vec<TickRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub result: RunResult,
    pub checksum: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(Box<TraceHeader>),
    Tick(Box<TickRecord>),
    Footer(TraceFooter),
}

impl RunTrace {
    pub fn new(header: TraceHeader) -> RunTrace {
        RunTrace {
            header,
            records: Vec::new(),
        }
    }

    /// Ticks must be contiguous from 1 and timestamps must equal `tick * dt`.
    pub fn validate(&self) -> Result<()> {
        if self.header.format != TRACE_FORMAT {
            return Err(Error::MalformedTrace(format!(
                "unexpected format `{}`",
                self.header.format
            )));
        }
        if self.header.version != TRACE_VERSION {
            return Err(Error::Version {
                what: "trace",
                found: self.header.version,
                expected: TRACE_VERSION,
            });
        }
        let dt = self.header.settings.plant.dt;
        for (i, rec) in self.records.iter().enumerate() {
            let expected = i as u64 + 1;
            if rec.tick != expected {
                return Err(Error::MalformedTrace(format!(
                    "tick {} where {} was expected",
                    rec.tick, expected
                )));
            }
            if rec.time != rec.tick as f64 * dt {
                return Err(Error::MalformedTrace(format!(
                    "tick {} has timestamp {}",
                    rec.tick, rec.time
                )));
            }
            if rec.actors.len() != self.header.scenario.actors.len() {
                return Err(Error::MalformedTrace(format!(
                    "tick {} has the wrong actor count",
                    rec.tick
                )));
            }
            if rec.state.validate().is_err() {
                return Err(Error::MalformedTrace(format!(
                    "tick {} has an invalid vehicle state",
                    rec.tick
                )));
            }
        }
        Ok(())
    }

    /// Copy holding only the first `ticks` records.
    pub fn truncated(&self, ticks: usize) -> RunTrace {
        RunTrace {
            header: self.header.clone(),
            records: self.records[..ticks.min(self.records.len())].to_vec(),
        }
    }

    /// Serializes the trace with a footer. Returns the checksum.
    pub fn write_to(&self, mut out: impl Write, result: &RunResult) -> Result<String> {
        let mut hasher = Sha256::new();
        let emit = |line: &Line, hasher: &mut Sha256, out: &mut dyn Write| -> Result<()> {
            let mut text = serde_json::to_string(line)?;
            text.push('\n');
            hasher.update(text.as_bytes());
            out.write_all(text.as_bytes())?;
            Ok(())
        };
        emit(
            &Line::Header(Box::new(self.header.clone())),
            &mut hasher,
            &mut out,
        )?;
        for rec in &self.records {
            emit(&Line::Tick(Box::new(rec.clone())), &mut hasher, &mut out)?;
        }
        let checksum = hex::encode(hasher.finalize());
        let mut result = result.clone();
        result.trace_checksum = Some(checksum.clone());
        let footer = Line::Footer(TraceFooter {
            result,
            checksum: checksum.clone(),
        });
        let mut text = serde_json::to_string(&footer)?;
        text.push('\n');
        out.write_all(text.as_bytes())?;
        out.flush()?;
        Ok(checksum)
    }

    pub fn save(&self, path: &Path, result: &RunResult) -> Result<String> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file), result)
    }

    /// Parses a trace and verifies its checksum.
    pub fn read_from(input: impl BufRead) -> Result<(RunTrace, TraceFooter)> {
        let mut hasher = Sha256::new();
        let mut header = None;
        let mut records = Vec::new();
        let mut footer = None;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if footer.is_some() {
                return Err(Error::MalformedTrace(format!(
                    "content after footer on line {}",
                    n + 1
                )));
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedTrace(format!("line {}: {e}", n + 1)))?;
            match parsed {
                Line::Header(h) => {
                    if header.is_some() || !records.is_empty() {
                        return Err(Error::MalformedTrace(
                            "header must be the first line".into(),
                        ));
                    }
                    header = Some(*h);
                }
                Line::Tick(r) => {
                    if header.is_none() {
                        return Err(Error::MalformedTrace("tick before header".into()));
                    }
                    records.push(*r);
                }
                Line::Footer(f) => {
                    footer = Some(f);
                    continue;
                }
            }
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        let header = header.ok_or_else(|| Error::MalformedTrace("missing header".into()))?;
        let footer = footer.ok_or_else(|| Error::MalformedTrace("missing footer".into()))?;
        let computed = hex::encode(hasher.finalize());
        if computed != footer.checksum {
            return Err(Error::ChecksumMismatch {
                recorded: footer.checksum,
                computed,
            });
        }
        let trace = RunTrace { header, records };
        trace.validate()?;
        Ok((trace, footer))
    }

    pub fn load(path: &Path) -> Result<(RunTrace, TraceFooter)> {
        let file = std::fs::File::open(path)?;
        RunTrace::read_from(BufReader::new(file))
    }
}
