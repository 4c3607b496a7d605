//! Leaderboard-style driving score: infraction detection, multiplicative
//! penalties, shutdown events, route completion and suite aggregation.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::route::{LightState, Route, ZoneKind};
use crate::scenario::{ActorKind, Scenario, EGO_RADIUS};
use crate::trace::{RunTrace, TickEvent, TickRecord};

pub const RESULTS_VERSION: u32 = 1;

/// Route deviation distance that ends a run, meters.
pub const ROUTE_DEVIATION_LIMIT: f64 = 30.0;
/// Continuous standstill that ends a run, seconds.
pub const BLOCKED_LIMIT: f64 = 180.0;
/// Speed below which the agent counts as standing still, m/s.
pub const STANDSTILL_SPEED: f64 = 0.1;
/// Heartbeat gap that ends a service session, seconds.
pub const HEARTBEAT_LIMIT: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    CollisionPedestrian,
    CollisionVehicle,
    CollisionStatic,
    RedLight,
    StopSign,
    OffRoad,
}

impl InfractionKind {
    pub const ALL: [InfractionKind; 6] = [
        InfractionKind::CollisionPedestrian,
        InfractionKind::CollisionVehicle,
        InfractionKind::CollisionStatic,
        InfractionKind::RedLight,
        InfractionKind::StopSign,
        InfractionKind::OffRoad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InfractionKind::CollisionPedestrian => "collision_pedestrian",
            InfractionKind::CollisionVehicle => "collision_vehicle",
            InfractionKind::CollisionStatic => "collision_static",
            InfractionKind::RedLight => "red_light",
            InfractionKind::StopSign => "stop_sign",
            InfractionKind::OffRoad => "off_road",
        }
    }

    /// Multiplicative penalty. Off-road has no fixed coefficient; it depends
    /// on the fraction of the route driven off the road.
    pub fn coefficient(self) -> Option<f64> {
        match self {
            InfractionKind::CollisionPedestrian => Some(0.5),
            InfractionKind::CollisionVehicle => Some(0.6),
            InfractionKind::CollisionStatic => Some(0.65),
            InfractionKind::RedLight => Some(0.7),
            InfractionKind::StopSign => Some(0.8),
            InfractionKind::OffRoad => None,
        }
    }

    pub fn collision_with(actor: ActorKind) -> InfractionKind {
        match actor {
            ActorKind::Pedestrian => InfractionKind::CollisionPedestrian,
            // bicycles are classed with vehicles
            ActorKind::Bicycle | ActorKind::Vehicle => InfractionKind::CollisionVehicle,
            ActorKind::StaticObstacle => InfractionKind::CollisionStatic,
        }
    }
}

impl fmt::Display for InfractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InfractionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<InfractionKind> {
        InfractionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownInfraction(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfractionEvent {
    pub kind: InfractionKind,
    pub time: f64,
    pub arc_position: f64,
    pub detail: String,
    /// Off-road only: fraction of the route length driven off the road.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub off_road_fraction: Option<f64>,
}

impl InfractionEvent {
    pub fn new(
        kind: InfractionKind,
        time: f64,
        arc_position: f64,
        detail: impl Into<String>,
    ) -> InfractionEvent {
        InfractionEvent {
            kind,
            time,
            arc_position,
            detail: detail.into(),
            off_road_fraction: None,
        }
    }

    pub fn off_road(time: f64, arc_position: f64, fraction: f64) -> InfractionEvent {
        InfractionEvent {
            kind: InfractionKind::OffRoad,
            time,
            arc_position,
            detail: format!("{:.2}% of the route off the road", 100.0 * fraction),
            off_road_fraction: Some(fraction),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShutdownKind {
    RouteDeviation,
    AgentBlocked,
    SimulationTimeout,
    RouteTimeout,
}

impl ShutdownKind {
    pub fn name(self) -> &'static str {
        match self {
            ShutdownKind::RouteDeviation => "route_deviation",
            ShutdownKind::AgentBlocked => "agent_blocked",
            ShutdownKind::SimulationTimeout => "simulation_timeout",
            ShutdownKind::RouteTimeout => "route_timeout",
        }
    }
}

impl fmt::Display for ShutdownKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShutdownEvent {
    pub kind: ShutdownKind,
    pub time: f64,
}

/// Outcome of one run of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario_id: String,
    pub repetition: u32,
    /// Percent of the route completed, in [0, 100].
    pub completion: f64,
    pub infractions: Vec<InfractionEvent>,
    pub shutdown: Option<ShutdownEvent>,
    pub km_driven: f64,
    /// Product of the penalty coefficients, in [0, 1].
    pub penalty: f64,
    pub driving_score: f64,
    pub ticks: u64,
    /// Checksum of the persisted trace, once written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_checksum: Option<String>,
}

impl RunResult {
    /// Builds a result, deriving penalty and driving score from the events.
    pub fn new(
        scenario_id: impl Into<String>,
        repetition: u32,
        completion: f64,
        infractions: Vec<InfractionEvent>,
        shutdown: Option<ShutdownEvent>,
        km_driven: f64,
        ticks: u64,
    ) -> Result<RunResult> {
        let penalty = penalty_score(&infractions, completion)?;
        Ok(RunResult {
            scenario_id: scenario_id.into(),
            repetition,
            completion,
            infractions,
            shutdown,
            km_driven,
            penalty,
            driving_score: driving_score_from(completion, penalty),
            ticks,
            trace_checksum: None,
        })
    }

    /// A result known only by its summary numbers (e.g. published figures).
    pub fn from_summary(
        scenario_id: impl Into<String>,
        repetition: u32,
        completion: f64,
        penalty: f64,
    ) -> RunResult {
        RunResult {
            scenario_id: scenario_id.into(),
            repetition,
            completion,
            infractions: Vec::new(),
            shutdown: None,
            km_driven: 0.0,
            penalty,
            driving_score: driving_score_from(completion, penalty),
            ticks: 0,
            trace_checksum: None,
        }
    }

    /// Result for a run that could not be simulated: it counts as halted at
    /// the start with no progress.
    pub fn failed(scenario_id: impl Into<String>, repetition: u32) -> RunResult {
        RunResult {
            shutdown: Some(ShutdownEvent {
                kind: ShutdownKind::SimulationTimeout,
                time: 0.0,
            }),
            ..RunResult::from_summary(scenario_id, repetition, 0.0, 1.0)
        }
    }
}

/// How the off-road coefficient is read from the rubric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffRoadRule {
    /// `1 - off_road_length / route_length`.
    #[default]
    OffRoadFraction,
    /// `1 - (100 - completion) / 100`, i.e. the completed fraction.
    UncompletedFraction,
}

/// Product of all penalty coefficients; 1 for a clean run.
pub fn penalty_score(infractions: &[InfractionEvent], completion: f64) -> Result<f64> {
    penalty_score_with(infractions, completion, OffRoadRule::default())
}

pub fn penalty_score_with(
    infractions: &[InfractionEvent],
    completion: f64,
    rule: OffRoadRule,
) -> Result<f64> {
    if !(0.0..=100.0).contains(&completion) {
        return Err(Error::invalid("completion", "must lie in [0, 100]"));
    }
    let mut penalty = 1.0;
    let mut off_road: Option<f64> = None;
    for event in infractions {
        match event.kind.coefficient() {
            Some(c) => penalty *= c,
            None => {
                let fraction = event.off_road_fraction.unwrap_or(0.0).clamp(0.0, 1.0);
                off_road = Some((off_road.unwrap_or(0.0) + fraction).min(1.0));
            }
        }
    }
    if let Some(fraction) = off_road {
        let factor = match rule {
            OffRoadRule::OffRoadFraction => 1.0 - fraction,
            OffRoadRule::UncompletedFraction => completion / 100.0,
        };
        penalty *= factor;
    }
    Ok(penalty.clamp(0.0, 1.0))
}

/// Completion (0-100) times penalty (0-1).
pub fn driving_score_from(completion: f64, penalty: f64) -> f64 {
    completion * penalty
}

pub fn driving_score(run: &RunResult) -> f64 {
    driving_score_from(run.completion, run.penalty)
}

/// Streaming rubric detector. The same instance drives both live
/// simulation and after-the-fact replay, so the two always agree.
#[derive(Debug, Clone)]
pub struct RunMonitor {
    scenario: Arc<Scenario>,
    lane_half_width: f64,
    dt: f64,
    prev_arc: f64,
    last_tick: u64,
    last_time: f64,
    collided: Vec<bool>,
    zone_done: Vec<bool>,
    zone_min_speed: Vec<Option<f64>>,
    off_road_length: f64,
    first_off_road: Option<(f64, f64)>,
    max_on_lane_arc: f64,
    blocked_since: Option<u64>,
    distance: f64,
    infractions: Vec<InfractionEvent>,
    shutdown: Option<ShutdownEvent>,
}

/// Events raised by a single observed tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observation {
    pub infractions: Vec<InfractionEvent>,
    pub shutdown: Option<ShutdownEvent>,
}

/// Rubric outcome of a (possibly halted) run.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub completion: f64,
    pub infractions: Vec<InfractionEvent>,
    pub shutdown: Option<ShutdownEvent>,
    pub km_driven: f64,
    pub ticks: u64,
}

impl RunMonitor {
    pub fn new(
        scenario: Arc<Scenario>,
        lane_half_width: f64,
        dt: f64,
        initial_arc: f64,
    ) -> RunMonitor {
        let zones = scenario.route.control_zones().len();
        let length = scenario.route.length();
        let actors = scenario.actors.len();
        RunMonitor {
            scenario,
            lane_half_width,
            dt,
            prev_arc: initial_arc,
            last_tick: 0,
            last_time: 0.0,
            collided: vec![false; actors],
            zone_done: vec![false; zones],
            zone_min_speed: vec![None; zones],
            off_road_length: 0.0,
            first_off_road: None,
            max_on_lane_arc: initial_arc.clamp(0.0, length),
            blocked_since: None,
            distance: 0.0,
            infractions: Vec::new(),
            shutdown: None,
        }
    }

    pub fn for_trace(trace: &RunTrace) -> RunMonitor {
        RunMonitor::new(
            Arc::new(trace.header.scenario.clone()),
            trace.header.settings.plant.lane_half_width,
            trace.header.settings.plant.dt,
            trace.header.initial_state.arc_position,
        )
    }

    pub fn shutdown(&self) -> Option<ShutdownEvent> {
        self.shutdown
    }

    pub fn completion(&self) -> f64 {
        let length = self.scenario.route.length();
        (100.0 * self.max_on_lane_arc.min(length) / length).clamp(0.0, 100.0)
    }

    /// Feeds one tick. Once a shutdown has been raised further ticks are
    /// ignored.
    pub fn observe(&mut self, rec: &TickRecord) -> Observation {
        let mut obs = Observation::default();
        if self.shutdown.is_some() {
            return obs;
        }
        let route = &self.scenario.route;
        let state = &rec.state;
        let arc = state.arc_position;
        let ego = route.to_world(arc, state.lateral_offset);

        // collisions: one event per actor per run
        for (i, (actor, pose)) in self.scenario.actors.iter().zip(&rec.actors).enumerate() {
            if self.collided[i] {
                continue;
            }
            if ego.distance(pose.position) < EGO_RADIUS + actor.radius {
                self.collided[i] = true;
                obs.infractions.push(InfractionEvent::new(
                    InfractionKind::collision_with(actor.kind),
                    rec.time,
                    arc,
                    format!("collision with {}", actor.label),
                ));
            }
        }

        for (i, zone) in route.control_zones().iter().enumerate() {
            if self.zone_done[i] {
                continue;
            }
            match zone.kind {
                ZoneKind::TrafficLight => {
                    if self.prev_arc < zone.start && arc >= zone.start {
                        self.zone_done[i] = true;
                        if zone.light_at(rec.time) == Some(LightState::Red) {
                            obs.infractions.push(InfractionEvent::new(
                                InfractionKind::RedLight,
                                rec.time,
                                arc,
                                format!("ran red light at {:.1} m", zone.start),
                            ));
                        }
                    }
                }
                ZoneKind::StopSign => {
                    let entered = arc >= zone.start || self.prev_arc >= zone.start;
                    if entered && self.prev_arc <= zone.end {
                        let min = self.zone_min_speed[i].get_or_insert(f64::INFINITY);
                        *min = min.min(state.speed);
                    }
                    if arc > zone.end {
                        self.zone_done[i] = true;
                        let min = self.zone_min_speed[i].unwrap_or(state.speed);
                        if min > STANDSTILL_SPEED {
                            obs.infractions.push(InfractionEvent::new(
                                InfractionKind::StopSign,
                                rec.time,
                                arc,
                                format!(
                                    "minimum speed {min:.2} m/s at stop sign {:.1} m",
                                    zone.start
                                ),
                            ));
                        }
                    }
                }
            }
        }

        if state.lateral_offset.abs() > self.lane_half_width {
            self.off_road_length += (arc - self.prev_arc).max(0.0);
            self.first_off_road.get_or_insert((rec.time, arc));
        } else {
            self.max_on_lane_arc = self.max_on_lane_arc.max(arc.min(route.length()));
        }
        self.distance += state.speed * self.dt;

        // shutdown checks
        if route.distance_to(ego) > ROUTE_DEVIATION_LIMIT {
            obs.shutdown = Some(ShutdownEvent {
                kind: ShutdownKind::RouteDeviation,
                time: rec.time,
            });
        } else if state.speed < STANDSTILL_SPEED {
            let since = *self.blocked_since.get_or_insert(rec.tick);
            if (rec.tick - since) as f64 * self.dt >= BLOCKED_LIMIT - 1e-9 {
                obs.shutdown = Some(ShutdownEvent {
                    kind: ShutdownKind::AgentBlocked,
                    time: rec.time,
                });
            }
        } else {
            self.blocked_since = None;
        }
        if obs.shutdown.is_none() && rec.time > self.scenario.time_budget {
            obs.shutdown = Some(ShutdownEvent {
                kind: ShutdownKind::RouteTimeout,
                time: rec.time,
            });
        }

        self.prev_arc = arc;
        self.last_tick = rec.tick;
        self.last_time = rec.time;
        self.infractions.extend(obs.infractions.iter().cloned());
        self.shutdown = obs.shutdown;
        obs
    }

    /// Forces a shutdown from outside the trace (tick cap, service heartbeat).
    pub fn halt(&mut self, kind: ShutdownKind, time: f64) -> ShutdownEvent {
        let event = ShutdownEvent { kind, time };
        if self.shutdown.is_none() {
            self.shutdown = Some(event);
        }
        self.shutdown.unwrap()
    }

    /// Final off-road accounting plus completion.
    pub fn finish(self) -> Assessment {
        let mut infractions = self.infractions;
        if self.off_road_length > 0.0 {
            let (time, arc) = self
                .first_off_road
                .unwrap_or((self.last_time, self.prev_arc));
            let fraction = (self.off_road_length / self.scenario.route.length()).min(1.0);
            infractions.push(InfractionEvent::off_road(time, arc, fraction));
        }
        let length = self.scenario.route.length();
        Assessment {
            completion: (100.0 * self.max_on_lane_arc.min(length) / length).clamp(0.0, 100.0),
            infractions,
            shutdown: self.shutdown,
            km_driven: self.distance / 1000.0,
            ticks: self.last_tick,
        }
    }
}

/// All rubric infractions in a complete trace (the run is not truncated at
/// a shutdown here).
pub fn detect_infractions(trace: &RunTrace) -> Result<Vec<InfractionEvent>> {
    trace.validate()?;
    let mut monitor = RunMonitor::for_trace(trace);
    for rec in &trace.records {
        monitor.observe(rec);
        // keep scanning past a shutdown
        monitor.shutdown = None;
    }
    Ok(monitor.finish().infractions)
}

/// The first shutdown condition met by the trace, if any.
pub fn detect_shutdown(trace: &RunTrace) -> Result<Option<ShutdownEvent>> {
    trace.validate()?;
    let mut monitor = RunMonitor::for_trace(trace);
    for rec in &trace.records {
        if let Some(event) = monitor.observe(rec).shutdown {
            return Ok(Some(event));
        }
    }
    Ok(None)
}

/// Percentage of `route` covered on-lane by the trace.
pub fn route_completion(trace: &RunTrace, route: &Route) -> f64 {
    let lane = trace.header.settings.plant.lane_half_width;
    let length = route.length();
    let max_arc = trace
        .records
        .iter()
        .filter(|r| r.state.lateral_offset.abs() <= lane)
        .map(|r| r.state.arc_position.min(length))
        .fold(
            trace.header.initial_state.arc_position.clamp(0.0, length),
            f64::max,
        );
    (100.0 * max_arc / length).clamp(0.0, 100.0)
}

/// Scores a trace the way a live run would: everything after the first
/// shutdown is ignored.
pub fn score_trace(trace: &RunTrace) -> Result<RunResult> {
    trace.validate()?;
    let mut monitor = RunMonitor::for_trace(trace);
    for rec in &trace.records {
        if monitor.observe(rec).shutdown.is_some() {
            break;
        }
    }
    // halts imposed from outside the trace (tick cap, lost client) are
    // recorded on the final tick
    if monitor.shutdown().is_none() {
        let recorded = trace.records.last().and_then(|r| {
            r.events.iter().find_map(|e| match e {
                TickEvent::Shutdown(s) => Some(*s),
                TickEvent::Infraction(_) => None,
            })
        });
        if let Some(event) = recorded {
            monitor.halt(event.kind, event.time);
        }
    }
    let assessment = monitor.finish();
    result_from_assessment(
        &trace.header.scenario.id,
        trace.header.repetition,
        assessment,
    )
}

pub fn result_from_assessment(
    scenario_id: &str,
    repetition: u32,
    a: Assessment,
) -> Result<RunResult> {
    RunResult::new(
        scenario_id,
        repetition,
        a.completion,
        a.infractions,
        a.shutdown,
        a.km_driven,
        a.ticks,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub scenario_id: String,
    pub repetitions: usize,
    pub driving_score: f64,
    pub route_completion: f64,
    pub infraction_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub per_scenario: Vec<ScenarioScore>,
    /// Mean route completion, percent.
    pub route_completion: f64,
    /// Mean penalty product, in [0, 1].
    pub infraction_score: f64,
    /// `infraction_score * route_completion`.
    pub driving_score: f64,
    pub runs: usize,
    pub km_driven: f64,
    /// Infraction counts per kilometre driven, by kind.
    pub infractions_per_km: BTreeMap<InfractionKind, f64>,
}

/// Sort key placing `S2` before `S10`.
fn scenario_order(id: &str) -> (u64, String) {
    let numeric = id
        .trim_start_matches(|c: char| !c.is_ascii_digit())
        .parse::<u64>()
        .unwrap_or(u64::MAX);
    (numeric, id.to_string())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Averages repetitions per scenario, then scenarios into global scores.
/// The result does not depend on the order of `runs`.
pub fn aggregate(runs: &[RunResult]) -> Result<ScoreCard> {
    if runs.is_empty() {
        return Err(Error::EmptyRuns);
    }
    let mut sorted: Vec<&RunResult> = runs.iter().collect();
    sorted.sort_by(|a, b| {
        scenario_order(&a.scenario_id)
            .cmp(&scenario_order(&b.scenario_id))
            .then(a.repetition.cmp(&b.repetition))
    });

    let mut per_scenario = Vec::new();
    for group in sorted.chunk_by(|a, b| a.scenario_id == b.scenario_id) {
        per_scenario.push(ScenarioScore {
            scenario_id: group[0].scenario_id.clone(),
            repetitions: group.len(),
            driving_score: mean(group.iter().map(|r| driving_score(r))),
            route_completion: mean(group.iter().map(|r| r.completion)),
            infraction_penalty: mean(group.iter().map(|r| r.penalty)),
        });
    }

    let route_completion = mean(per_scenario.iter().map(|s| s.route_completion));
    let infraction_score = mean(per_scenario.iter().map(|s| s.infraction_penalty));
    let km_driven: f64 = sorted.iter().map(|r| r.km_driven).sum();

    let mut counts: BTreeMap<InfractionKind, usize> = BTreeMap::new();
    for run in &sorted {
        for event in &run.infractions {
            *counts.entry(event.kind).or_default() += 1;
        }
    }
    let infractions_per_km = counts
        .into_iter()
        .map(|(kind, n)| {
            (
                kind,
                if km_driven > 0.0 {
                    n as f64 / km_driven
                } else {
                    0.0
                },
            )
        })
        .collect();

    Ok(ScoreCard {
        per_scenario,
        route_completion,
        infraction_score,
        driving_score: driving_score_from(route_completion, infraction_score),
        runs: runs.len(),
        km_driven,
        infractions_per_km,
    })
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResultRecord {
    Header {
        format: String,
        version: u32,
        suite_seed: u64,
        gains: crate::control::GainSet,
        repetitions: u32,
    },
    Run(RunResult),
    Scorecard(ScoreCard),
}

impl ScoreCard {
    /// The scorecard as a single results-file line (no trailing newline).
    pub fn to_record_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&ResultRecord::Scorecard(
            self.clone(),
        ))?)
    }

    /// Fixed-width table in the Driving score / Route completion /
    /// Infraction penalty layout.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>14} {:>17} {:>19}",
            "scenario", "driving score", "route completion", "infraction penalty"
        );
        for s in &self.per_scenario {
            let _ = writeln!(
                out,
                "{:<10} {:>14.2} {:>17.2} {:>19.3}",
                s.scenario_id, s.driving_score, s.route_completion, s.infraction_penalty
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>14.2} {:>17.2} {:>19.3}",
            "global", self.driving_score, self.route_completion, self.infraction_score
        );
        if !self.infractions_per_km.is_empty() {
            let _ = writeln!(
                out,
                "\ninfractions per km ({:.3} km driven):",
                self.km_driven
            );
            for (kind, rate) in &self.infractions_per_km {
                let _ = writeln!(out, "  {:<22} {:>8.3}", kind.name(), rate);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(kind: InfractionKind) -> InfractionEvent {
        InfractionEvent::new(kind, 0.0, 0.0, "")
    }

    #[test]
    fn clean_run_scores_one() {
        assert_eq!(penalty_score(&[], 50.0).unwrap(), 1.0);
    }

    #[test]
    fn red_light_and_stop_sign() {
        let p = penalty_score(
            &[ev(InfractionKind::RedLight), ev(InfractionKind::StopSign)],
            100.0,
        )
        .unwrap();
        assert!((p - 0.56).abs() < 1e-12);
    }

    #[test]
    fn repeated_coefficients_multiply() {
        let p = penalty_score(
            &[
                ev(InfractionKind::CollisionPedestrian),
                ev(InfractionKind::CollisionPedestrian),
            ],
            100.0,
        )
        .unwrap();
        assert_eq!(p, 0.25);
    }

    #[test]
    fn collision_classes() {
        assert_eq!(
            InfractionKind::collision_with(ActorKind::Bicycle),
            InfractionKind::CollisionVehicle
        );
        assert_eq!(InfractionKind::CollisionVehicle.coefficient(), Some(0.6));
        assert_eq!(InfractionKind::CollisionStatic.coefficient(), Some(0.65));
    }

    #[test]
    fn off_road_rules() {
        let events = vec![InfractionEvent::off_road(1.0, 10.0, 0.2)];
        assert!((penalty_score(&events, 80.0).unwrap() - 0.8).abs() < 1e-12);
        let alt = penalty_score_with(&events, 60.0, OffRoadRule::UncompletedFraction).unwrap();
        assert!((alt - 0.6).abs() < 1e-12);
    }

    #[test]
    fn unknown_kind_is_a_hard_error() {
        assert!(matches!(
            "collision_alien".parse::<InfractionKind>(),
            Err(Error::UnknownInfraction(_))
        ));
        let json = r#"{"kind":"jaywalking","time":0,"arc_position":0,"detail":""}"#;
        assert!(serde_json::from_str::<InfractionEvent>(json).is_err());
    }

    #[test]
    fn completion_out_of_range_rejected() {
        assert!(penalty_score(&[], 101.0).is_err());
    }

    #[test]
    fn reference_products() {
        assert!((driving_score_from(85.63, 0.855) - 73.21).abs() <= 0.01);
        assert!((driving_score_from(89.36, 0.866) - 77.39).abs() <= 0.02);
        assert_eq!(driving_score_from(100.0, 1.0), 100.0);
    }

    #[test]
    fn aggregate_examples() {
        let perfect: Vec<_> = (0..3)
            .map(|r| RunResult::from_summary("S0", r, 100.0, 1.0))
            .collect();
        let card = aggregate(&perfect).unwrap();
        assert_eq!(
            (
                card.route_completion,
                card.infraction_score,
                card.driving_score
            ),
            (100.0, 1.0, 100.0)
        );

        let card = aggregate(&[RunResult::from_summary("S0", 0, 85.63, 0.855)]).unwrap();
        assert!((card.driving_score - 73.21).abs() <= 0.01);

        let runs = [
            RunResult::from_summary("S0", 0, 100.0, 1.0),
            RunResult::from_summary("S1", 0, 50.0, 0.56),
        ];
        let card = aggregate(&runs).unwrap();
        assert!((card.infraction_score - 0.78).abs() < 1e-12);
        assert!((card.route_completion - 75.0).abs() < 1e-12);
        assert!((card.driving_score - 58.5).abs() < 1e-9);

        assert!(matches!(aggregate(&[]), Err(Error::EmptyRuns)));
    }

    #[test]
    fn aggregate_is_order_insensitive() {
        let mut runs: Vec<_> = (0..16)
            .flat_map(|s| {
                (0..3).map(move |r| {
                    RunResult::from_summary(
                        format!("S{s}"),
                        r,
                        10.0 + s as f64 * 5.3 + r as f64,
                        0.5 + 0.03 * s as f64,
                    )
                })
            })
            .collect();
        let a = aggregate(&runs).unwrap();
        runs.reverse();
        runs.swap(3, 40);
        let b = aggregate(&runs).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.per_scenario[2].scenario_id, "S2");
        assert_eq!(a.per_scenario[10].scenario_id, "S10");
    }

    #[test]
    fn table_renders_global_row() {
        let card = aggregate(&[RunResult::from_summary("S0", 0, 85.63, 0.855)]).unwrap();
        let table = card.render_table();
        assert!(table.contains("global"));
        assert!(table.contains("73.21"));
    }

    fn kind_strategy() -> impl Strategy<Value = InfractionKind> {
        prop::sample::select(InfractionKind::ALL.to_vec())
    }

    fn events_strategy() -> impl Strategy<Value = Vec<InfractionEvent>> {
        prop::collection::vec((kind_strategy(), 0.0..1.0f64), 0..12).prop_map(|v| {
            v.into_iter()
                .map(|(k, f)| match k {
                    InfractionKind::OffRoad => InfractionEvent::off_road(0.0, 0.0, f),
                    k => ev(k),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn penalty_in_unit_interval(events in events_strategy(), completion in 0.0..=100.0f64) {
            let p = penalty_score(&events, completion).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((0.0..=100.0).contains(&driving_score_from(completion, p)));
        }

        #[test]
        fn penalty_is_order_independent(events in events_strategy(), seed in any::<u64>()) {
            let mut shuffled = events.clone();
            // deterministic Fisher-Yates driven by the proptest seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let a = penalty_score(&events, 100.0).unwrap();
            let b = penalty_score(&shuffled, 100.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn removing_an_infraction_never_lowers_score(events in events_strategy(), idx in any::<prop::sample::Index>()) {
            prop_assume!(!events.is_empty());
            let full = penalty_score(&events, 100.0).unwrap();
            let mut fewer = events.clone();
            fewer.remove(idx.index(events.len()));
            prop_assert!(penalty_score(&fewer, 100.0).unwrap() >= full - 1e-15);
        }
    }
}
