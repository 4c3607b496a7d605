//! The closed simulation loop wiring scenario, controller, fusion, plant
//! and rubric together.
//!
//! Each tick runs, in order: actor update, reference generation, situation
//! detection, PID and scripted control branch, fusion, plant step, and
//! infraction/shutdown detection.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::{
    lateral_step, longitudinal_step, ControlAction, GainSet, PidState, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::fusion::{detect_situation, fuse, FusionWeight, SituationWindow, DEFAULT_HISTORY};
use crate::plant::{self, default_params, PlantParams, VehicleState};
use crate::scenario::{actor_step, wrap_angle, ActorTracker, Planner, Scenario};
use crate::scoring::{result_from_assessment, RunMonitor, RunResult, ShutdownKind};
use crate::trace::{RunTrace, TickEvent, TickRecord, TraceHeader, TRACE_FORMAT, TRACE_VERSION};

/// Default safety cap on ticks per run (one hour of simulated time).
pub const DEFAULT_TICK_CAP: u64 = 72_000;

/// Everything besides the scenario and gains that shapes a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub plant: PlantParams,
    pub alpha: FusionWeight,
    /// Steering history length for situation detection, ticks.
    pub history: usize,
    /// PID error window length, ticks.
    pub pid_window: usize,
    /// Hard cap on ticks; reaching it ends the run as a route timeout.
    pub tick_cap: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            plant: default_params(),
            alpha: FusionWeight::HALF,
            history: DEFAULT_HISTORY,
            pid_window: DEFAULT_WINDOW,
            tick_cap: DEFAULT_TICK_CAP,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if self.history == 0 {
            return Err(Error::invalid("history", "must be positive"));
        }
        if self.pid_window == 0 {
            return Err(Error::invalid("pid_window", "must be positive"));
        }
        if self.tick_cap == 0 {
            return Err(Error::invalid("tick_cap", "must be positive"));
        }
        Ok(())
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Completed,
    Halted(ShutdownKind),
}

/// A steppable single run.
#[derive(Debug)]
pub struct Simulation {
    scenario: Arc<Scenario>,
    repetition: u32,
    gains: GainSet,
    settings: RunSettings,
    state: VehicleState,
    pid: PidState,
    window: SituationWindow,
    planner: Planner,
    tracker: ActorTracker,
    monitor: RunMonitor,
    tick: u64,
    status: RunStatus,
    trace: RunTrace,
}

impl Simulation {
    pub fn new(
        scenario: Arc<Scenario>,
        repetition: u32,
        gains: GainSet,
        settings: RunSettings,
    ) -> Result<Simulation> {
        gains.validate()?;
        settings.validate()?;
        scenario.validate()?;
        let state = VehicleState::default();
        let header = TraceHeader {
            format: TRACE_FORMAT.to_string(),
            version: TRACE_VERSION,
            scenario: (*scenario).clone(),
            repetition,
            gains,
            settings,
            initial_state: state,
        };
        Ok(Simulation {
            monitor: RunMonitor::new(
                scenario.clone(),
                settings.plant.lane_half_width,
                settings.plant.dt,
                0.0,
            ),
            planner: Planner::new(&scenario),
            tracker: ActorTracker::new(&scenario),
            pid: PidState::new(settings.pid_window),
            window: SituationWindow::new(settings.history),
            scenario,
            repetition,
            gains,
            settings,
            state,
            tick: 0,
            status: RunStatus::Running,
            trace: RunTrace::new(header),
        })
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn is_finished(&self) -> bool {
        self.status != RunStatus::Running
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn gains(&self) -> GainSet {
        self.gains
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    /// Advances one tick and returns its record, or `None` once finished.
    pub fn step(&mut self) -> Result<Option<&TickRecord>> {
        if self.is_finished() {
            return Ok(None);
        }
        let scenario = &*self.scenario;
        let params = &self.settings.plant;
        let prev_tick = self.tick;
        let tick = prev_tick + 1;

        self.tracker
            .update(scenario, self.state.arc_position, prev_tick);
        let reference = self.planner.reference(
            scenario,
            self.repetition,
            &self.state,
            prev_tick,
            &self.tracker,
            params,
        );
        let situation = detect_situation(&self.window);

        let pid = std::mem::take(&mut self.pid);
        let (longitudinal, pid) =
            longitudinal_step(&self.gains, pid, reference.v_ref, reference.measured_speed)?;
        self.pid = pid;
        let steer = lateral_step(reference.aim_error, self.state.lateral_offset)?;
        let action_traj = ControlAction::new(longitudinal, steer);
        let action = fuse(
            situation,
            &action_traj,
            &reference.a_ctl,
            self.settings.alpha,
        );

        let before = self.state;
        let mut next = plant::step(&before, &action, params)?;
        // keep the heading relative to the (rotating) centerline tangent
        let turn = scenario.route.heading_at(next.arc_position)
            - scenario.route.heading_at(before.arc_position);
        next.heading_error = wrap_angle(next.heading_error - turn);
        next.time = tick as f64 * params.dt;
        self.window.push(action.steer);

        let actors = actor_step(scenario, tick, &self.tracker, params.dt);
        let mut record = TickRecord {
            tick,
            time: next.time,
            state: next,
            v_ref: reference.v_ref,
            measured_speed: reference.measured_speed,
            waypoints: reference.waypoints,
            action_traj,
            action_ctl: reference.a_ctl,
            action,
            situation,
            actors,
            events: Vec::new(),
        };

        let obs = self.monitor.observe(&record);
        record
            .events
            .extend(obs.infractions.into_iter().map(TickEvent::Infraction));
        let mut shutdown = obs.shutdown;
        if shutdown.is_none()
            && next.arc_position < scenario.route.length()
            && tick >= self.settings.tick_cap
        {
            shutdown = Some(self.monitor.halt(ShutdownKind::RouteTimeout, next.time));
        }
        if let Some(event) = shutdown {
            record.events.push(TickEvent::Shutdown(event));
            self.status = RunStatus::Halted(event.kind);
        } else if next.arc_position >= scenario.route.length() {
            self.status = RunStatus::Completed;
        }

        self.state = next;
        self.tick = tick;
        self.trace.records.push(record);
        Ok(self.trace.records.last())
    }

    /// Ends the run from outside (e.g. a service heartbeat timeout).
    pub fn halt(&mut self, kind: ShutdownKind) {
        if !self.is_finished() {
            let event = self.monitor.halt(kind, self.state.time);
            if let Some(last) = self.trace.records.last_mut() {
                last.events.push(TickEvent::Shutdown(event));
            }
            self.status = RunStatus::Halted(kind);
        }
    }

    /// Runs to completion.
    pub fn run(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }

    /// Scores the run as it stands.
    pub fn result(&self) -> Result<RunResult> {
        result_from_assessment(
            &self.scenario.id,
            self.repetition,
            self.monitor.clone().finish(),
        )
    }

    pub fn finish(self) -> Result<(RunResult, RunTrace)> {
        let result = self.result()?;
        Ok((result, self.trace))
    }
}

/// Simulates one scenario repetition to the end.
pub fn simulate_run(
    scenario: Arc<Scenario>,
    repetition: u32,
    gains: GainSet,
    settings: RunSettings,
) -> Result<(RunResult, RunTrace)> {
    let mut sim = Simulation::new(scenario, repetition, gains, settings)?;
    sim.run()?;
    sim.finish()
}

/// Closed-loop response of the speed controller to a constant reference,
/// starting from rest on a straight road.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    /// Speed after each tick.
    pub speeds: Vec<f64>,
    /// Seconds from first reaching 10% of the reference to first reaching 90%.
    /// `None` if the speed never gets there.
    pub rise_time: Option<f64>,
    /// Mean absolute speed error over the last `tail` ticks.
    pub steady_state_error: f64,
    /// Peak speed above the reference, m/s (0 when it never exceeds it).
    pub overshoot: f64,
}

pub fn step_response(
    gains: &GainSet,
    params: &PlantParams,
    v_ref: f64,
    ticks: usize,
    tail: usize,
) -> Result<StepResponse> {
    gains.validate()?;
    params.validate()?;
    if !(v_ref.is_finite() && v_ref > 0.0) {
        return Err(Error::invalid("v_ref", "must be positive"));
    }
    if tail == 0 || tail > ticks {
        return Err(Error::invalid("tail", "must lie in [1, ticks]"));
    }
    let mut state = VehicleState::default();
    let mut pid = PidState::new(DEFAULT_WINDOW);
    let mut speeds = Vec::with_capacity(ticks);
    for _ in 0..ticks {
        let (cmd, next) = longitudinal_step(gains, pid, v_ref, state.speed)?;
        pid = next;
        state = plant::step(&state, &ControlAction::new(cmd, 0.0), params)?;
        speeds.push(state.speed);
    }
    let first_at = |level: f64| speeds.iter().position(|&v| v >= level);
    let rise_time = match (first_at(0.1 * v_ref), first_at(0.9 * v_ref)) {
        (Some(lo), Some(hi)) => Some((hi - lo) as f64 * params.dt),
        _ => None,
    };
    let steady_state_error = speeds[ticks - tail..]
        .iter()
        .map(|v| (v_ref - v).abs())
        .sum::<f64>()
        / tail as f64;
    let overshoot = speeds.iter().fold(0.0_f64, |m, &v| m.max(v - v_ref));
    Ok(StepResponse {
        speeds,
        rise_time,
        steady_state_error,
        overshoot,
    })
}
