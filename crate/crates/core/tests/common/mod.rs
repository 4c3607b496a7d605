#![allow(dead_code)]

use drivetune::control::ControlAction;
use drivetune::fusion::Situation;
use drivetune::route::{Point, RouteBuilder};
use drivetune::scenario::{Scenario, WeatherKind, WeatherProfile};
use drivetune::sim::RunSettings;
use drivetune::trace::{RunTrace, TickRecord, TraceHeader, TRACE_FORMAT, TRACE_VERSION};
use drivetune::{GainSet, VehicleState};

/// Actor-free straight route.
pub fn straight(length: f64, time_budget: f64) -> Scenario {
    Scenario {
        id: "T0".into(),
        index: 0,
        route: RouteBuilder::new(Point(0.0, 0.0), 0.0, 8.0)
            .straight(length)
            .build("straight", "straight")
            .unwrap(),
        weather: WeatherProfile::new(WeatherKind::ClearNoon, 0.0).unwrap(),
        actors: Vec::new(),
        seed: 1,
        time_budget,
    }
}

/// A trace whose ego follows `script(tick) -> (arc, lateral, speed)`.
pub fn scripted(
    scenario: &Scenario,
    ticks: u64,
    script: impl Fn(u64) -> (f64, f64, f64),
) -> RunTrace {
    let settings = RunSettings::default();
    let dt = settings.plant.dt;
    let mut trace = RunTrace::new(TraceHeader {
        format: TRACE_FORMAT.into(),
        version: TRACE_VERSION,
        scenario: scenario.clone(),
        repetition: 0,
        gains: GainSet::TCP_ORIGINAL,
        settings,
        initial_state: VehicleState::default(),
    });
    for tick in 1..=ticks {
        let (arc, lateral, speed) = script(tick);
        let time = tick as f64 * dt;
        let state = VehicleState {
            time,
            arc_position: arc,
            lateral_offset: lateral,
            speed,
            ..VehicleState::default()
        };
        let action = ControlAction::default();
        trace.records.push(TickRecord {
            tick,
            time,
            state,
            v_ref: speed,
            measured_speed: speed,
            waypoints: Vec::new(),
            action_traj: action,
            action_ctl: action,
            action,
            situation: Situation::TrajectorySpecialized,
            actors: Vec::new(),
            events: Vec::new(),
        });
    }
    trace
}
