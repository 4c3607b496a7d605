//! The 16-scenario evaluation suite (4 routes x 4 weathers), scripted
//! traffic participants and the scripted reference source that stands in
//! for the learned planner.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{lateral_step, ControlAction};
use crate::error::{Error, Result};
use crate::noise::{NoiseKey, Stream};
use crate::plant::{PlantParams, VehicleState};
use crate::route::{LightSchedule, LightState, Point, Route, RouteBuilder, ZoneKind};

pub const SUITE_FORMAT: &str = "drivetune-suite";
pub const SUITE_VERSION: u32 = 1;

/// Footprint radius of the ego vehicle, meters.
pub const EGO_RADIUS: f64 = 1.2;
/// Spacing between the four reference waypoints, meters.
pub const WAYPOINT_SPACING: f64 = 3.0;
/// Deceleration the planner assumes when shaping stopping profiles, m/s².
pub const PLANNER_DECEL: f64 = 2.5;
/// Bumper-to-bumper standstill distance behind an obstacle, meters.
pub const MIN_GAP: f64 = 7.5;
/// How far ahead the planner looks for obstacles and limits, meters.
pub const LOOKAHEAD: f64 = 60.0;
/// Lateral clearance margin for the obstacle corridor test, meters.
const CORRIDOR_MARGIN: f64 = 0.3;
/// Half width of the ego body used for the corridor test, meters.
const EGO_HALF_WIDTH: f64 = 1.0;
/// Ticks the vehicle must stand still before leaving a stop sign.
const STOP_HOLD_TICKS: u32 = 20;
/// Measured speed treated as standing still by the planner.
const STANDSTILL_SPEED: f64 = 0.3;
/// Required deceleration above which the planner commits through an amber light.
const AMBER_COMMIT_DECEL: f64 = 3.0;
/// Required deceleration above which stopping for red is abandoned.
const RED_GIVE_UP_DECEL: f64 = 6.0;
/// Extra seconds added to the predicted arrival time at a moving actor.
const PREDICTION_SLACK: f64 = 1.0;
/// Distance before a light's stop line at which the planner aims to halt, meters.
const STOP_LINE_MARGIN: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeatherKind {
    ClearNoon,
    CloudySunset,
    SoftRainDawn,
    HardRainNight,
}

impl WeatherKind {
    pub const ALL: [WeatherKind; 4] = [
        WeatherKind::ClearNoon,
        WeatherKind::CloudySunset,
        WeatherKind::SoftRainDawn,
        WeatherKind::HardRainNight,
    ];

    pub fn default_severity(self) -> f64 {
        match self {
            WeatherKind::ClearNoon => 0.0,
            WeatherKind::CloudySunset => 0.25,
            WeatherKind::SoftRainDawn => 0.5,
            WeatherKind::HardRainNight => 1.0,
        }
    }
}

/// Severity per weather condition, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Severities {
    pub clear_noon: f64,
    pub cloudy_sunset: f64,
    pub soft_rain_dawn: f64,
    pub hard_rain_night: f64,
}

impl Default for Severities {
    fn default() -> Self {
        Severities {
            clear_noon: WeatherKind::ClearNoon.default_severity(),
            cloudy_sunset: WeatherKind::CloudySunset.default_severity(),
            soft_rain_dawn: WeatherKind::SoftRainDawn.default_severity(),
            hard_rain_night: WeatherKind::HardRainNight.default_severity(),
        }
    }
}

impl Severities {
    pub fn get(&self, kind: WeatherKind) -> f64 {
        match kind {
            WeatherKind::ClearNoon => self.clear_noon,
            WeatherKind::CloudySunset => self.cloudy_sunset,
            WeatherKind::SoftRainDawn => self.soft_rain_dawn,
            WeatherKind::HardRainNight => self.hard_rain_night,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for kind in WeatherKind::ALL {
            WeatherProfile::new(kind, self.get(kind))?;
        }
        Ok(())
    }
}

/// Weather as observation degradation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherProfile {
    pub name: WeatherKind,
    pub severity: f64,
    /// Standard deviation of the speed measurement noise, m/s.
    pub speed_noise: f64,
    /// Standard deviation of per-axis waypoint jitter, meters.
    pub waypoint_jitter: f64,
    /// Perception delay for actors and traffic lights, ticks.
    pub detection_delay: u32,
}

/// Effect scales at severity 1.
const SPEED_NOISE_AT_FULL: f64 = 0.3;
const JITTER_AT_FULL: f64 = 0.25;
const DELAY_AT_FULL: f64 = 10.0;

impl WeatherProfile {
    pub fn new(name: WeatherKind, severity: f64) -> Result<WeatherProfile> {
        if !(0.0..=1.0).contains(&severity) {
            return Err(Error::invalid("severity", "must lie in [0, 1]"));
        }
        Ok(WeatherProfile {
            name,
            severity,
            speed_noise: SPEED_NOISE_AT_FULL * severity,
            waypoint_jitter: JITTER_AT_FULL * severity,
            detection_delay: (DELAY_AT_FULL * severity).round() as u32,
        })
    }

    pub fn preset(name: WeatherKind) -> WeatherProfile {
        WeatherProfile::new(name, name.default_severity()).expect("default severities are in range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Pedestrian,
    Bicycle,
    Vehicle,
    StaticObstacle,
}

/// Scripted motion in route coordinates. Motion starts at the trigger tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActorMotion {
    Static {
        arc: f64,
        lateral: f64,
    },
    /// Moves across the road at a fixed arc position.
    Crossing {
        arc: f64,
        from_lateral: f64,
        to_lateral: f64,
        speed: f64,
    },
    /// Drives along the route and halts at `stop_arc`.
    Along {
        arc: f64,
        lateral: f64,
        speed: f64,
        stop_arc: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorScript {
    pub kind: ActorKind,
    /// Ego arc position that sets the actor in motion.
    pub trigger: f64,
    pub motion: ActorMotion,
    pub radius: f64,
    pub label: String,
    /// Lateral distance from the centerline beyond which the actor is hidden
    /// from the planner (e.g. behind parked cars). `None` means always visible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_within: Option<f64>,
}

impl ActorScript {
    /// Route-coordinate pose `(arc, lateral)` at `tick`, given when the
    /// actor was triggered.
    pub fn frenet_at(&self, tick: u64, triggered_at: Option<u64>, dt: f64) -> (f64, f64) {
        let elapsed = match triggered_at {
            Some(t0) if tick >= t0 => (tick - t0) as f64 * dt,
            _ => 0.0,
        };
        match self.motion {
            ActorMotion::Static { arc, lateral } => (arc, lateral),
            ActorMotion::Crossing {
                arc,
                from_lateral,
                to_lateral,
                speed,
            } => {
                let span = to_lateral - from_lateral;
                let travelled = (speed * elapsed).min(span.abs());
                (arc, from_lateral + span.signum() * travelled)
            }
            ActorMotion::Along {
                arc,
                lateral,
                speed,
                stop_arc,
            } => ((arc + speed * elapsed).min(stop_arc.max(arc)), lateral),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorPose {
    pub arc: f64,
    pub lateral: f64,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// `S0` .. `S15`.
    pub id: String,
    pub index: usize,
    pub route: Route,
    pub weather: WeatherProfile,
    pub actors: Vec<ActorScript>,
    pub seed: u64,
    /// Seconds before the run is halted with a route timeout.
    pub time_budget: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.time_budget.is_nan() || self.time_budget <= 0.0 {
            return Err(Error::invalid("time_budget", "must be positive"));
        }
        for actor in &self.actors {
            if actor.radius.is_nan() || actor.radius < 0.0 {
                return Err(Error::invalid(
                    "radius",
                    format!("actor `{}` has a negative radius", actor.label),
                ));
            }
            if !(0.0..=self.route.length()).contains(&actor.trigger) {
                return Err(Error::invalid(
                    "trigger",
                    format!("actor `{}` triggers outside the route", actor.label),
                ));
            }
        }
        Ok(())
    }

    pub fn noise_key(&self, repetition: u32) -> NoiseKey {
        NoiseKey::new(self.seed, self.index, repetition)
    }
}

/// Which actors have been set in motion, and when.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActorTracker {
    triggered_at: Vec<Option<u64>>,
}

impl ActorTracker {
    pub fn new(scenario: &Scenario) -> ActorTracker {
        ActorTracker {
            triggered_at: vec![None; scenario.actors.len()],
        }
    }

    /// Arms every actor whose trigger the ego has reached at `tick`.
    pub fn update(&mut self, scenario: &Scenario, ego_arc: f64, tick: u64) {
        for (slot, actor) in self.triggered_at.iter_mut().zip(&scenario.actors) {
            if slot.is_none() && ego_arc >= actor.trigger {
                *slot = Some(tick);
            }
        }
    }

    pub fn triggered_at(&self, actor: usize) -> Option<u64> {
        self.triggered_at.get(actor).copied().flatten()
    }
}

/// Actor poses at `tick`. Deterministic in `(scenario, tick, tracker)`.
pub fn actor_step(
    scenario: &Scenario,
    tick: u64,
    tracker: &ActorTracker,
    dt: f64,
) -> Vec<ActorPose> {
    scenario
        .actors
        .iter()
        .enumerate()
        .map(|(i, actor)| {
            let (arc, lateral) = actor.frenet_at(tick, tracker.triggered_at(i), dt);
            ActorPose {
                arc,
                lateral,
                position: scenario.route.to_world(arc, lateral),
            }
        })
        .collect()
}

/// Output of the scripted reference source for one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    /// Up to four look-ahead points; empty once the route is finished.
    pub waypoints: Vec<Point>,
    pub v_ref: f64,
    /// Speed as perceived under the current weather.
    pub measured_speed: f64,
    /// Heading error towards the aim waypoint, radians.
    pub aim_error: f64,
    /// Scripted stand-in for the control-prediction branch.
    pub a_ctl: ControlAction,
}

/// Planner memory that persists across ticks of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Planner {
    stop_served: Vec<bool>,
    stop_hold: u32,
    amber_commit: Vec<bool>,
}

impl Planner {
    pub fn new(scenario: &Scenario) -> Planner {
        let n = scenario.route.control_zones().len();
        Planner {
            stop_served: vec![false; n],
            stop_hold: 0,
            amber_commit: vec![false; n],
        }
    }

    /// Computes waypoints, reference speed and the control-branch action.
    pub fn reference(
        &mut self,
        scenario: &Scenario,
        repetition: u32,
        ego: &VehicleState,
        tick: u64,
        tracker: &ActorTracker,
        params: &PlantParams,
    ) -> Reference {
        let route = &scenario.route;
        let weather = &scenario.weather;
        let key = scenario.noise_key(repetition);
        let measured_speed = (ego.speed
            + key.gaussian(Stream::SpeedMeasurement, tick, 0, weather.speed_noise))
        .max(0.0);

        if ego.arc_position >= route.length() {
            return Reference {
                waypoints: Vec::new(),
                v_ref: 0.0,
                measured_speed,
                aim_error: 0.0,
                a_ctl: scripted_control(0.0, measured_speed, 0.0),
            };
        }

        let waypoints: Vec<Point> = (1..=4u64)
            .map(|i| {
                let arc = (ego.arc_position + WAYPOINT_SPACING * i as f64).min(route.length());
                let p = route.point_at(arc);
                let dx = key.gaussian(Stream::WaypointJitter, tick, 2 * i, weather.waypoint_jitter);
                let dy = key.gaussian(
                    Stream::WaypointJitter,
                    tick,
                    2 * i + 1,
                    weather.waypoint_jitter,
                );
                Point(p.0 + dx, p.1 + dy)
            })
            .collect();

        let ego_pos = route.to_world(ego.arc_position, ego.lateral_offset);
        let ego_heading = route.heading_at(ego.arc_position) + ego.heading_error;
        let aim_error = heading_to(ego_pos, ego_heading, waypoints[1]);
        let near_error = heading_to(ego_pos, ego_heading, waypoints[0]);

        let v_ref = self
            .speed_reference(scenario, ego, measured_speed, tick, tracker, params)
            .max(0.0);
        let steer = lateral_step(near_error, ego.lateral_offset).unwrap_or(0.0);

        Reference {
            waypoints,
            v_ref,
            measured_speed,
            aim_error,
            a_ctl: scripted_control(v_ref, measured_speed, steer),
        }
    }

    fn speed_reference(
        &mut self,
        scenario: &Scenario,
        ego: &VehicleState,
        measured_speed: f64,
        tick: u64,
        tracker: &ActorTracker,
        params: &PlantParams,
    ) -> f64 {
        let route = &scenario.route;
        let arc = ego.arc_position;
        let mut v_ref = route.speed_limit_at(arc);

        // slow down ahead of lower limits
        for zone in route.speed_limits() {
            let ahead = zone.start - arc;
            if ahead > 0.0 && ahead < LOOKAHEAD {
                v_ref = v_ref.min(stopping_speed(ahead, zone.limit));
            }
        }

        // traffic lights and stop signs, perceived with the weather delay
        let perceived_tick = tick.saturating_sub(scenario.weather.detection_delay as u64);
        let perceived_time = perceived_tick as f64 * params.dt;
        for (i, zone) in route.control_zones().iter().enumerate() {
            match zone.kind {
                ZoneKind::StopSign => {
                    if self.stop_served[i] || arc > zone.end {
                        continue;
                    }
                    let target = zone.start + 1.0;
                    let gap = target - arc;
                    if gap > LOOKAHEAD {
                        continue;
                    }
                    v_ref = v_ref.min(stopping_speed(gap.max(0.0), 0.0));
                    if arc >= zone.start && measured_speed < STANDSTILL_SPEED {
                        self.stop_hold += 1;
                        if self.stop_hold >= STOP_HOLD_TICKS {
                            self.stop_served[i] = true;
                            self.stop_hold = 0;
                        }
                    } else {
                        self.stop_hold = 0;
                    }
                }
                ZoneKind::TrafficLight => {
                    let to_line = zone.start - arc;
                    if to_line <= 0.0 || to_line > LOOKAHEAD {
                        continue;
                    }
                    let gap = to_line - STOP_LINE_MARGIN;
                    let required = measured_speed * measured_speed / (2.0 * to_line);
                    let must_stop = match zone.light_at(perceived_time) {
                        Some(LightState::Red) => required <= RED_GIVE_UP_DECEL,
                        Some(LightState::Amber) => {
                            if !self.amber_commit[i] && required > AMBER_COMMIT_DECEL {
                                self.amber_commit[i] = true;
                            }
                            !self.amber_commit[i]
                        }
                        _ => false,
                    };
                    if must_stop {
                        v_ref = v_ref.min(stopping_speed(gap.max(0.0), 0.0));
                    }
                }
            }
        }

        // obstacles in the driving corridor, perceived with the weather delay
        // the corridor follows the centerline; moving actors are swept along their
        // path until the ego could arrive
        let poses = actor_step(scenario, perceived_tick, tracker, params.dt);
        for (i, (actor, pose)) in scenario.actors.iter().zip(&poses).enumerate() {
            let ahead = pose.arc - arc;
            if ahead < -actor.radius || ahead > LOOKAHEAD {
                continue;
            }
            if actor
                .visible_within
                .is_some_and(|edge| pose.lateral.abs() > edge)
            {
                continue;
            }
            let arrival = ahead.max(0.0) / measured_speed.max(1.0) + PREDICTION_SLACK;
            let future = perceived_tick + (arrival / params.dt).ceil() as u64;
            let (_, future_lateral) = actor.frenet_at(future, tracker.triggered_at(i), params.dt);
            let (lo, hi) = (
                pose.lateral.min(future_lateral),
                pose.lateral.max(future_lateral),
            );
            let clearance = EGO_HALF_WIDTH + actor.radius + CORRIDOR_MARGIN;
            if hi <= -clearance || lo >= clearance {
                continue;
            }
            let gap = ahead - actor.radius - EGO_RADIUS - MIN_GAP;
            v_ref = v_ref.min(stopping_speed(gap.max(0.0), 0.0));
        }
        v_ref
    }
}

/// Stateless convenience wrapper around [`Planner::reference`] for a fresh
/// planner, e.g. at the first tick of a run.
pub fn reference_source(
    scenario: &Scenario,
    repetition: u32,
    ego: &VehicleState,
    tick: u64,
    tracker: &ActorTracker,
    params: &PlantParams,
) -> Reference {
    Planner::new(scenario).reference(scenario, repetition, ego, tick, tracker, params)
}

/// Highest speed from which `final_speed` is reachable within `distance` at
/// the planner deceleration.
fn stopping_speed(distance: f64, final_speed: f64) -> f64 {
    (final_speed * final_speed + 2.0 * PLANNER_DECEL * distance).sqrt()
}

/// Signed angle from the ego heading to the bearing of `target`, wrapped to
/// (-pi, pi]. Positive when the target lies to the right.
fn heading_to(from: Point, heading: f64, target: Point) -> f64 {
    let bearing = (target.1 - from.1).atan2(target.0 - from.0);
    wrap_angle(heading - bearing)
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Proportional speed rule standing in for the learned control branch.
fn scripted_control(v_ref: f64, measured_speed: f64, steer: f64) -> ControlAction {
    let e = v_ref - measured_speed;
    let (throttle, brake) = if e >= 0.0 {
        ((0.4 * e).clamp(0.0, 0.7), 0.0)
    } else {
        (0.0, (0.35 * -e - 0.1).clamp(0.0, 1.0))
    };
    ControlAction {
        throttle,
        brake,
        steer,
    }
}

fn town_schedule(rng: &mut impl Rng) -> LightSchedule {
    LightSchedule {
        cycle: 30.0,
        green: 14.0,
        amber: 3.0,
        offset: rng.random_range(0.0..30.0f64).round(),
    }
}

/// The four synthetic routes: two short town routes with T-junctions and
/// two longer city routes.
pub fn build_routes(seed: u64) -> Result<Vec<Route>> {
    let mut rng = NoiseKey::new(seed, usize::MAX, 0).rng(Stream::SuiteLayout, 0, 0);
    let origin = Point(0.0, 0.0);

    let town_left = RouteBuilder::new(origin, 0.0, 8.0)
        .straight(45.0)
        .zone(0.0, 6.0, ZoneKind::StopSign, None)
        .straight(12.0)
        .limit(4.5)
        .turn(12.0, 90.0)
        .limit(8.0)
        .straight(75.0)
        .build("R0", "town-t-junction-left")?;

    let town_right = RouteBuilder::new(origin, 0.0, 8.0)
        .straight(40.0)
        .zone(
            0.0,
            10.0,
            ZoneKind::TrafficLight,
            Some(town_schedule(&mut rng)),
        )
        .straight(10.0)
        .limit(4.5)
        .turn(12.0, -90.0)
        .limit(8.0)
        .straight(70.0)
        .limit(5.0)
        .turn(14.0, 90.0)
        .limit(8.0)
        .straight(45.0)
        .build("R1", "town-t-junction-right")?;

    let city_avenue = RouteBuilder::new(origin, 0.0, 11.0)
        .straight(110.0)
        .zone(
            0.0,
            14.0,
            ZoneKind::TrafficLight,
            Some(town_schedule(&mut rng)),
        )
        .straight(14.0)
        .turn(60.0, 30.0)
        .straight(70.0)
        .limit(5.0)
        .turn(13.0, 90.0)
        .limit(10.0)
        .straight(90.0)
        .build("R2", "city-avenue")?;

    let city_loop = RouteBuilder::new(origin, 0.0, 10.0)
        .straight(80.0)
        .limit(5.5)
        .turn(15.0, 90.0)
        .limit(10.0)
        .straight(60.0)
        .zone(
            0.0,
            12.0,
            ZoneKind::TrafficLight,
            Some(town_schedule(&mut rng)),
        )
        .straight(30.0)
        .limit(4.5)
        .turn(8.0, -90.0)
        .limit(10.0)
        .straight(90.0)
        .build("R3", "city-loop")?;

    Ok(vec![town_left, town_right, city_avenue, city_loop])
}

/// Lateral distance at which actors emerging from behind parked cars become
/// visible, meters.
const OCCLUSION_EDGE: f64 = 3.0;

/// How far ahead of the crossing point the ego is when the bicycle sets off, meters.
const BICYCLE_TRIGGER_AHEAD: f64 = 10.7;
/// Same for the vehicle crossing after the city avenue's left turn, meters.
const TURN_VEHICLE_TRIGGER_AHEAD: f64 = 12.7;

fn crossing(
    kind: ActorKind,
    label: &str,
    arc: f64,
    trigger_ahead: f64,
    speed: f64,
    radius: f64,
    visible_within: Option<f64>,
) -> ActorScript {
    ActorScript {
        kind,
        trigger: (arc - trigger_ahead).max(0.0),
        motion: ActorMotion::Crossing {
            arc,
            from_lateral: 4.5,
            to_lateral: -4.5,
            speed,
        },
        radius,
        label: label.to_string(),
        visible_within,
    }
}

/// Seconds allowed per run: generous enough for a 180 s blockage to be
/// detected before the route times out.
fn time_budget(route: &Route) -> f64 {
    (200.0 + route.length() / 2.0).round()
}

/// Builds the 16 scenarios `S0..S15` (route-major, weather-minor).
///
/// Fixed archetypes: a bicycle crossing on the second town route, a
/// crossing vehicle at the city avenue's left turn, a tight right turn on the
/// city loop (lane deviation), and an advertising board at the road edge in
/// `S7`. Additional traffic is drawn from `seed`.
pub fn build_suite(seed: u64) -> Result<Vec<Scenario>> {
    build_suite_with(seed, &Severities::default())
}

/// [`build_suite`] with custom weather severities.
pub fn build_suite_with(seed: u64, severities: &Severities) -> Result<Vec<Scenario>> {
    let routes = build_routes(seed)?;
    let mut suite = Vec::with_capacity(16);
    for (r, route) in routes.iter().enumerate() {
        for (w, &weather) in WeatherKind::ALL.iter().enumerate() {
            let index = r * 4 + w;
            let mut rng = NoiseKey::new(seed, index, 0).rng(Stream::SuiteLayout, 1, 0);
            let mut actors = Vec::new();
            let length = route.length();

            match r {
                1 => {
                    let arc = 95.0;
                    let ahead = BICYCLE_TRIGGER_AHEAD;
                    actors.push(crossing(
                        ActorKind::Bicycle,
                        "crossing-bicycle",
                        arc,
                        ahead,
                        3.0,
                        0.8,
                        Some(OCCLUSION_EDGE),
                    ));
                }
                2 => {
                    // crossing traffic right after the left turn
                    let arc = 208.0;
                    let ahead = TURN_VEHICLE_TRIGGER_AHEAD;
                    actors.push(crossing(
                        ActorKind::Vehicle,
                        "turn-crossing-vehicle",
                        arc,
                        ahead,
                        5.0,
                        1.5,
                        Some(OCCLUSION_EDGE),
                    ));
                }
                _ => {}
            }
            if index == 7 {
                actors.push(ActorScript {
                    kind: ActorKind::StaticObstacle,
                    trigger: 0.0,
                    motion: ActorMotion::Static {
                        arc: 150.0,
                        lateral: 2.0,
                    },
                    radius: 0.9,
                    label: "advertising-board".to_string(),
                    visible_within: None,
                });
            }

            // random pedestrian traffic
            if rng.random_bool(0.6) {
                let arc = rng.random_range(0.3..0.8f64) * length;
                let ahead = rng.random_range(15.0..30.0f64);
                let speed = rng.random_range(1.0..1.6f64);
                actors.push(crossing(
                    ActorKind::Pedestrian,
                    "pedestrian",
                    arc,
                    ahead,
                    speed,
                    0.4,
                    None,
                ));
            }
            // random slow lead vehicle that parks at the roadside end of its run
            if rng.random_bool(0.4) {
                let arc = rng.random_range(0.15..0.4f64) * length;
                let speed = rng.random_range(4.0..7.0f64);
                let stop_arc = arc + rng.random_range(20.0..50.0f64);
                actors.push(ActorScript {
                    kind: ActorKind::Vehicle,
                    trigger: (arc - 25.0).max(0.0),
                    motion: ActorMotion::Along {
                        arc,
                        lateral: 3.5,
                        speed,
                        stop_arc: stop_arc.min(length),
                    },
                    radius: 1.5,
                    label: "adjacent-lane-vehicle".to_string(),
                    visible_within: None,
                });
            }

            let scenario = Scenario {
                id: format!("S{index}"),
                index,
                route: route.clone(),
                weather: WeatherProfile::new(weather, severities.get(weather))?,
                actors,
                seed,
                time_budget: time_budget(route),
            };
            scenario.validate()?;
            suite.push(scenario);
        }
    }
    Ok(suite)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SuiteFile {
    format: String,
    version: u32,
    seed: u64,
    scenarios: Vec<Scenario>,
}

/// Writes a suite as a versioned JSON document.
pub fn export_suite(path: &Path, seed: u64, suite: &[Scenario]) -> Result<()> {
    let file = SuiteFile {
        format: SUITE_FORMAT.to_string(),
        version: SUITE_VERSION,
        seed,
        scenarios: suite.to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a suite written by [`export_suite`]. Returns `(seed, scenarios)`.
pub fn import_suite(path: &Path) -> Result<(u64, Vec<Scenario>)> {
    let text = std::fs::read_to_string(path)?;
    let file: SuiteFile = serde_json::from_str(&text)?;
    if file.format != SUITE_FORMAT {
        return Err(Error::Config(format!(
            "`{}` is not a suite file",
            path.display()
        )));
    }
    if file.version != SUITE_VERSION {
        return Err(Error::Version {
            what: "suite",
            found: file.version,
            expected: SUITE_VERSION,
        });
    }
    for scenario in &file.scenarios {
        scenario.validate()?;
    }
    Ok((file.seed, file.scenarios))
}
