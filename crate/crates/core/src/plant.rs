//! Fixed-step point-mass vehicle model.
//!
//! The vehicle lives in route (Frenet) coordinates: distance along the
//! centerline, signed lateral offset (left positive) and heading relative to
//! the centerline tangent. Longitudinal motion follows
//!
//! ```text
//! v' = max(0, v + dt * (accel_gain * throttle * (1 - v / top_speed)
//!                       - brake_gain * brake - drag_coeff * v^2 - rolling_resist))
//! ```
//!
//! and the pose advances with the post-step speed. There is no reverse gear.

use serde::{Deserialize, Serialize};

use crate::control::ControlAction;
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Seconds since the start of the run.
    pub time: f64,
    /// Meters along the route centerline.
    pub arc_position: f64,
    /// Signed distance from the centerline in meters, left positive.
    pub lateral_offset: f64,
    /// Meters per second, never negative.
    pub speed: f64,
    /// Heading relative to the centerline tangent, radians.
    pub heading_error: f64,
    pub last_throttle: f64,
    pub last_brake: f64,
    pub last_steer: f64,
}

impl VehicleState {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("time", self.time)?;
        ensure_finite("arc_position", self.arc_position)?;
        ensure_finite("lateral_offset", self.lateral_offset)?;
        ensure_finite("speed", self.speed)?;
        ensure_finite("heading_error", self.heading_error)?;
        ensure_finite("last_throttle", self.last_throttle)?;
        ensure_finite("last_brake", self.last_brake)?;
        ensure_finite("last_steer", self.last_steer)?;
        if self.speed < 0.0 {
            return Err(Error::invalid("speed", "must be non-negative"));
        }
        ControlAction {
            throttle: self.last_throttle,
            brake: self.last_brake,
            steer: self.last_steer,
        }
        .validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    /// Seconds per tick.
    pub dt: f64,
    /// m/s² at full throttle from standstill.
    pub accel_gain: f64,
    /// m/s² at full brake.
    pub brake_gain: f64,
    /// Quadratic drag, 1/m.
    pub drag_coeff: f64,
    /// Constant deceleration while moving, m/s².
    pub rolling_resist: f64,
    /// Speed at which throttle authority vanishes, m/s.
    pub top_speed: f64,
    /// Heading rate at full steer, rad/s.
    pub steer_gain: f64,
    /// Lane half width in meters; beyond it the vehicle is off the road.
    pub lane_half_width: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        default_params()
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("dt", self.dt),
            ("accel_gain", self.accel_gain),
            ("brake_gain", self.brake_gain),
            ("drag_coeff", self.drag_coeff),
            ("rolling_resist", self.rolling_resist),
            ("top_speed", self.top_speed),
            ("steer_gain", self.steer_gain),
            ("lane_half_width", self.lane_half_width),
        ];
        for (field, value) in fields {
            ensure_finite(field, value)?;
        }
        for (field, value) in [
            ("dt", self.dt),
            ("accel_gain", self.accel_gain),
            ("brake_gain", self.brake_gain),
            ("top_speed", self.top_speed),
            ("lane_half_width", self.lane_half_width),
        ] {
            if value <= 0.0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        for (field, value) in [
            ("drag_coeff", self.drag_coeff),
            ("rolling_resist", self.rolling_resist),
            ("steer_gain", self.steer_gain),
        ] {
            if value < 0.0 {
                return Err(Error::invalid(field, "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// The frozen reference plant (20 Hz tick).
pub fn default_params() -> PlantParams {
    PlantParams {
        dt: 0.05,
        accel_gain: 4.0,
        brake_gain: 8.0,
        drag_coeff: 0.0015,
        rolling_resist: 0.1,
        top_speed: 30.0,
        steer_gain: 0.8,
        lane_half_width: 1.75,
    }
}

/// Advances the vehicle by one tick. Pure: identical inputs give
/// bit-identical outputs.
pub fn step(
    state: &VehicleState,
    action: &ControlAction,
    params: &PlantParams,
) -> Result<VehicleState> {
    state.validate()?;
    action.validate()?;
    params.validate()?;

    let v = state.speed;
    let accel = params.accel_gain * action.throttle * (1.0 - v / params.top_speed)
        - params.brake_gain * action.brake
        - params.drag_coeff * v * v
        - params.rolling_resist;
    let speed = (v + params.dt * accel).max(0.0);
    let (sin_h, cos_h) = state.heading_error.sin_cos();

    Ok(VehicleState {
        time: state.time + params.dt,
        arc_position: state.arc_position + params.dt * speed * cos_h,
        lateral_offset: state.lateral_offset + params.dt * speed * sin_h,
        speed,
        heading_error: state.heading_error + params.dt * params.steer_gain * action.steer,
        last_throttle: action.throttle,
        last_brake: action.brake,
        last_steer: action.steer,
    })
}
