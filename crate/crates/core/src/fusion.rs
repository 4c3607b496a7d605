//! Situation-based blending of the trajectory-branch and control-branch
//! actions.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::control::ControlAction;
use crate::error::{ensure_finite, Error, Result};

/// Default steering history length: 2 s at 20 Hz.
pub const DEFAULT_HISTORY: usize = 40;

/// Steering magnitude above which a tick counts as "turning".
pub const TURNING_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Situation {
    ControlSpecialized,
    TrajectorySpecialized,
}

impl Situation {
    pub fn label(self) -> &'static str {
        match self {
            Situation::ControlSpecialized => "control",
            Situation::TrajectorySpecialized => "trajectory",
        }
    }

    pub fn swapped(self) -> Situation {
        match self {
            Situation::ControlSpecialized => Situation::TrajectorySpecialized,
            Situation::TrajectorySpecialized => Situation::ControlSpecialized,
        }
    }
}

/// Bounded history of recent steering magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationWindow {
    history: VecDeque<f64>,
    capacity: usize,
}

impl Default for SituationWindow {
    fn default() -> Self {
        SituationWindow::new(DEFAULT_HISTORY)
    }
}

impl SituationWindow {
    pub fn new(capacity: usize) -> SituationWindow {
        let capacity = capacity.max(1);
        SituationWindow {
            history: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Builds a window holding exactly `magnitudes` (most recent last).
    pub fn from_magnitudes(magnitudes: &[f64]) -> SituationWindow {
        let mut window = SituationWindow::new(magnitudes.len());
        for &m in magnitudes {
            window.push(m);
        }
        window
    }

    /// Records a steering command; only its magnitude (clamped to [0, 1]) is kept.
    pub fn push(&mut self, steer: f64) {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        let magnitude = if steer.is_finite() {
            steer.abs().min(1.0)
        } else {
            1.0
        };
        self.history.push_back(magnitude);
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Control-specialized iff strictly more than half of the recorded steering
/// magnitudes exceed [`TURNING_THRESHOLD`].
pub fn detect_situation(window: &SituationWindow) -> Situation {
    if window.is_empty() {
        tracing::debug!("empty steering history, defaulting to trajectory-specialized");
        return Situation::TrajectorySpecialized;
    }
    let turning = window
        .history
        .iter()
        .filter(|&&m| m > TURNING_THRESHOLD)
        .count();
    if 2 * turning > window.len() {
        Situation::ControlSpecialized
    } else {
        Situation::TrajectorySpecialized
    }
}

/// Blending weight, restricted to [0, 0.5].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FusionWeight(f64);

impl FusionWeight {
    pub const HALF: FusionWeight = FusionWeight(0.5);

    pub fn new(alpha: f64) -> Result<FusionWeight> {
        ensure_finite("alpha", alpha)?;
        if !(0.0..=0.5).contains(&alpha) {
            return Err(Error::invalid("alpha", "must lie in [0, 0.5]"));
        }
        Ok(FusionWeight(alpha))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for FusionWeight {
    fn default() -> Self {
        FusionWeight::HALF
    }
}

impl TryFrom<f64> for FusionWeight {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        FusionWeight::new(value)
    }
}

impl From<FusionWeight> for f64 {
    fn from(w: FusionWeight) -> f64 {
        w.0
    }
}

/// Blends the two branch actions componentwise.
///
/// Control-specialized: `a = alpha*a_ctl + (1-alpha)*a_traj`.
/// Trajectory-specialized: `a = alpha*a_traj + (1-alpha)*a_ctl`.
/// Afterwards the smaller of throttle and brake is zeroed (ties zero the
/// throttle).
pub fn fuse(
    situation: Situation,
    a_traj: &ControlAction,
    a_ctl: &ControlAction,
    w: FusionWeight,
) -> ControlAction {
    let alpha = w.get();
    let (primary, secondary) = match situation {
        Situation::ControlSpecialized => (a_ctl, a_traj),
        Situation::TrajectorySpecialized => (a_traj, a_ctl),
    };
    let blend = |p: f64, s: f64| alpha * p + (1.0 - alpha) * s;
    let mut out = ControlAction {
        throttle: blend(primary.throttle, secondary.throttle),
        brake: blend(primary.brake, secondary.brake),
        steer: blend(primary.steer, secondary.steer),
    };
    if out.throttle > 0.0 && out.brake > 0.0 {
        if out.throttle > out.brake {
            out.brake = 0.0;
        } else {
            out.throttle = 0.0;
        }
    }
    out
}
