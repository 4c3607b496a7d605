//! Longitudinal PID speed controller and the fixed lateral steering law.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Default length of the sliding error window used for the integral term.
pub const DEFAULT_WINDOW: usize = 20;

/// Lateral law constants: steer = clamp(-HEADING * heading - OFFSET * offset).
const LATERAL_HEADING_GAIN: f64 = 0.8;
const LATERAL_OFFSET_GAIN: f64 = 0.2;

/// The five tunable longitudinal parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Upper clamp on throttle, in (0, 1].
    pub max_throttle: f64,
    /// Brake when the reference drops below this fraction of the current speed.
    pub brake_speed: f64,
}

impl GainSet {
    pub const TCP_ORIGINAL: GainSet = GainSet {
        kp: 5.0,
        ki: 0.5,
        kd: 1.0,
        max_throttle: 0.75,
        brake_speed: 0.4,
    };

    pub const TCP_TUNED: GainSet = GainSet {
        kp: 11.0,
        ki: 0.1,
        kd: 1.0,
        max_throttle: 0.8,
        brake_speed: 0.45,
    };

    pub const PRESETS: [(&'static str, GainSet); 2] = [
        ("tcp-original", GainSet::TCP_ORIGINAL),
        ("tcp-tuned", GainSet::TCP_TUNED),
    ];

    pub fn preset(name: &str) -> Result<GainSet> {
        GainSet::PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| *g)
            .ok_or_else(|| Error::UnknownPreset(name.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for param in Param::ALL {
            ensure_finite(param.name(), self.get(param))?;
        }
        for param in [Param::Kp, Param::Ki, Param::Kd] {
            if self.get(param) < 0.0 {
                return Err(Error::invalid(param.name(), "must be non-negative"));
            }
        }
        if !(self.max_throttle > 0.0 && self.max_throttle <= 1.0) {
            return Err(Error::invalid("max_throttle", "must lie in (0, 1]"));
        }
        if !(self.brake_speed > 0.0 && self.brake_speed < 1.0) {
            return Err(Error::invalid("brake_speed", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn get(&self, param: Param) -> f64 {
        match param {
            Param::Kp => self.kp,
            Param::Ki => self.ki,
            Param::Kd => self.kd,
            Param::MaxThrottle => self.max_throttle,
            Param::BrakeSpeed => self.brake_speed,
        }
    }

    pub fn with(mut self, param: Param, value: f64) -> GainSet {
        match param {
            Param::Kp => self.kp = value,
            Param::Ki => self.ki = value,
            Param::Kd => self.kd = value,
            Param::MaxThrottle => self.max_throttle = value,
            Param::BrakeSpeed => self.brake_speed = value,
        }
        self
    }

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.kp,
            self.ki,
            self.kd,
            self.max_throttle,
            self.brake_speed,
        ]
    }

    pub fn from_array(values: [f64; 5]) -> GainSet {
        GainSet {
            kp: values[0],
            ki: values[1],
            kd: values[2],
            max_throttle: values[3],
            brake_speed: values[4],
        }
    }

    /// Name of the matching preset, if any.
    pub fn preset_name(&self) -> Option<&'static str> {
        GainSet::PRESETS
            .iter()
            .find(|(_, g)| g == self)
            .map(|(n, _)| *n)
    }
}

impl fmt::Display for GainSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kp={},ki={},kd={},max_throttle={},brake_speed={}",
            self.kp, self.ki, self.kd, self.max_throttle, self.brake_speed
        )
    }
}

/// Parses either a preset name or a `kp=..,ki=..` list. Missing keys in the
/// list fall back to the `tcp-original` values.
impl FromStr for GainSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<GainSet> {
        let s = s.trim();
        if !s.contains('=') {
            return GainSet::preset(s);
        }
        let mut gains = GainSet::TCP_ORIGINAL;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{part}`")))?;
            let param: Param = key.trim().parse()?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::invalid(param.name(), format!("`{}` is not a number", value.trim()))
            })?;
            gains = gains.with(param, value);
        }
        gains.validate()?;
        Ok(gains)
    }
}

/// Coordinates of a [`GainSet`], in the fixed search order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Kp,
    Ki,
    Kd,
    MaxThrottle,
    BrakeSpeed,
}

impl Param {
    pub const ALL: [Param; 5] = [
        Param::Kp,
        Param::Ki,
        Param::Kd,
        Param::MaxThrottle,
        Param::BrakeSpeed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Kp => "kp",
            Param::Ki => "ki",
            Param::Kd => "kd",
            Param::MaxThrottle => "max_throttle",
            Param::BrakeSpeed => "brake_speed",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Param> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gain parameter `{s}`")))
    }
}

/// Controller memory: a bounded window of recent speed errors plus the
/// previous error for the derivative term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    window: VecDeque<f64>,
    prev_error: f64,
    capacity: usize,
}

impl Default for PidState {
    fn default() -> Self {
        PidState::new(DEFAULT_WINDOW)
    }
}

impl PidState {
    pub fn new(capacity: usize) -> PidState {
        let capacity = capacity.max(1);
        PidState {
            window: VecDeque::with_capacity(capacity),
            prev_error: 0.0,
            capacity,
        }
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn prev_error(&self) -> f64 {
        self.prev_error
    }

    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.window.iter().copied()
    }

    fn push(&mut self, error: f64) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(error);
    }

    fn mean(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().sum::<f64>() / self.window.len() as f64
        }
    }
}

/// Empties the error window and zeroes the previous error.
pub fn reset(pid: PidState) -> PidState {
    PidState::new(pid.capacity)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LongitudinalCommand {
    pub throttle: f64,
    pub brake: f64,
}

/// Final actuation command. Throttle and brake are never both non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlAction {
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
}

impl ControlAction {
    pub fn new(longitudinal: LongitudinalCommand, steer: f64) -> ControlAction {
        ControlAction {
            throttle: longitudinal.throttle,
            brake: longitudinal.brake,
            steer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("throttle", self.throttle)?;
        ensure_finite("brake", self.brake)?;
        ensure_finite("steer", self.steer)?;
        if !(0.0..=1.0).contains(&self.throttle) {
            return Err(Error::invalid("throttle", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.brake) {
            return Err(Error::invalid("brake", "must lie in [0, 1]"));
        }
        if !(-1.0..=1.0).contains(&self.steer) {
            return Err(Error::invalid("steer", "must lie in [-1, 1]"));
        }
        if self.throttle > 0.0 && self.brake > 0.0 {
            return Err(Error::invalid(
                "throttle",
                "throttle and brake are mutually exclusive",
            ));
        }
        Ok(())
    }
}

/// One controller update.
///
/// `e = v_ref - v`; `u = kp*e + ki*mean(window with e) + kd*(e - prev_e)`;
/// throttle is `u` clamped to `[0, max_throttle]`. Braking is bang-bang and
/// fires when `v_ref < brake_speed * v`, which forces throttle to zero.
pub fn longitudinal_step(
    gains: &GainSet,
    mut pid: PidState,
    v_ref: f64,
    v: f64,
) -> Result<(LongitudinalCommand, PidState)> {
    ensure_finite("v_ref", v_ref)?;
    ensure_finite("v", v)?;
    if v_ref < 0.0 {
        return Err(Error::invalid("v_ref", "must be non-negative"));
    }
    if v < 0.0 {
        return Err(Error::invalid("v", "must be non-negative"));
    }

    let error = v_ref - v;
    pid.push(error);
    let u = gains.kp * error + gains.ki * pid.mean() + gains.kd * (error - pid.prev_error);
    pid.prev_error = error;

    let brake = if v_ref < gains.brake_speed * v {
        1.0
    } else {
        0.0
    };
    let throttle = if brake > 0.0 {
        0.0
    } else {
        u.clamp(0.0, gains.max_throttle)
    };
    Ok((LongitudinalCommand { throttle, brake }, pid))
}

/// Fixed lateral law: `steer = clamp(-0.8*heading_error - 0.2*lateral_offset, -1, 1)`.
pub fn lateral_step(heading_error: f64, lateral_offset: f64) -> Result<f64> {
    ensure_finite("heading_error", heading_error)?;
    ensure_finite("lateral_offset", lateral_offset)?;
    let steer = -LATERAL_HEADING_GAIN * heading_error - LATERAL_OFFSET_GAIN * lateral_offset;
    // -0.0 would serialize differently from 0.0
    Ok(steer.clamp(-1.0, 1.0) + 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_error_gives_zero_command() {
        let (cmd, pid) =
            longitudinal_step(&GainSet::TCP_ORIGINAL, PidState::default(), 7.0, 7.0).unwrap();
        assert_eq!(cmd.throttle, 0.0);
        assert_eq!(cmd.brake, 0.0);
        assert_eq!(pid.window_len(), 1);
    }

    #[test]
    fn brake_threshold_uses_ratio() {
        let (cmd, _) =
            longitudinal_step(&GainSet::TCP_ORIGINAL, PidState::default(), 3.9, 10.0).unwrap();
        assert_eq!(cmd.brake, 1.0);
        assert_eq!(cmd.throttle, 0.0);
        // exactly at the threshold there is no braking
        let (cmd, _) =
            longitudinal_step(&GainSet::TCP_ORIGINAL, PidState::default(), 4.0, 10.0).unwrap();
        assert_eq!(cmd.brake, 0.0);
    }

    #[test]
    fn throttle_clamps_at_max() {
        // u = 11*1 + 0.1*1 + 1*(1 - 0) = 12.1
        let (cmd, pid) =
            longitudinal_step(&GainSet::TCP_TUNED, PidState::default(), 6.0, 5.0).unwrap();
        assert_eq!(cmd.throttle, 0.8);
        assert_eq!(cmd.brake, 0.0);
        assert_eq!(pid.prev_error(), 1.0);
    }

    #[test]
    fn unclamped_output_matches_formula() {
        let gains = GainSet {
            kp: 0.1,
            ki: 0.05,
            kd: 0.2,
            max_throttle: 1.0,
            brake_speed: 0.4,
        };
        let (_, pid) = longitudinal_step(&gains, PidState::default(), 2.0, 1.0).unwrap();
        let (cmd, _) = longitudinal_step(&gains, pid, 2.0, 1.5).unwrap();
        // e = 0.5, mean = 0.75, de = -0.5
        let expected: f64 = 0.1 * 0.5 + 0.05 * 0.75 + 0.2 * -0.5;
        assert!((cmd.throttle - expected.max(0.0)).abs() < 1e-15);
    }

    #[test]
    fn window_evicts_oldest() {
        let mut pid = PidState::new(3);
        for e in [1.0, 2.0, 3.0, 4.0] {
            pid = longitudinal_step(&GainSet::TCP_ORIGINAL, pid, 10.0, 10.0 - e)
                .unwrap()
                .1;
        }
        assert_eq!(pid.errors().collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn reset_clears_state() {
        let mut pid = PidState::default();
        for _ in 0..30 {
            pid = longitudinal_step(&GainSet::TCP_ORIGINAL, pid, 10.0, 3.0)
                .unwrap()
                .1;
        }
        assert_eq!(pid.window_len(), DEFAULT_WINDOW);
        let cleared = reset(pid);
        assert_eq!(cleared.window_len(), 0);
        assert_eq!(cleared.prev_error(), 0.0);
        assert_eq!(reset(cleared.clone()), cleared);
        let (cmd, _) = longitudinal_step(&GainSet::TCP_ORIGINAL, cleared, 5.0, 5.0).unwrap();
        assert_eq!(cmd.throttle, 0.0);
    }

    #[test]
    fn rejects_bad_speeds() {
        let err = longitudinal_step(&GainSet::TCP_ORIGINAL, PidState::default(), f64::NAN, 1.0)
            .unwrap_err();
        assert!(err.to_string().contains("v_ref"));
        let err = longitudinal_step(
            &GainSet::TCP_ORIGINAL,
            PidState::default(),
            1.0,
            f64::INFINITY,
        )
        .unwrap_err();
        assert!(err.to_string().contains("`v`"));
    }

    #[test]
    fn lateral_law() {
        assert_eq!(lateral_step(0.0, 0.0).unwrap(), 0.0);
        assert!((lateral_step(0.1, 0.0).unwrap() + 0.08).abs() < 1e-15);
        assert_eq!(lateral_step(10.0, 10.0).unwrap(), -1.0);
        assert_eq!(lateral_step(-10.0, -10.0).unwrap(), 1.0);
        assert!(lateral_step(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn presets_and_parsing() {
        assert_eq!(
            GainSet::preset("tcp-original").unwrap().to_array(),
            [5.0, 0.5, 1.0, 0.75, 0.4]
        );
        assert_eq!(
            GainSet::preset("tcp-tuned").unwrap().to_array(),
            [11.0, 0.1, 1.0, 0.8, 0.45]
        );
        assert!(matches!(
            GainSet::preset("nope"),
            Err(Error::UnknownPreset(_))
        ));
        let g: GainSet = "kp=11, ki=0.1".parse().unwrap();
        assert_eq!(g.kp, 11.0);
        assert_eq!(g.ki, 0.1);
        assert_eq!(g.max_throttle, 0.75);
        assert!("kp=-1".parse::<GainSet>().is_err());
        assert!("max_throttle=1.5".parse::<GainSet>().is_err());
        assert!("kq=1".parse::<GainSet>().is_err());
        let round: GainSet = GainSet::TCP_TUNED.to_string().parse().unwrap();
        assert_eq!(round, GainSet::TCP_TUNED);
    }

    #[test]
    fn gain_validation() {
        GainSet::TCP_ORIGINAL.validate().unwrap();
        GainSet::TCP_TUNED.validate().unwrap();
        assert!(GainSet {
            brake_speed: 1.0,
            ..GainSet::TCP_ORIGINAL
        }
        .validate()
        .is_err());
        assert!(GainSet {
            max_throttle: 0.0,
            ..GainSet::TCP_ORIGINAL
        }
        .validate()
        .is_err());
        assert!(GainSet {
            kd: f64::NAN,
            ..GainSet::TCP_ORIGINAL
        }
        .validate()
        .is_err());
    }

    fn gains_strategy() -> impl Strategy<Value = GainSet> {
        (
            0.0..20.0f64,
            0.0..2.0f64,
            0.0..5.0f64,
            0.05..=1.0f64,
            0.05..0.95f64,
        )
            .prop_map(|(kp, ki, kd, mt, bs)| GainSet {
                kp,
                ki,
                kd,
                max_throttle: mt,
                brake_speed: bs,
            })
    }

    proptest! {
        #[test]
        fn throttle_and_brake_exclusive(
            gains in gains_strategy(),
            refs in proptest::collection::vec((0.0..30.0f64, 0.0..30.0f64), 1..40),
        ) {
            let mut pid = PidState::default();
            for (v_ref, v) in refs {
                let (cmd, next) = longitudinal_step(&gains, pid, v_ref, v).unwrap();
                prop_assert!(cmd.throttle == 0.0 || cmd.brake == 0.0);
                prop_assert!((0.0..=gains.max_throttle).contains(&cmd.throttle));
                prop_assert!(cmd.brake == 0.0 || cmd.brake == 1.0);
                pid = next;
            }
        }

        #[test]
        fn throttle_monotone_in_kp(gains in gains_strategy(), v in 0.0..20.0f64, e in 0.001..10.0f64, dk in 0.0..10.0f64) {
            let lo = GainSet { kp: gains.kp, ..gains };
            let hi = GainSet { kp: gains.kp + dk, ..gains };
            let (a, _) = longitudinal_step(&lo, PidState::default(), v + e, v).unwrap();
            let (b, _) = longitudinal_step(&hi, PidState::default(), v + e, v).unwrap();
            prop_assert!(b.throttle >= a.throttle);
        }

        #[test]
        fn integral_term_is_bounded(
            ki in 0.0..2.0f64,
            errors in proptest::collection::vec(-15.0..15.0f64, 1..80),
        ) {
            let mut pid = PidState::default();
            for e in errors {
                pid.push(e);
                let max_abs = pid.errors().map(f64::abs).fold(0.0, f64::max);
                prop_assert!((ki * pid.mean()).abs() <= ki * max_abs + 1e-12);
                prop_assert!(pid.window_len() <= DEFAULT_WINDOW);
            }
        }

        #[test]
        fn steer_in_range(h in -100.0..100.0f64, y in -100.0..100.0f64) {
            let s = lateral_step(h, y).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
