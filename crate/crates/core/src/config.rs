//! The TOML configuration file.
//!
//! Every field is optional; omitted fields take the defaults below.
//!
//! ```toml
//! gains = "tcp-original"       # preset name, or an inline table
//! # gains = { kp = 11.0, ki = 0.1, kd = 1.0, max_throttle = 0.8, brake_speed = 0.45 }
//! suite_seed = 7
//! repetitions = 3
//! output_dir = "out"
//! tick_cap = 72000
//! workers = 1
//! pid_window = 20
//!
//! [fusion]
//! alpha = 0.5
//! history = 40
//!
//! [plant]
//! dt = 0.05
//! accel_gain = 4.0
//!
//! [weather]
//! hard_rain_night = 1.0
//!
//! [tuner]
//! grid_budget = 512
//! max_rounds = 10
//!
//! [service]
//! bind = "127.0.0.1:8787"
//! max_sessions = 8
//! speedup = 1.0                # simulated seconds per wall second; 0 = unthrottled
//! ```
//!
//! The environment variable [`OUTPUT_DIR_ENV`] overrides `output_dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{GainSet, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::fusion::{FusionWeight, DEFAULT_HISTORY};
use crate::plant::PlantParams;
use crate::scenario::{build_suite_with, Scenario, Severities};
use crate::sim::{RunSettings, DEFAULT_TICK_CAP};

pub const OUTPUT_DIR_ENV: &str = "DRIVETUNE_OUTPUT_DIR";
pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_REPETITIONS: u32 = 3;

/// A preset name or explicit gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Preset(String),
    Explicit(GainSet),
}

impl GainSpec {
    pub fn resolve(&self) -> Result<GainSet> {
        let gains = match self {
            GainSpec::Preset(name) => name.parse()?,
            GainSpec::Explicit(g) => *g,
        };
        gains.validate()?;
        Ok(gains)
    }
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec::Preset("tcp-original".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub alpha: FusionWeight,
    pub history: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha: FusionWeight::HALF,
            history: DEFAULT_HISTORY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    /// Largest grid that grid search accepts.
    pub grid_budget: usize,
    /// Round limit for coordinate descent.
    pub max_rounds: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            grid_budget: 512,
            max_rounds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub max_sessions: usize,
    /// Pace of session runs relative to wall time; 0 runs them unthrottled.
    pub speedup: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8787".into(),
            max_sessions: 8,
            speedup: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub gains: GainSpec,
    pub suite_seed: u64,
    pub repetitions: u32,
    pub output_dir: PathBuf,
    pub tick_cap: u64,
    pub workers: usize,
    pub pid_window: usize,
    pub fusion: FusionConfig,
    pub plant: PlantParams,
    pub weather: Severities,
    pub tuner: TunerConfig,
    pub service: ServiceConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            gains: GainSpec::default(),
            suite_seed: DEFAULT_SEED,
            repetitions: DEFAULT_REPETITIONS,
            output_dir: PathBuf::from("out"),
            tick_cap: DEFAULT_TICK_CAP,
            workers: 1,
            pid_window: DEFAULT_WINDOW,
            fusion: FusionConfig::default(),
            plant: PlantParams::default(),
            weather: Severities::default(),
            tuner: TunerConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<SimConfig> {
        let config: SimConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read `{}`: {e}", path.display())))?;
        SimConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies the output directory override from the environment, if set.
    pub fn apply_env(&mut self) {
        self.apply_env_value(std::env::var_os(OUTPUT_DIR_ENV));
    }

    fn apply_env_value(&mut self, value: Option<std::ffi::OsString>) {
        if let Some(dir) = value.filter(|v| !v.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gains.resolve()?;
        self.run_settings().validate()?;
        self.weather.validate()?;
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions", "must be positive"));
        }
        if self.tuner.max_rounds == 0 {
            return Err(Error::invalid("max_rounds", "must be positive"));
        }
        if self.service.max_sessions == 0 {
            return Err(Error::invalid("max_sessions", "must be positive"));
        }
        if !(self.service.speedup >= 0.0 && self.service.speedup.is_finite()) {
            return Err(Error::invalid("speedup", "must be a non-negative number"));
        }
        Ok(())
    }

    pub fn gain_set(&self) -> Result<GainSet> {
        self.gains.resolve()
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            plant: self.plant,
            alpha: self.fusion.alpha,
            history: self.fusion.history,
            pid_window: self.pid_window,
            tick_cap: self.tick_cap,
        }
    }

    pub fn suite(&self) -> Result<Vec<Scenario>> {
        build_suite_with(self.suite_seed, &self.weather)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = SimConfig::from_toml("").unwrap();
        assert_eq!(c, SimConfig::default());
        assert_eq!(c.gain_set().unwrap(), GainSet::TCP_ORIGINAL);
        assert_eq!(c.run_settings(), RunSettings::default());
    }

    #[test]
    fn preset_and_explicit_gains() {
        let c = SimConfig::from_toml("gains = \"tcp-tuned\"").unwrap();
        assert_eq!(c.gain_set().unwrap(), GainSet::TCP_TUNED);
        let c = SimConfig::from_toml(
            "gains = { kp = 6.0, ki = 0.2, kd = 0.5, max_throttle = 0.7, brake_speed = 0.5 }",
        )
        .unwrap();
        assert_eq!(c.gain_set().unwrap().kp, 6.0);
    }

    #[test]
    fn partial_tables() {
        let c = SimConfig::from_toml(
            "[plant]\ndt = 0.1\n[fusion]\nalpha = 0.25\n[weather]\nhard_rain_night = 0.8",
        )
        .unwrap();
        assert_eq!(c.plant.dt, 0.1);
        assert_eq!(c.plant.accel_gain, 4.0);
        assert_eq!(c.fusion.alpha.get(), 0.25);
        assert_eq!(c.fusion.history, 40);
        assert_eq!(c.weather.hard_rain_night, 0.8);
        assert_eq!(c.weather.soft_rain_dawn, 0.5);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "gains = \"fast\"",
            "tick_cap = 0",
            "repetitions = 0",
            "[fusion]\nalpha = 0.7",
            "[weather]\nclear_noon = 2.0",
            "unknown_key = 1",
            "suite_seed = \"x\"",
            "[service]\nspeedup = -1.0",
        ] {
            let err = SimConfig::from_toml(text).unwrap_err();
            assert!(err.is_config_error(), "{text}: {err}");
        }
    }

    #[test]
    fn round_trip_through_toml() {
        let c = SimConfig {
            gains: GainSpec::Explicit(GainSet::TCP_TUNED),
            workers: 4,
            ..SimConfig::default()
        };
        let back = SimConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn env_override() {
        let mut c = SimConfig::default();
        c.apply_env_value(Some("elsewhere".into()));
        assert_eq!(c.output_dir, PathBuf::from("elsewhere"));
        c.apply_env_value(Some("".into()));
        assert_eq!(c.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn severities_reach_the_suite() {
        let mut c = SimConfig::default();
        c.weather.hard_rain_night = 0.5;
        let suite = c.suite().unwrap();
        assert_eq!(suite[3].weather.detection_delay, 5);
    }
}
