//! Deterministic longitudinal driving simulation, leaderboard-style scoring
//! and derivative-free PID gain tuning.
//!
//! The crate is organised bottom-up:
//!
//! - [`plant`]: point-mass vehicle model in route coordinates;
//! - [`control`]: windowed PID speed controller and lateral law;
//! - [`fusion`]: situation-based blending of two action sources;
//! - [`route`] and [`scenario`]: synthetic routes, weather, scripted actors
//!   and the scripted reference source;
//! - [`scoring`]: infraction/shutdown detection and the driving score;
//! - [`sim`] and [`trace`]: the closed loop and its persisted traces;
//! - [`suite`]: running whole suites, serially or on a worker pool;
//! - [`tuner`]: grid search and coordinate descent over gain sets;
//! - [`config`] and [`wire`]: configuration file and service messages.

pub mod config;
pub mod control;
pub mod error;
pub mod fusion;
pub mod noise;
pub mod plant;
pub mod route;
pub mod scenario;
pub mod scoring;
pub mod sim;
pub mod suite;
pub mod trace;
pub mod tuner;
pub mod wire;

pub use control::{ControlAction, GainSet, PidState};
pub use error::{Error, Result};
pub use plant::{PlantParams, VehicleState};
pub use scenario::Scenario;
pub use scoring::{RunResult, ScoreCard};
pub use sim::{simulate_run, RunSettings, Simulation};
