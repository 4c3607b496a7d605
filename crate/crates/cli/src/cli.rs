//! Command-line front end.
//!
//! Exit status: 0 on success, 1 for usage and configuration errors, 2 for
//! internal failures (including trace checksum and replay mismatches).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use drivetune::config::{GainSpec, SimConfig};
use drivetune::control::Param;
use drivetune::fusion::FusionWeight;
use drivetune::suite::{
    replay, trace_file_name, ComparedRun, Comparison, ResultsFile, SuitePlan, TRACES_DIR,
};
use drivetune::tuner::{
    coordinate_descent, grid_search, load_log, Grid, Memo, SearchSpace, SuiteObjective,
};
use drivetune::{simulate_run, Error, GainSet};

pub const TUNE_REPORT_FILE: &str = "tune.jsonl";
pub const TUNE_PROGRESS_FILE: &str = "tune_progress.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "drivetune",
    version,
    about = "Driving simulation, scoring and PID gain tuning"
)]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write its trace
    Run {
        #[arg(long, default_value = "S0")]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        repetition: u32,
        /// Print the result as JSON
        #[arg(long)]
        json: bool,
    },
    /// Run the whole suite; writes results, scorecard, chart data and traces
    Suite,
    /// Search for gains that raise the suite driving score
    Tune {
        #[arg(long, value_enum, default_value_t = TuneMethod::Descent)]
        method: TuneMethod,
        /// Grid axis, e.g. `kp=5,8,11`; parameters without an axis stay at --gains
        #[arg(long = "axis", value_name = "PARAM=V1,V2,..")]
        axes: Vec<String>,
        /// Earlier tuning log whose evaluations are reused
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score two gain sets (presets, `k=v` lists or results files) side by side
    Compare { a: String, b: String },
    /// Start the dashboard service
    Serve,
    /// Re-score a persisted trace and check it against its recorded result
    Replay { trace: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TuneMethod {
    Grid,
    Descent,
}

/// Every configuration field, as a flag. Flags override the file and the
/// environment.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Configuration file (TOML)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Preset name or `kp=..,ki=..,kd=..,max_throttle=..,brake_speed=..`
    #[arg(long, global = true)]
    pub gains: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub repetitions: Option<u32>,
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tick_cap: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub pid_window: Option<usize>,

    #[arg(long, global = true, help_heading = "Fusion")]
    pub alpha: Option<f64>,
    #[arg(long, global = true, help_heading = "Fusion")]
    pub history: Option<usize>,

    #[arg(long, global = true, help_heading = "Plant")]
    pub dt: Option<f64>,
    #[arg(long, global = true, help_heading = "Plant")]
    pub accel_gain: Option<f64>,
    #[arg(long, global = true, help_heading = "Plant")]
    pub brake_gain: Option<f64>,
    #[arg(long, global = true, help_heading = "Plant")]
    pub drag_coeff: Option<f64>,
    #[arg(long, global = true, help_heading = "Plant")]
    pub rolling_resist: Option<f64>,
    #[arg(long, global = true, help_heading = "Plant")]
    pub top_speed: Option<f64>,
    #[arg(long, global = true, help_heading = "Plant")]
    pub steer_gain: Option<f64>,
    #[arg(long, global = true, help_heading = "Plant")]
    pub lane_half_width: Option<f64>,

    #[arg(long, global = true, help_heading = "Weather severity")]
    pub clear_noon: Option<f64>,
    #[arg(long, global = true, help_heading = "Weather severity")]
    pub cloudy_sunset: Option<f64>,
    #[arg(long, global = true, help_heading = "Weather severity")]
    pub soft_rain_dawn: Option<f64>,
    #[arg(long, global = true, help_heading = "Weather severity")]
    pub hard_rain_night: Option<f64>,

    #[arg(long, global = true, help_heading = "Tuner")]
    pub grid_budget: Option<usize>,
    #[arg(long, global = true, help_heading = "Tuner")]
    pub max_rounds: Option<usize>,

    #[arg(long, global = true, help_heading = "Service")]
    pub bind: Option<String>,
    #[arg(long, global = true, help_heading = "Service")]
    pub max_sessions: Option<usize>,
    #[arg(long, global = true, help_heading = "Service")]
    pub speedup: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ConfigArgs {
    /// Defaults, then the file, then the environment, then flags.
    pub fn resolve(&self) -> drivetune::Result<SimConfig> {
        let mut c = match &self.config {
            Some(path) => SimConfig::load(path)?,
            None => SimConfig::default(),
        };
        c.apply_env();
        if let Some(g) = &self.gains {
            c.gains = GainSpec::Preset(g.clone());
        }
        set(&mut c.suite_seed, self.seed);
        set(&mut c.repetitions, self.repetitions);
        set(&mut c.output_dir, self.output_dir.clone());
        set(&mut c.tick_cap, self.tick_cap);
        set(&mut c.workers, self.workers);
        set(&mut c.pid_window, self.pid_window);
        if let Some(a) = self.alpha {
            c.fusion.alpha = FusionWeight::new(a)?;
        }
        set(&mut c.fusion.history, self.history);
        let p = &mut c.plant;
        set(&mut p.dt, self.dt);
        set(&mut p.accel_gain, self.accel_gain);
        set(&mut p.brake_gain, self.brake_gain);
        set(&mut p.drag_coeff, self.drag_coeff);
        set(&mut p.rolling_resist, self.rolling_resist);
        set(&mut p.top_speed, self.top_speed);
        set(&mut p.steer_gain, self.steer_gain);
        set(&mut p.lane_half_width, self.lane_half_width);
        let w = &mut c.weather;
        set(&mut w.clear_noon, self.clear_noon);
        set(&mut w.cloudy_sunset, self.cloudy_sunset);
        set(&mut w.soft_rain_dawn, self.soft_rain_dawn);
        set(&mut w.hard_rain_night, self.hard_rain_night);
        set(&mut c.tuner.grid_budget, self.grid_budget);
        set(&mut c.tuner.max_rounds, self.max_rounds);
        set(&mut c.service.bind, self.bind.clone());
        set(&mut c.service.max_sessions, self.max_sessions);
        set(&mut c.service.speedup, self.speedup);
        c.validate()?;
        Ok(c)
    }
}

/// Parses `argv` and runs the command. Returns the process exit status.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_config_error() => 1,
        _ => 2,
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let config = cli.config.resolve()?;
    let mut out = std::io::stdout().lock();
    match &cli.command {
        Command::Run {
            scenario,
            repetition,
            json,
        } => run_one(&config, scenario, *repetition, *json, &mut out),
        Command::Suite => suite(&config, &mut out),
        Command::Tune {
            method,
            axes,
            resume,
        } => tune(&config, *method, axes, resume.as_deref(), &mut out),
        Command::Compare { a, b } => compare(&config, a, b, &mut out),
        Command::Serve => {
            drop(out);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::service::serve(config))
        }
        Command::Replay { trace } => {
            let r = replay(trace)?;
            writeln!(
                out,
                "{} r{}: recorded {:.4}, replayed {:.4}: match",
                r.recorded.scenario_id,
                r.recorded.repetition,
                r.recorded.driving_score,
                r.replayed.driving_score
            )?;
            Ok(())
        }
    }
}

fn plan(config: &SimConfig, gains: GainSet) -> drivetune::Result<SuitePlan> {
    let mut plan = SuitePlan::new(config.suite()?, config.suite_seed, gains);
    plan.settings = config.run_settings();
    plan.repetitions = config.repetitions;
    plan.workers = config.workers;
    Ok(plan)
}

fn run_one(
    config: &SimConfig,
    id: &str,
    repetition: u32,
    json: bool,
    out: &mut impl Write,
) -> anyhow::Result<()> {
    let scenario = config
        .suite()?
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::UnknownScenario(id.to_string()))?;
    let (mut result, trace) = simulate_run(
        Arc::new(scenario),
        repetition,
        config.gain_set()?,
        config.run_settings(),
    )?;
    let dir = config.output_dir.join(TRACES_DIR);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(trace_file_name(id, repetition));
    result.trace_checksum = Some(trace.save(&path, &result)?);
    if json {
        writeln!(out, "{}", serde_json::to_string(&result)?)?;
        return Ok(());
    }
    writeln!(
        out,
        "{} r{}: completion {:.2}%, penalty {:.4}, driving score {:.2}",
        result.scenario_id,
        result.repetition,
        result.completion,
        result.penalty,
        result.driving_score
    )?;
    for inf in &result.infractions {
        writeln!(out, "  {} at t={:.2}s ({})", inf.kind, inf.time, inf.detail)?;
    }
    if let Some(s) = result.shutdown {
        writeln!(out, "  halted: {} at t={:.2}s", s.kind, s.time)?;
    }
    writeln!(out, "trace: {}", path.display())?;
    Ok(())
}

fn suite(config: &SimConfig, out: &mut impl Write) -> anyhow::Result<()> {
    let outcome = plan(config, config.gain_set()?)?.run_to_dir(&config.output_dir)?;
    write!(out, "{}", outcome.scorecard.render_table())?;
    writeln!(out, "outputs written to {}", config.output_dir.display())?;
    Ok(())
}

/// Parses `kp=5,8,11`.
fn parse_axis(text: &str) -> drivetune::Result<(Param, Vec<f64>)> {
    let (name, values) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("axis `{text}` is not of the form PARAM=V1,V2,..")))?;
    let param: Param = name.trim().parse()?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("axis `{name}` has a non-numeric value `{v}`")))
        })
        .collect::<drivetune::Result<Vec<f64>>>()?;
    Ok((param, values))
}

fn tune(
    config: &SimConfig,
    method: TuneMethod,
    axes: &[String],
    resume: Option<&Path>,
    out: &mut impl Write,
) -> anyhow::Result<()> {
    let start = config.gain_set()?;
    let space = SearchSpace::default();
    let previous = match resume {
        Some(path) => load_log(path)?,
        None => Vec::new(),
    };
    std::fs::create_dir_all(&config.output_dir)?;
    let progress = BufWriter::new(File::create(config.output_dir.join(TUNE_PROGRESS_FILE))?);
    let mut objective = SuiteObjective::new(plan(config, start)?);
    let mut memo = Memo::new(&mut objective)
        .resume_from(&previous)
        .streaming(progress);
    let report = match method {
        TuneMethod::Grid => {
            if axes.is_empty() {
                return Err(Error::Config("grid search needs at least one --axis".into()).into());
            }
            let mut grid = Grid::at(start);
            for axis in axes {
                let (param, values) = parse_axis(axis)?;
                grid = grid.with(param, values);
            }
            grid_search(&space, &grid, config.tuner.grid_budget, &mut memo)?
        }
        TuneMethod::Descent => {
            if !axes.is_empty() {
                return Err(Error::Config("--axis only applies to grid search".into()).into());
            }
            coordinate_descent(&space, start, config.tuner.max_rounds, &mut memo)?
        }
    };
    let fresh = memo.fresh;
    drop(memo);
    let path = config.output_dir.join(TUNE_REPORT_FILE);
    report.save(&path)?;
    if let Some(s) = report.start_score {
        writeln!(out, "start    {}  score {:.4}", start, s)?;
    }
    for m in &report.accepted {
        writeln!(
            out,
            "round {} {} {} -> {}  score {:.4}",
            m.round,
            m.param.name(),
            m.from,
            m.to,
            m.score
        )?;
    }
    writeln!(
        out,
        "best     {}  score {:.4}",
        report.best, report.best_score
    )?;
    writeln!(
        out,
        "{} evaluations ({} new), report: {}",
        report.log.len(),
        fresh,
        path.display()
    )?;
    Ok(())
}

fn compared(config: &SimConfig, spec: &str) -> anyhow::Result<ComparedRun> {
    let path = Path::new(spec);
    if path.is_file() {
        return Ok((&ResultsFile::load(path)?).into());
    }
    let gains: GainSet = spec.parse()?;
    gains.validate()?;
    let outcome = plan(config, gains)?.run(None)?;
    Ok((&outcome).into())
}

fn compare(config: &SimConfig, a: &str, b: &str, out: &mut impl Write) -> anyhow::Result<()> {
    let cmp = Comparison::new(compared(config, a)?, compared(config, b)?)?;
    write!(out, "{}", cmp.render_table())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(["drivetune", "--help"]), 0);
        assert_eq!(run(["drivetune", "--version"]), 0);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["drivetune", "--no-such-flag", "suite"]), 1);
        assert_eq!(run(["drivetune"]), 1);
        assert_eq!(run(["drivetune", "suite", "--seed", "x"]), 1);
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "suite_seed = 3\nrepetitions = 2\n[plant]\ndt = 0.1\n",
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "drivetune",
            "suite",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
            "--gains",
            "tcp-tuned",
            "--alpha",
            "0.25",
            "--hard-rain-night",
            "0.8",
        ])
        .unwrap();
        let c = cli.config.resolve().unwrap();
        assert_eq!(c.suite_seed, 9);
        assert_eq!(c.repetitions, 2);
        assert_eq!(c.plant.dt, 0.1);
        assert_eq!(c.gain_set().unwrap(), GainSet::TCP_TUNED);
        assert_eq!(c.fusion.alpha.get(), 0.25);
        assert_eq!(c.weather.hard_rain_night, 0.8);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for args in [
            vec!["drivetune", "suite", "--gains", "fast"],
            vec!["drivetune", "suite", "--alpha", "0.9"],
            vec!["drivetune", "suite", "--tick-cap", "0"],
        ] {
            let cli = Cli::try_parse_from(args).unwrap();
            let err = cli.config.resolve().unwrap_err();
            assert!(err.is_config_error(), "{err}");
        }
    }

    #[test]
    fn axis_parsing() {
        assert_eq!(
            parse_axis("kp=5, 8,11").unwrap(),
            (Param::Kp, vec![5.0, 8.0, 11.0])
        );
        assert!(parse_axis("kq=1").unwrap_err().is_config_error());
        assert!(parse_axis("kp").unwrap_err().is_config_error());
        assert!(parse_axis("kp=a").unwrap_err().is_config_error());
    }
}
