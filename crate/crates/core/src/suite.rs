//! Running a whole scenario suite and persisting its outputs.
//!
//! Runs are independent, so they may execute on a worker pool. Results are
//! always merged in `(scenario, repetition)` order, which makes every output
//! file identical whatever the number of workers.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::GainSet;
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::scoring::{
    aggregate, driving_score, score_trace, ResultRecord, RunResult, ScoreCard, RESULTS_VERSION,
};
use crate::sim::{simulate_run, RunSettings};
use crate::trace::RunTrace;

pub const RESULTS_FORMAT: &str = "drivetune-results";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const SCORECARD_FILE: &str = "scorecard.txt";
pub const CHART_FILE: &str = "scenario_scores.csv";
pub const TRACES_DIR: &str = "traces";

/// What to run: gains, settings and repetition count for a suite.
#[derive(Debug, Clone)]
pub struct SuitePlan {
    pub scenarios: Vec<Arc<Scenario>>,
    pub seed: u64,
    pub gains: GainSet,
    pub settings: RunSettings,
    pub repetitions: u32,
    /// Worker threads; 0 or 1 runs serially.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub seed: u64,
    pub gains: GainSet,
    pub repetitions: u32,
    /// Sorted by scenario index, then repetition.
    pub results: Vec<RunResult>,
    pub scorecard: ScoreCard,
}

pub fn trace_file_name(scenario_id: &str, repetition: u32) -> String {
    format!("{scenario_id}_r{repetition}.trace.jsonl")
}

impl SuitePlan {
    pub fn new(scenarios: Vec<Scenario>, seed: u64, gains: GainSet) -> SuitePlan {
        SuitePlan {
            scenarios: scenarios.into_iter().map(Arc::new).collect(),
            seed,
            gains,
            settings: RunSettings::default(),
            repetitions: 3,
            workers: 1,
        }
    }

    pub fn with_gains(&self, gains: GainSet) -> SuitePlan {
        SuitePlan {
            gains,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        self.settings.validate()?;
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions", "must be positive"));
        }
        if self.scenarios.is_empty() {
            return Err(Error::EmptyRuns);
        }
        Ok(())
    }

    fn jobs(&self) -> Vec<(usize, u32)> {
        (0..self.scenarios.len())
            .flat_map(|s| (0..self.repetitions).map(move |r| (s, r)))
            .collect()
    }

    fn run_one(&self, scenario: usize, repetition: u32, traces: Option<&Path>) -> RunResult {
        let sc = &self.scenarios[scenario];
        let outcome = simulate_run(sc.clone(), repetition, self.gains, self.settings).and_then(
            |(mut result, trace)| {
                if let Some(dir) = traces {
                    let checksum =
                        trace.save(&dir.join(trace_file_name(&sc.id, repetition)), &result)?;
                    result.trace_checksum = Some(checksum);
                }
                Ok(result)
            },
        );
        outcome.unwrap_or_else(|err| {
            tracing::warn!(scenario = %sc.id, repetition, %err, "run failed; scoring it as a shutdown");
            RunResult::failed(sc.id.clone(), repetition)
        })
    }

    /// Runs every scenario and repetition. When `traces` is given, one trace
    /// file per run is written there.
    pub fn run(&self, traces: Option<&Path>) -> Result<SuiteOutcome> {
        self.validate()?;
        if let Some(dir) = traces {
            std::fs::create_dir_all(dir)?;
        }
        let jobs = self.jobs();
        let results: Vec<RunResult> = if self.workers <= 1 {
            jobs.iter()
                .map(|&(s, r)| self.run_one(s, r, traces))
                .collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
            pool.install(|| {
                jobs.par_iter()
                    .map(|&(s, r)| self.run_one(s, r, traces))
                    .collect()
            })
        };
        let scorecard = aggregate(&results)?;
        Ok(SuiteOutcome {
            seed: self.seed,
            gains: self.gains,
            repetitions: self.repetitions,
            results,
            scorecard,
        })
    }

    /// Runs the suite and writes results, scorecard, chart data and traces
    /// under `dir`.
    pub fn run_to_dir(&self, dir: &Path) -> Result<SuiteOutcome> {
        std::fs::create_dir_all(dir)?;
        let outcome = self.run(Some(&dir.join(TRACES_DIR)))?;
        outcome.write_outputs(dir)?;
        Ok(outcome)
    }
}

impl SuiteOutcome {
    pub fn header(&self) -> ResultRecord {
        ResultRecord::Header {
            format: RESULTS_FORMAT.to_string(),
            version: RESULTS_VERSION,
            suite_seed: self.seed,
            gains: self.gains,
            repetitions: self.repetitions,
        }
    }

    /// Line-delimited results: header, one line per run, scorecard.
    pub fn results_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header())?;
        out.push('\n');
        for run in &self.results {
            out.push_str(&serde_json::to_string(&ResultRecord::Run(run.clone()))?);
            out.push('\n');
        }
        out.push_str(&self.scorecard.to_record_line()?);
        out.push('\n');
        Ok(out)
    }

    /// Per-scenario chart data: one row per scenario.
    pub fn chart_csv(&self) -> String {
        let mut out = String::from("scenario,driving_score,route_completion,infraction_penalty\n");
        for s in &self.scorecard.per_scenario {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.scenario_id, s.driving_score, s.route_completion, s.infraction_penalty
            );
        }
        out
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files = [
            (RESULTS_FILE, self.results_jsonl()?),
            (SCORECARD_FILE, self.scorecard.render_table()),
            (CHART_FILE, self.chart_csv()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Contents of a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub seed: u64,
    pub gains: GainSet,
    pub repetitions: u32,
    pub runs: Vec<RunResult>,
    pub scorecard: ScoreCard,
}

impl ResultsFile {
    pub fn read_from(input: impl BufRead) -> Result<ResultsFile> {
        let mut header = None;
        let mut runs = Vec::new();
        let mut scorecard = None;
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                ResultRecord::Header {
                    format,
                    version,
                    suite_seed,
                    gains,
                    repetitions,
                } => {
                    if format != RESULTS_FORMAT {
                        return Err(Error::Config(format!(
                            "not a results file (format `{format}`)"
                        )));
                    }
                    if version != RESULTS_VERSION {
                        return Err(Error::Version {
                            what: "results",
                            found: version,
                            expected: RESULTS_VERSION,
                        });
                    }
                    header = Some((suite_seed, gains, repetitions));
                }
                ResultRecord::Run(run) => runs.push(run),
                ResultRecord::Scorecard(card) => scorecard = Some(card),
            }
        }
        let (seed, gains, repetitions) =
            header.ok_or_else(|| Error::Config("results file has no header".into()))?;
        let scorecard =
            scorecard.ok_or_else(|| Error::Config("results file has no scorecard".into()))?;
        Ok(ResultsFile {
            seed,
            gains,
            repetitions,
            runs,
            scorecard,
        })
    }

    pub fn load(path: &Path) -> Result<ResultsFile> {
        ResultsFile::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

/// Scores of one gain set on one suite, as compared side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparedRun {
    pub gains: GainSet,
    pub suite_seed: u64,
    pub repetitions: u32,
    pub scorecard: ScoreCard,
}

impl From<&SuiteOutcome> for ComparedRun {
    fn from(o: &SuiteOutcome) -> ComparedRun {
        ComparedRun {
            gains: o.gains,
            suite_seed: o.seed,
            repetitions: o.repetitions,
            scorecard: o.scorecard.clone(),
        }
    }
}

impl From<&ResultsFile> for ComparedRun {
    fn from(r: &ResultsFile) -> ComparedRun {
        ComparedRun {
            gains: r.gains,
            suite_seed: r.seed,
            repetitions: r.repetitions,
            scorecard: r.scorecard.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario_id: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub delta: f64,
}

/// Per-scenario driving scores of two gain sets on the same suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub suite_seed: u64,
    pub a: ComparedRun,
    pub b: ComparedRun,
    pub rows: Vec<ComparisonRow>,
    pub global_delta: f64,
}

impl Comparison {
    /// Fails unless both runs used the same suite seed and scenario set.
    pub fn new(a: ComparedRun, b: ComparedRun) -> Result<Comparison> {
        if a.suite_seed != b.suite_seed {
            return Err(Error::Config(format!(
                "cannot compare runs on different suites (seed {} vs {})",
                a.suite_seed, b.suite_seed
            )));
        }
        let ids_a: Vec<&str> = a
            .scorecard
            .per_scenario
            .iter()
            .map(|s| s.scenario_id.as_str())
            .collect();
        let ids_b: Vec<&str> = b
            .scorecard
            .per_scenario
            .iter()
            .map(|s| s.scenario_id.as_str())
            .collect();
        if ids_a != ids_b {
            return Err(Error::Config(
                "cannot compare runs over different scenario sets".into(),
            ));
        }
        let rows = a
            .scorecard
            .per_scenario
            .iter()
            .zip(&b.scorecard.per_scenario)
            .map(|(x, y)| ComparisonRow {
                scenario_id: x.scenario_id.clone(),
                a: x.driving_score,
                b: y.driving_score,
                delta: y.driving_score - x.driving_score,
            })
            .collect();
        Ok(Comparison {
            suite_seed: a.suite_seed,
            global_delta: b.scorecard.driving_score - a.scorecard.driving_score,
            rows,
            a,
            b,
        })
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "A: {}", self.a.gains);
        let _ = writeln!(out, "B: {}", self.b.gains);
        let _ = writeln!(out, "suite seed {}\n", self.suite_seed);
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10} {:>10}",
            "scenario", "A", "B", "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>10.2} {:>10.2} {:>+10.2}",
                r.scenario_id, r.a, r.b, r.delta
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>10.2} {:>10.2} {:>+10.2}",
            "global",
            self.a.scorecard.driving_score,
            self.b.scorecard.driving_score,
            self.global_delta
        );
        out
    }
}

/// Outcome of re-scoring a persisted trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub recorded: RunResult,
    pub replayed: RunResult,
}

/// Loads a trace, verifies its checksum and re-scores it. Fails with
/// [`Error::ReplayMismatch`] if the score differs from the recorded one.
pub fn replay(path: &Path) -> Result<Replay> {
    let (trace, footer) = RunTrace::load(path)?;
    let mut replayed = score_trace(&trace)?;
    replayed.trace_checksum = Some(footer.checksum.clone());
    let recorded = footer.result;
    let (a, b) = (driving_score(&recorded), driving_score(&replayed));
    if a.to_bits() != b.to_bits() || recorded != replayed {
        return Err(Error::ReplayMismatch {
            recorded: a,
            replayed: b,
        });
    }
    Ok(Replay { recorded, replayed })
}

/// Writes a results file in one go (used for fixtures and tools).
pub fn write_results(path: &Path, outcome: &SuiteOutcome) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(outcome.results_jsonl()?.as_bytes())?;
    file.flush()?;
    Ok(())
}
