//! Derivative-free search over gain sets: exhaustive grid search and
//! one-coordinate-at-a-time descent.
//!
//! Both searches talk to an [`Objective`]. [`SuiteObjective`] scores a gain
//! set by the global driving score of a whole suite; tests use cheap
//! synthetic objectives. Every evaluation is memoised and logged, and a log
//! can seed the memo of a later search so interrupted runs resume without
//! re-simulating.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::control::{GainSet, Param};
use crate::error::{Error, Result};
use crate::scoring::ScoreCard;
use crate::suite::SuitePlan;

pub const TUNE_FORMAT: &str = "drivetune-tune";
pub const TUNE_VERSION: u32 = 1;

/// Box bounds and step size per parameter, indexed in [`Param::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lower: [f64; 5],
    pub upper: [f64; 5],
    pub step: [f64; 5],
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lower: [1.0, 0.0, 0.0, 0.5, 0.3],
            upper: [20.0, 2.0, 5.0, 1.0, 0.6],
            step: [1.0, 0.1, 0.25, 0.05, 0.05],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            let i = p.index();
            let (lo, hi, step) = (self.lower[i], self.upper[i], self.step[i]);
            if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
                return Err(Error::NonFinite { field: p.name() });
            }
            if lo > hi {
                return Err(Error::invalid(p.name(), "lower bound above upper bound"));
            }
            if step <= 0.0 {
                return Err(Error::invalid(p.name(), "step must be positive"));
            }
        }
        Ok(())
    }

    pub fn contains(&self, gains: &GainSet) -> bool {
        Param::ALL
            .iter()
            .all(|&p| self.contains_value(p, gains.get(p)))
    }

    pub fn contains_value(&self, param: Param, value: f64) -> bool {
        let i = param.index();
        value >= self.lower[i] && value <= self.upper[i]
    }

    pub fn step(&self, param: Param) -> f64 {
        self.step[param.index()]
    }

    /// Rejects gain sets outside the box.
    pub fn check(&self, gains: &GainSet) -> Result<()> {
        for p in Param::ALL {
            if !self.contains_value(p, gains.get(p)) {
                let i = p.index();
                return Err(Error::invalid(
                    p.name(),
                    format!(
                        "{} lies outside [{}, {}]",
                        gains.get(p),
                        self.lower[i],
                        self.upper[i]
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Explicit value lists per parameter; the grid is their cross product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub values: [Vec<f64>; 5],
}

impl Grid {
    /// A one-point grid at `base`.
    pub fn at(base: GainSet) -> Grid {
        Grid {
            values: base.to_array().map(|v| vec![v]),
        }
    }

    /// Replaces the value list of one parameter.
    pub fn with(mut self, param: Param, values: Vec<f64>) -> Grid {
        self.values[param.index()] = values;
        self
    }

    pub fn size(&self) -> usize {
        self.values.iter().map(Vec::len).product()
    }

    /// Grid points in lexicographic order of `(kp, ki, kd, max_throttle, brake_speed)`.
    pub fn points(&self) -> Vec<GainSet> {
        let mut sorted = self.values.clone();
        for list in &mut sorted {
            list.sort_by(f64::total_cmp);
            list.dedup();
        }
        let mut points = vec![[0.0; 5]];
        for (i, list) in sorted.iter().enumerate() {
            points = points
                .into_iter()
                .flat_map(|p| {
                    list.iter().map(move |&v| {
                        let mut q = p;
                        q[i] = v;
                        q
                    })
                })
                .collect();
        }
        points.into_iter().map(GainSet::from_array).collect()
    }
}

/// Something that scores gain sets; higher is better.
pub trait Objective {
    fn evaluate(&mut self, gains: &GainSet) -> Result<f64>;

    /// Identifies the suite behind the scores (recorded in the log).
    fn suite_seed(&self) -> u64 {
        0
    }
}

/// Global driving score of a suite run.
pub struct SuiteObjective {
    plan: SuitePlan,
    last: Option<ScoreCard>,
}

impl SuiteObjective {
    pub fn new(plan: SuitePlan) -> SuiteObjective {
        SuiteObjective { plan, last: None }
    }

    /// Scorecard of the most recent evaluation.
    pub fn last_scorecard(&self) -> Option<&ScoreCard> {
        self.last.as_ref()
    }
}

impl Objective for SuiteObjective {
    fn evaluate(&mut self, gains: &GainSet) -> Result<f64> {
        let outcome = self.plan.with_gains(*gains).run(None)?;
        let score = outcome.scorecard.driving_score;
        self.last = Some(outcome.scorecard);
        Ok(score)
    }

    fn suite_seed(&self) -> u64 {
        self.plan.seed
    }
}

/// Scores a gain set on a suite: the global driving score plus its scorecard.
pub fn evaluate(plan: &SuitePlan, gains: GainSet) -> Result<(f64, ScoreCard)> {
    let outcome = plan.with_gains(gains).run(None)?;
    Ok((outcome.scorecard.driving_score, outcome.scorecard))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub gains: GainSet,
    pub score: f64,
    pub suite_seed: u64,
}

/// One accepted coordinate move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub round: usize,
    pub param: Param,
    pub from: f64,
    pub to: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grid,
    CoordinateDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub method: Method,
    pub best: GainSet,
    pub best_score: f64,
    pub start_score: Option<f64>,
    /// Every distinct evaluation, in the order it was first requested.
    pub log: Vec<Evaluation>,
    /// Grid points evaluated (grid) or rounds run (descent).
    pub iterations: usize,
    /// Accepted descent moves; empty for grid search.
    pub accepted: Vec<Move>,
    pub wall_time_secs: f64,
}

impl TuneReport {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &TuneReport) -> bool {
        TuneReport {
            wall_time_secs: 0.0,
            ..self.clone()
        } == TuneReport {
            wall_time_secs: 0.0,
            ..other.clone()
        }
    }

    /// Net direction of `param` along the accepted path: `Greater` if it
    /// ended above its start, `Less` if below, `Equal` if unchanged.
    pub fn direction(&self, param: Param) -> Ordering {
        let first = self.accepted.iter().find(|m| m.param == param);
        let last = self.accepted.iter().rev().find(|m| m.param == param);
        match (first, last) {
            (Some(first), Some(last)) => last.to.total_cmp(&first.from),
            _ => Ordering::Equal,
        }
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for eval in &self.log {
            writeln!(
                out,
                "{}",
                serde_json::to_string(&LogLine::Evaluation(*eval))?
            )?;
        }
        writeln!(
            out,
            "{}",
            serde_json::to_string(&LogLine::Summary {
                format: TUNE_FORMAT.to_string(),
                version: TUNE_VERSION,
                report: Box::new(self.clone()),
            })?
        )?;
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_jsonl(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Evaluation(Evaluation),
    Summary {
        format: String,
        version: u32,
        report: Box<TuneReport>,
    },
}

/// Reads the evaluation lines of a tuning log. A missing or partial summary
/// (an interrupted run) is fine; unparsable lines are not.
pub fn read_log(input: impl BufRead) -> Result<Vec<Evaluation>> {
    let mut evals = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("tuning log line {}: {e}", n + 1)))?
        {
            LogLine::Evaluation(e) => evals.push(e),
            LogLine::Summary { version, .. } if version != TUNE_VERSION => {
                return Err(Error::Version {
                    what: "tuning log",
                    found: version,
                    expected: TUNE_VERSION,
                })
            }
            LogLine::Summary { .. } => {}
        }
    }
    Ok(evals)
}

pub fn load_log(path: &Path) -> Result<Vec<Evaluation>> {
    read_log(BufReader::new(std::fs::File::open(path)?))
}

fn key(gains: &GainSet) -> [u64; 5] {
    gains.to_array().map(f64::to_bits)
}

/// Memoising wrapper that also records the evaluation log. Entries seeded
/// from an earlier log are replayed into the new log when first requested.
pub struct Memo<'a, O: Objective + ?Sized> {
    objective: &'a mut O,
    seeded: HashMap<[u64; 5], f64>,
    seen: HashMap<[u64; 5], f64>,
    log: Vec<Evaluation>,
    /// Objective calls actually made (excludes seeded hits).
    pub fresh: usize,
    /// Optional sink that receives every new log line as it happens.
    sink: Option<Box<dyn Write + 'a>>,
}

impl<'a, O: Objective + ?Sized> Memo<'a, O> {
    pub fn new(objective: &'a mut O) -> Memo<'a, O> {
        Memo {
            objective,
            seeded: HashMap::new(),
            seen: HashMap::new(),
            log: Vec::new(),
            fresh: 0,
            sink: None,
        }
    }

    /// Seeds the memo from a previous log. Entries recorded for another
    /// suite seed are ignored.
    pub fn resume_from(mut self, previous: &[Evaluation]) -> Memo<'a, O> {
        let seed = self.objective.suite_seed();
        for e in previous.iter().filter(|e| e.suite_seed == seed) {
            self.seeded.insert(key(&e.gains), e.score);
        }
        self
    }

    /// Streams each log line to `sink` as evaluations happen.
    pub fn streaming(mut self, sink: impl Write + 'a) -> Memo<'a, O> {
        self.sink = Some(Box::new(sink));
        self
    }

    pub fn score(&mut self, gains: &GainSet) -> Result<f64> {
        let k = key(gains);
        if let Some(&s) = self.seen.get(&k) {
            return Ok(s);
        }
        let score = match self.seeded.get(&k) {
            Some(&s) => s,
            None => {
                self.fresh += 1;
                let s = self.objective.evaluate(gains)?;
                if !s.is_finite() {
                    return Err(Error::NonFinite { field: "score" });
                }
                s
            }
        };
        self.seen.insert(k, score);
        let eval = Evaluation {
            gains: *gains,
            score,
            suite_seed: self.objective.suite_seed(),
        };
        if let Some(sink) = self.sink.as_mut() {
            writeln!(
                sink,
                "{}",
                serde_json::to_string(&LogLine::Evaluation(eval))?
            )?;
            sink.flush()?;
        }
        self.log.push(eval);
        Ok(score)
    }

    pub fn evaluations(&self) -> usize {
        self.log.len()
    }

    pub fn into_log(self) -> Vec<Evaluation> {
        self.log
    }
}

/// Lexicographic order of the parameter vector.
fn lex_cmp(a: &GainSet, b: &GainSet) -> Ordering {
    a.to_array()
        .iter()
        .zip(b.to_array().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Best entry of a log: highest score, ties to the lexicographically
/// smallest gain set.
pub fn best_of(log: &[Evaluation]) -> Option<&Evaluation> {
    log.iter().min_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| lex_cmp(&a.gains, &b.gains))
    })
}

/// Evaluates every grid point and returns the best.
pub fn grid_search<O: Objective + ?Sized>(
    space: &SearchSpace,
    grid: &Grid,
    budget: usize,
    memo: &mut Memo<'_, O>,
) -> Result<TuneReport> {
    let started = Instant::now();
    space.validate()?;
    let size = grid.size();
    if size == 0 {
        return Err(Error::invalid("grid", "has no points"));
    }
    if size > budget {
        return Err(Error::BudgetExceeded { size, budget });
    }
    let points = grid.points();
    for point in &points {
        point.validate()?;
        space.check(point)?;
    }
    let first = memo.log.len();
    for point in &points {
        memo.score(point)?;
    }
    let log = memo.log[first..].to_vec();
    let best = *best_of(&log).expect("grid is non-empty");
    Ok(TuneReport {
        method: Method::Grid,
        best: best.gains,
        best_score: best.score,
        start_score: None,
        iterations: points.len(),
        log,
        accepted: Vec::new(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Cycles through the parameters in fixed order, probing one step either
/// side and moving only on strict improvement. Stops after a round without
/// a move or after `max_rounds` rounds.
///
/// Coordinates are tracked as integer step offsets from `start`, so repeated
/// moves never accumulate rounding error.
pub fn coordinate_descent<O: Objective + ?Sized>(
    space: &SearchSpace,
    start: GainSet,
    max_rounds: usize,
    memo: &mut Memo<'_, O>,
) -> Result<TuneReport> {
    let started = Instant::now();
    space.validate()?;
    start.validate()?;
    space.check(&start)?;
    if max_rounds == 0 {
        return Err(Error::invalid("max_rounds", "must be positive"));
    }
    let origin = start.to_array();
    let at = |offsets: &[i64; 5]| {
        let mut v = origin;
        for p in Param::ALL {
            let i = p.index();
            v[i] = origin[i] + offsets[i] as f64 * space.step[i];
        }
        GainSet::from_array(v)
    };

    let first = memo.log.len();
    let mut offsets = [0i64; 5];
    let start_score = memo.score(&start)?;
    let mut score = start_score;
    let mut accepted = Vec::new();
    let mut rounds = 0;

    while rounds < max_rounds {
        rounds += 1;
        let mut moved = false;
        for param in Param::ALL {
            let i = param.index();
            let mut best: Option<(i64, f64)> = None;
            for delta in [-1i64, 1] {
                let mut probe = offsets;
                probe[i] += delta;
                let gains = at(&probe);
                if !space.contains_value(param, gains.get(param)) || gains.validate().is_err() {
                    continue;
                }
                let s = memo.score(&gains)?;
                if s > score && best.is_none_or(|(_, b)| s > b) {
                    best = Some((probe[i], s));
                }
            }
            if let Some((offset, s)) = best {
                let from = at(&offsets).get(param);
                offsets[i] = offset;
                accepted.push(Move {
                    round: rounds,
                    param,
                    from,
                    to: at(&offsets).get(param),
                    score: s,
                });
                score = s;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }

    Ok(TuneReport {
        method: Method::CoordinateDescent,
        best: at(&offsets),
        best_score: score,
        start_score: Some(start_score),
        log: memo.log[first..].to_vec(),
        iterations: rounds,
        accepted,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
