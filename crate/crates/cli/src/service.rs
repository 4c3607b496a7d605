//! HTTP service behind the tuning dashboard.
//!
//! Request and response bodies are wire messages (see `drivetune::wire`).
//!
//! | Method | Path | Body / query | Reply |
//! |---|---|---|---|
//! | GET | `/api/presets` | | `presets` |
//! | GET | `/api/scenarios` | | `scenarios` |
//! | POST | `/api/sessions` | `start_session` | `session_status` (201) |
//! | GET | `/api/sessions/{id}` | | `session_status` |
//! | DELETE | `/api/sessions/{id}` | | `session_status` (closed) |
//! | POST | `/api/sessions/{id}/gains` | `gain_submission` | `session_status` of the restarted run |
//! | POST | `/api/sessions/{id}/heartbeat` | | `session_status` |
//! | GET | `/api/sessions/{id}/telemetry` | | SSE stream of `session_status` and `telemetry` |
//! | GET | `/api/suite` | `gains`, `seed`, `repetitions` | `scorecard` |
//! | GET | `/api/compare` | `a`, `b`, `seed` or `seed_a` + `seed_b` | `comparison` |
//!
//! Failures reply with an `error` message. Every request that names a
//! session counts as client communication for the heartbeat rule.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::{stream, Stream, StreamExt};
use serde::Deserialize;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::Instant;

use drivetune::config::SimConfig;
use drivetune::scenario::build_suite_with;
use drivetune::scoring::{ShutdownKind, HEARTBEAT_LIMIT};
use drivetune::sim::RunSettings;
use drivetune::suite::{ComparedRun, Comparison, SuitePlan};
use drivetune::tuner::SearchSpace;
use drivetune::wire::{
    decode, encode, Decimator, ErrorCode, ErrorMessage, FieldError, GainPayload, Message,
    PresetInfo, ScenarioInfo, ScorecardMessage, SessionState, SessionStatus, Telemetry,
    TELEMETRY_HZ,
};
use drivetune::{GainSet, Scenario, Simulation};

const TELEMETRY_BUFFER: usize = 1024;
/// Ticks between cooperative yields when runs are unthrottled.
const YIELD_EVERY: u64 = 64;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// A wire message with an HTTP status.
pub struct Reply(pub StatusCode, pub Box<Message>);

impl Reply {
    pub fn new(status: StatusCode, message: Message) -> Reply {
        Reply(status, Box::new(message))
    }
}

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        (
            self.0,
            [(header::CONTENT_TYPE, "application/json")],
            encode(&self.1),
        )
            .into_response()
    }
}

fn status_for(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::BadRequest | ErrorCode::UnsupportedVersion => StatusCode::BAD_REQUEST,
        ErrorCode::InvalidGains | ErrorCode::UnknownScenario => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::UnknownSession => StatusCode::NOT_FOUND,
        ErrorCode::SessionLimit => StatusCode::TOO_MANY_REQUESTS,
        ErrorCode::SessionClosed | ErrorCode::SeedMismatch => StatusCode::CONFLICT,
        ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<ErrorMessage> for Reply {
    fn from(e: ErrorMessage) -> Reply {
        Reply::new(status_for(e.code), Message::Error(e))
    }
}

fn fail(code: ErrorCode, message: impl Into<String>) -> Reply {
    ErrorMessage::new(code, message).into()
}

enum Command {
    Restart(GainSet, oneshot::Sender<SessionStatus>),
    Close(oneshot::Sender<SessionStatus>),
}

#[derive(Clone)]
struct SessionHandle {
    commands: mpsc::UnboundedSender<Command>,
    status: Arc<Mutex<SessionStatus>>,
    telemetry: broadcast::Sender<Arc<Message>>,
    last_seen: Arc<Mutex<Instant>>,
}

impl SessionHandle {
    fn touch(&self) {
        *lock(&self.last_seen) = Instant::now();
    }

    fn status(&self) -> SessionStatus {
        lock(&self.status).clone()
    }
}

#[derive(Default)]
struct Registry {
    issued: u64,
    sessions: HashMap<String, SessionHandle>,
}

type SuiteKey = (u64, u32, [u64; 5]);

struct Shared {
    config: SimConfig,
    settings: RunSettings,
    space: SearchSpace,
    scenarios: Vec<Arc<Scenario>>,
    registry: Mutex<Registry>,
    scorecards: Mutex<HashMap<SuiteKey, ScorecardMessage>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(config: SimConfig) -> drivetune::Result<AppState> {
        config.validate()?;
        let scenarios = config.suite()?.into_iter().map(Arc::new).collect();
        Ok(AppState(Arc::new(Shared {
            settings: config.run_settings(),
            space: SearchSpace::default(),
            scenarios,
            registry: Mutex::new(Registry::default()),
            scorecards: Mutex::new(HashMap::new()),
            config,
        })))
    }

    fn session(&self, id: &str) -> Result<SessionHandle, Reply> {
        let handle = lock(&self.0.registry).sessions.get(id).cloned();
        let handle =
            handle.ok_or_else(|| fail(ErrorCode::UnknownSession, format!("no session `{id}`")))?;
        handle.touch();
        Ok(handle)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/presets", get(presets))
        .route("/api/scenarios", get(scenarios))
        .route("/api/sessions", post(create_session))
        .route(
            "/api/sessions/{id}",
            get(session_status).delete(close_session),
        )
        .route("/api/sessions/{id}/gains", post(submit_gains))
        .route("/api/sessions/{id}/heartbeat", post(heartbeat))
        .route("/api/sessions/{id}/telemetry", get(telemetry))
        .route("/api/suite", get(suite_scorecard))
        .route("/api/compare", get(compare))
        .with_state(state)
}

/// Binds the configured address and serves until interrupted.
pub async fn serve(config: SimConfig) -> anyhow::Result<()> {
    let bind = config.service.bind.clone();
    let app = router(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    tracing::info!(address = %listener.local_addr()?, "service listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn presets() -> Reply {
    Reply::new(
        StatusCode::OK,
        Message::Presets {
            presets: PresetInfo::all(),
        },
    )
}

async fn scenarios(State(app): State<AppState>) -> Reply {
    Reply::new(
        StatusCode::OK,
        Message::Scenarios {
            scenarios: app
                .0
                .scenarios
                .iter()
                .map(|s| ScenarioInfo::from(&**s))
                .collect(),
        },
    )
}

async fn create_session(State(app): State<AppState>, body: String) -> Reply {
    let req = match decode(&body) {
        Ok(Message::StartSession(req)) => req,
        Ok(other) => {
            return fail(
                ErrorCode::BadRequest,
                format!("expected `start_session`, got `{}`", other.kind()),
            )
        }
        Err(e) => return e.into(),
    };
    let Some(scenario) = app
        .0
        .scenarios
        .iter()
        .find(|s| s.id == req.scenario)
        .cloned()
    else {
        return fail(
            ErrorCode::UnknownScenario,
            format!("no scenario `{}`", req.scenario),
        );
    };
    let gains = match req.payload.resolve(GainSet::TCP_ORIGINAL, &app.0.space) {
        Ok(g) => g,
        Err(fields) => return ErrorMessage::invalid_gains(fields).into(),
    };
    let sim = match Simulation::new(scenario.clone(), req.repetition, gains, app.0.settings) {
        Ok(sim) => sim,
        Err(e) => return fail(ErrorCode::Internal, e.to_string()),
    };

    let mut registry = lock(&app.0.registry);
    let limit = app.0.config.service.max_sessions;
    let active = registry
        .sessions
        .values()
        .filter(|s| lock(&s.status).state != SessionState::Closed)
        .count();
    if active >= limit {
        return fail(
            ErrorCode::SessionLimit,
            format!("session limit reached: {active} of {limit} sessions are active; close one and retry"),
        );
    }
    registry.issued += 1;
    let id = format!("s{}", registry.issued);
    let status = SessionStatus {
        session: id.clone(),
        state: SessionState::Running,
        scenario: scenario.id.clone(),
        repetition: req.repetition,
        run: 0,
        gains,
        tick: 0,
        time: 0.0,
        result: None,
        closed_by: None,
    };
    let (commands, rx) = mpsc::unbounded_channel();
    let (telemetry, _) = broadcast::channel(TELEMETRY_BUFFER);
    let handle = SessionHandle {
        commands,
        status: Arc::new(Mutex::new(status.clone())),
        telemetry,
        last_seen: Arc::new(Mutex::new(Instant::now())),
    };
    let worker = Worker {
        id: id.clone(),
        scenario,
        repetition: req.repetition,
        settings: app.0.settings,
        speedup: app.0.config.service.speedup,
        handle: handle.clone(),
        run: 0,
        sim,
    };
    registry.sessions.insert(id, handle);
    drop(registry);
    tokio::spawn(worker.drive(rx));
    Reply::new(StatusCode::CREATED, Message::SessionStatus(status))
}

async fn session_status(State(app): State<AppState>, Path(id): Path<String>) -> Reply {
    match app.session(&id) {
        Ok(h) => Reply::new(StatusCode::OK, Message::SessionStatus(h.status())),
        Err(r) => r,
    }
}

async fn heartbeat(State(app): State<AppState>, Path(id): Path<String>) -> Reply {
    session_status(State(app), Path(id)).await
}

async fn close_session(State(app): State<AppState>, Path(id): Path<String>) -> Reply {
    let handle = match app.session(&id) {
        Ok(h) => h,
        Err(r) => return r,
    };
    let (ack, done) = oneshot::channel();
    let status = if handle.commands.send(Command::Close(ack)).is_ok() {
        done.await.unwrap_or_else(|_| handle.status())
    } else {
        handle.status()
    };
    lock(&app.0.registry).sessions.remove(&id);
    Reply::new(StatusCode::OK, Message::SessionStatus(status))
}

async fn submit_gains(State(app): State<AppState>, Path(id): Path<String>, body: String) -> Reply {
    let handle = match app.session(&id) {
        Ok(h) => h,
        Err(r) => return r,
    };
    let sub = match decode(&body) {
        Ok(Message::GainSubmission(sub)) => sub,
        Ok(other) => {
            return fail(
                ErrorCode::BadRequest,
                format!("expected `gain_submission`, got `{}`", other.kind()),
            )
        }
        Err(e) => return e.into(),
    };
    if !sub.session.is_empty() && sub.session != id {
        return fail(
            ErrorCode::BadRequest,
            format!("submission names session `{}`", sub.session),
        );
    }
    let current = handle.status();
    if current.state == SessionState::Closed {
        return fail(
            ErrorCode::SessionClosed,
            format!("session `{id}` is closed"),
        );
    }
    let gains = match sub.payload.resolve(current.gains, &app.0.space) {
        Ok(g) => g,
        Err(fields) => return ErrorMessage::invalid_gains(fields).into(),
    };
    let (ack, done) = oneshot::channel();
    if handle.commands.send(Command::Restart(gains, ack)).is_err() {
        return fail(
            ErrorCode::SessionClosed,
            format!("session `{id}` is closed"),
        );
    }
    match done.await {
        Ok(status) => Reply::new(StatusCode::OK, Message::SessionStatus(status)),
        Err(_) => fail(
            ErrorCode::SessionClosed,
            format!("session `{id}` closed before the restart"),
        ),
    }
}

fn sse_event(msg: &Message) -> Result<Event, Infallible> {
    Ok(Event::default().event(msg.kind()).data(encode(msg)))
}

async fn telemetry(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, Reply> {
    let handle = app.session(&id)?;
    let rx = handle.telemetry.subscribe();
    let initial = handle.status();
    let closed = initial.state == SessionState::Closed;
    let first = stream::once(async move { sse_event(&Message::SessionStatus(initial)) });
    let rest = stream::unfold((rx, closed), |(mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(msg) => {
                    let end = matches!(&*msg, Message::SessionStatus(s) if s.state == SessionState::Closed);
                    return Some((sse_event(&msg), (rx, end)));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(first.chain(rest)).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
struct SuiteQuery {
    gains: Option<String>,
    seed: Option<u64>,
    repetitions: Option<u32>,
}

fn parse_gains(app: &AppState, text: &str, field: &str) -> Result<GainSet, Reply> {
    let gains: GainSet = text.parse().map_err(|e: drivetune::Error| {
        Reply::from(ErrorMessage::invalid_gains(vec![FieldError {
            field: field.to_string(),
            message: e.to_string(),
        }]))
    })?;
    GainPayload::explicit(&gains)
        .resolve(gains, &app.0.space)
        .map_err(|fields| ErrorMessage::invalid_gains(fields).into())
}

async fn scorecard_for(
    app: &AppState,
    gains: GainSet,
    seed: u64,
    repetitions: u32,
) -> Result<ScorecardMessage, Reply> {
    let key = (seed, repetitions, gains.to_array().map(f64::to_bits));
    if let Some(hit) = lock(&app.0.scorecards).get(&key) {
        return Ok(hit.clone());
    }
    let config = &app.0.config;
    let scenarios = build_suite_with(seed, &config.weather)
        .map_err(|e| fail(ErrorCode::BadRequest, e.to_string()))?;
    let mut plan = SuitePlan::new(scenarios, seed, gains);
    plan.settings = app.0.settings;
    plan.repetitions = repetitions;
    plan.workers = config.workers;
    let outcome = tokio::task::spawn_blocking(move || plan.run(None))
        .await
        .map_err(|e| fail(ErrorCode::Internal, e.to_string()))?
        .map_err(|e| {
            let code = if e.is_config_error() {
                ErrorCode::BadRequest
            } else {
                ErrorCode::Internal
            };
            fail(code, e.to_string())
        })?;
    let msg = ScorecardMessage {
        suite_seed: seed,
        repetitions,
        gains,
        scorecard: outcome.scorecard,
    };
    lock(&app.0.scorecards).insert(key, msg.clone());
    Ok(msg)
}

async fn suite_scorecard(State(app): State<AppState>, Query(q): Query<SuiteQuery>) -> Reply {
    let gains = match q.gains.as_deref().map(|g| parse_gains(&app, g, "gains")) {
        Some(Ok(g)) => g,
        Some(Err(r)) => return r,
        None => GainSet::TCP_ORIGINAL,
    };
    let seed = q.seed.unwrap_or(app.0.config.suite_seed);
    let reps = q.repetitions.unwrap_or(app.0.config.repetitions);
    match scorecard_for(&app, gains, seed, reps).await {
        Ok(msg) => Reply::new(StatusCode::OK, Message::Scorecard(msg)),
        Err(r) => r,
    }
}

#[derive(Debug, Deserialize)]
struct CompareQuery {
    a: String,
    b: String,
    seed: Option<u64>,
    seed_a: Option<u64>,
    seed_b: Option<u64>,
    repetitions: Option<u32>,
}

async fn compare(State(app): State<AppState>, Query(q): Query<CompareQuery>) -> Reply {
    let seed = q.seed.unwrap_or(app.0.config.suite_seed);
    let (seed_a, seed_b) = (q.seed_a.unwrap_or(seed), q.seed_b.unwrap_or(seed));
    if seed_a != seed_b {
        return fail(
            ErrorCode::SeedMismatch,
            format!("comparison refused: A uses suite seed {seed_a} but B uses seed {seed_b}"),
        );
    }
    let (a, b) = match (parse_gains(&app, &q.a, "a"), parse_gains(&app, &q.b, "b")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(r), _) | (_, Err(r)) => return r,
    };
    let reps = q.repetitions.unwrap_or(app.0.config.repetitions);
    let run = |card: ScorecardMessage| ComparedRun {
        gains: card.gains,
        suite_seed: card.suite_seed,
        repetitions: card.repetitions,
        scorecard: card.scorecard,
    };
    let card_a = match scorecard_for(&app, a, seed_a, reps).await {
        Ok(c) => run(c),
        Err(r) => return r,
    };
    let card_b = match scorecard_for(&app, b, seed_b, reps).await {
        Ok(c) => run(c),
        Err(r) => return r,
    };
    match Comparison::new(card_a, card_b) {
        Ok(cmp) => Reply::new(StatusCode::OK, Message::Comparison(Box::new(cmp))),
        Err(e) => fail(ErrorCode::SeedMismatch, e.to_string()),
    }
}

/// The task that owns one session's simulation.
struct Worker {
    id: String,
    scenario: Arc<Scenario>,
    repetition: u32,
    settings: RunSettings,
    speedup: f64,
    handle: SessionHandle,
    run: u32,
    sim: Simulation,
}

enum Next {
    Continue,
    Stop,
}

impl Worker {
    fn silence(&self) -> Duration {
        Instant::now().saturating_duration_since(*lock(&self.handle.last_seen))
    }

    fn limit() -> Duration {
        Duration::from_secs_f64(HEARTBEAT_LIMIT)
    }

    fn publish_status(&self) -> SessionStatus {
        let status = self.handle.status();
        let _ = self
            .handle
            .telemetry
            .send(Arc::new(Message::SessionStatus(status.clone())));
        status
    }

    fn restart(&mut self, gains: GainSet) -> SessionStatus {
        match Simulation::new(self.scenario.clone(), self.repetition, gains, self.settings) {
            Ok(sim) => {
                self.sim = sim;
                self.run += 1;
                let mut s = lock(&self.handle.status);
                s.state = SessionState::Running;
                s.run = self.run;
                s.gains = gains;
                s.tick = 0;
                s.time = 0.0;
                s.result = None;
            }
            Err(e) => tracing::warn!(session = %self.id, %e, "restart refused"),
        }
        self.publish_status()
    }

    fn close(&mut self, by: Option<ShutdownKind>) -> SessionStatus {
        if let Some(kind) = by {
            self.sim.halt(kind);
        }
        {
            let mut s = lock(&self.handle.status);
            s.state = SessionState::Closed;
            s.closed_by = by;
            s.result = self.sim.result().ok();
            s.tick = self.sim.tick();
            s.time = self.sim.state().time;
        }
        tracing::info!(session = %self.id, closed_by = ?by, "session closed");
        self.publish_status()
    }

    fn handle_command(&mut self, cmd: Option<Command>) -> Next {
        match cmd {
            Some(Command::Restart(gains, ack)) => {
                let status = self.restart(gains);
                let _ = ack.send(status);
                Next::Continue
            }
            Some(Command::Close(ack)) => {
                let status = self.close(None);
                let _ = ack.send(status);
                Next::Stop
            }
            None => Next::Stop,
        }
    }

    /// Advances one tick and streams it if due.
    fn step(&mut self, decimator: &Decimator) {
        if let Err(e) = self.sim.step() {
            tracing::warn!(session = %self.id, %e, "simulation step failed");
            self.sim.halt(ShutdownKind::SimulationTimeout);
        }
        let finished = self.sim.is_finished();
        if let Some(rec) = self.sim.trace().records.last() {
            {
                let mut s = lock(&self.handle.status);
                s.tick = rec.tick;
                s.time = rec.time;
            }
            if decimator.keep(rec, finished) {
                let frame = Telemetry::from_record(&self.id, self.run, rec);
                let _ = self
                    .handle
                    .telemetry
                    .send(Arc::new(Message::Telemetry(frame)));
            }
        }
        if finished {
            {
                let mut s = lock(&self.handle.status);
                s.state = SessionState::Finished;
                s.result = self.sim.result().ok();
            }
            self.publish_status();
        }
    }

    async fn drive(mut self, mut commands: mpsc::UnboundedReceiver<Command>) {
        let decimator = Decimator::new(self.settings.plant.dt, TELEMETRY_HZ);
        let period = (self.speedup > 0.0)
            .then(|| Duration::from_secs_f64(self.settings.plant.dt / self.speedup));
        let mut next_tick = Instant::now();
        loop {
            if self.sim.is_finished() {
                let deadline =
                    *lock(&self.handle.last_seen) + Self::limit() + Duration::from_millis(1);
                tokio::select! {
                    cmd = commands.recv() => {
                        if let Next::Stop = self.handle_command(cmd) {
                            return;
                        }
                        next_tick = Instant::now();
                    }
                    _ = tokio::time::sleep_until(deadline) => {
                        if self.silence() > Self::limit() {
                            self.close(Some(ShutdownKind::SimulationTimeout));
                            return;
                        }
                    }
                }
                continue;
            }
            match commands.try_recv() {
                Ok(cmd) => {
                    if let Next::Stop = self.handle_command(Some(cmd)) {
                        return;
                    }
                    next_tick = Instant::now();
                    continue;
                }
                Err(mpsc::error::TryRecvError::Disconnected) => return,
                Err(mpsc::error::TryRecvError::Empty) => {}
            }
            if self.silence() > Self::limit() {
                self.close(Some(ShutdownKind::SimulationTimeout));
                return;
            }
            self.step(&decimator);
            match period {
                Some(p) => {
                    next_tick += p;
                    tokio::time::sleep_until(next_tick).await;
                }
                None if self.sim.tick().is_multiple_of(YIELD_EVERY) => {
                    tokio::task::yield_now().await
                }
                None => {}
            }
        }
    }
}
