//! Versioned messages exchanged with the dashboard service.
//!
//! Every message is one JSON object with a protocol version `"v"` and a
//! `"type"` tag, for example
//!
//! ```json
//! {"v":1,"type":"gain_submission","session":"s1","gains":{"kp":12.0}}
//! ```
//!
//! The field-by-field schema is documented in `docs/formats.md`.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::control::{GainSet, Param};
use crate::error::Error;
use crate::fusion::Situation;
use crate::scenario::{Scenario, WeatherKind};
use crate::scoring::{RunResult, ScoreCard, ShutdownKind};
use crate::suite::Comparison;
use crate::trace::{TickEvent, TickRecord};
use crate::tuner::SearchSpace;

pub const WIRE_VERSION: u32 = 1;
/// Rate at which telemetry is streamed; traces keep every tick.
pub const TELEMETRY_HZ: f64 = 10.0;

/// A message with its protocol version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(flatten)]
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Presets { presets: Vec<PresetInfo> },
    Scenarios { scenarios: Vec<ScenarioInfo> },
    StartSession(StartSession),
    GainSubmission(GainSubmission),
    Heartbeat { session: String },
    SessionStatus(SessionStatus),
    Telemetry(Telemetry),
    Scorecard(ScorecardMessage),
    Comparison(Box<Comparison>),
    Error(ErrorMessage),
}

impl Message {
    /// The `"type"` tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Presets { .. } => "presets",
            Message::Scenarios { .. } => "scenarios",
            Message::StartSession(_) => "start_session",
            Message::GainSubmission(_) => "gain_submission",
            Message::Heartbeat { .. } => "heartbeat",
            Message::SessionStatus(_) => "session_status",
            Message::Telemetry(_) => "telemetry",
            Message::Scorecard(_) => "scorecard",
            Message::Comparison(_) => "comparison",
            Message::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetInfo {
    pub name: String,
    pub gains: GainSet,
}

impl PresetInfo {
    pub fn all() -> Vec<PresetInfo> {
        GainSet::PRESETS
            .iter()
            .map(|(name, gains)| PresetInfo {
                name: name.to_string(),
                gains: *gains,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub id: String,
    pub route: String,
    pub weather: WeatherKind,
    pub length: f64,
    pub actors: usize,
    pub time_budget: f64,
}

impl From<&Scenario> for ScenarioInfo {
    fn from(s: &Scenario) -> ScenarioInfo {
        ScenarioInfo {
            id: s.id.clone(),
            route: s.route.name.clone(),
            weather: s.weather.name,
            length: s.route.length(),
            actors: s.actors.len(),
            time_budget: s.time_budget,
        }
    }
}

/// Gains as typed by a client. Fields are checked one by one so that every
/// problem can be reported next to the slider that caused it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GainPayload {
    /// Base preset; the session's current gains when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Overrides on top of the base, keyed by parameter name.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub gains: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSession {
    pub scenario: String,
    #[serde(default)]
    pub repetition: u32,
    #[serde(flatten)]
    pub payload: GainPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSubmission {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub session: String,
    #[serde(flatten)]
    pub payload: GainPayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> FieldError {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl GainPayload {
    pub fn preset(name: &str) -> GainPayload {
        GainPayload {
            preset: Some(name.to_string()),
            gains: Map::new(),
        }
    }

    pub fn explicit(gains: &GainSet) -> GainPayload {
        let mut map = Map::new();
        for p in Param::ALL {
            map.insert(p.name().to_string(), Value::from(gains.get(p)));
        }
        GainPayload {
            preset: None,
            gains: map,
        }
    }

    pub fn with(mut self, param: Param, value: f64) -> GainPayload {
        self.gains
            .insert(param.name().to_string(), Value::from(value));
        self
    }

    /// Applies the payload to `base`, checking each field against `space`.
    /// All problems are reported, not only the first.
    pub fn resolve(&self, base: GainSet, space: &SearchSpace) -> Result<GainSet, Vec<FieldError>> {
        let mut errors = Vec::new();
        let mut gains = base;
        if let Some(name) = &self.preset {
            match GainSet::preset(name) {
                Ok(g) => gains = g,
                Err(_) => errors.push(FieldError::new(
                    "preset",
                    format!("unknown preset `{name}`"),
                )),
            }
        }
        for (key, value) in &self.gains {
            let Ok(param) = key.parse::<Param>() else {
                errors.push(FieldError::new(key.clone(), "unknown gain parameter"));
                continue;
            };
            let Some(x) = value.as_f64() else {
                errors.push(FieldError::new(key.clone(), "must be a number"));
                continue;
            };
            if !space.contains_value(param, x) {
                let i = param.index();
                errors.push(FieldError::new(
                    key.clone(),
                    format!("{x} lies outside [{}, {}]", space.lower[i], space.upper[i]),
                ));
                continue;
            }
            gains = gains.with(param, x);
        }
        if errors.is_empty() {
            if let Err(e) = gains.validate() {
                let field = match &e {
                    Error::Invalid { field, .. } | Error::NonFinite { field, .. } => {
                        field.to_string()
                    }
                    _ => "gains".to_string(),
                };
                errors.push(FieldError::new(field, e.to_string()));
            }
        }
        if errors.is_empty() {
            Ok(gains)
        } else {
            Err(errors)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    /// The current run ended; the session accepts new gains.
    Finished,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session: String,
    pub state: SessionState,
    pub scenario: String,
    pub repetition: u32,
    /// Incremented every time new gains restart the scenario.
    pub run: u32,
    pub gains: GainSet,
    pub tick: u64,
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_by: Option<ShutdownKind>,
}

/// One decimated telemetry frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub session: String,
    pub run: u32,
    pub tick: u64,
    pub time: f64,
    pub speed: f64,
    pub v_ref: f64,
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
    pub situation: Situation,
    pub arc_position: f64,
    pub lateral_offset: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<TickEvent>,
}

impl Telemetry {
    pub fn from_record(session: &str, run: u32, rec: &TickRecord) -> Telemetry {
        Telemetry {
            session: session.to_string(),
            run,
            tick: rec.tick,
            time: rec.time,
            speed: rec.state.speed,
            v_ref: rec.v_ref,
            throttle: rec.action.throttle,
            brake: rec.action.brake,
            steer: rec.action.steer,
            situation: rec.situation,
            arc_position: rec.state.arc_position,
            lateral_offset: rec.state.lateral_offset,
            events: rec.events.clone(),
        }
    }
}

/// Chooses which ticks are streamed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decimator {
    pub stride: u64,
}

impl Decimator {
    pub fn new(dt: f64, rate_hz: f64) -> Decimator {
        let stride = (1.0 / (dt * rate_hz)).round();
        Decimator {
            stride: if stride.is_finite() && stride >= 1.0 {
                stride as u64
            } else {
                1
            },
        }
    }

    /// Ticks on the stride are sent, as are ticks carrying events and the
    /// final tick of a run.
    pub fn keep(&self, rec: &TickRecord, last: bool) -> bool {
        last || !rec.events.is_empty() || rec.tick.is_multiple_of(self.stride)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorecardMessage {
    pub suite_seed: u64,
    pub repetitions: u32,
    pub gains: GainSet,
    pub scorecard: ScoreCard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    UnsupportedVersion,
    InvalidGains,
    UnknownScenario,
    UnknownSession,
    SessionLimit,
    SessionClosed,
    SeedMismatch,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

impl ErrorMessage {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> ErrorMessage {
        ErrorMessage {
            code,
            message: message.into(),
            fields: Vec::new(),
        }
    }

    pub fn invalid_gains(fields: Vec<FieldError>) -> ErrorMessage {
        ErrorMessage {
            code: ErrorCode::InvalidGains,
            message: "gain payload rejected".into(),
            fields,
        }
    }
}

impl From<Message> for Envelope {
    fn from(message: Message) -> Envelope {
        Envelope {
            v: WIRE_VERSION,
            message,
        }
    }
}

pub fn encode(message: &Message) -> String {
    #[derive(Serialize)]
    struct Out<'a> {
        v: u32,
        #[serde(flatten)]
        message: &'a Message,
    }
    serde_json::to_string(&Out {
        v: WIRE_VERSION,
        message,
    })
    .expect("wire messages always serialize")
}

/// Parses a message, rejecting other protocol versions.
pub fn decode(text: &str) -> Result<Message, ErrorMessage> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| ErrorMessage::new(ErrorCode::BadRequest, format!("invalid JSON: {e}")))?;
    decode_value(value)
}

pub fn decode_value(value: Value) -> Result<Message, ErrorMessage> {
    match value.get("v").and_then(Value::as_u64) {
        Some(v) if v == WIRE_VERSION as u64 => {}
        Some(v) => {
            return Err(ErrorMessage::new(
                ErrorCode::UnsupportedVersion,
                format!("protocol version {v} is not supported (expected {WIRE_VERSION})"),
            ))
        }
        None => {
            return Err(ErrorMessage::new(
                ErrorCode::BadRequest,
                "missing protocol version `v`",
            ))
        }
    }
    serde_json::from_value::<Envelope>(value)
        .map(|e| e.message)
        .map_err(|e| ErrorMessage::new(ErrorCode::BadRequest, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn space() -> SearchSpace {
        SearchSpace::default()
    }

    #[test]
    fn envelope_carries_version_and_tag() {
        let text = encode(&Message::Heartbeat {
            session: "s1".into(),
        });
        assert_eq!(text, r#"{"v":1,"type":"heartbeat","session":"s1"}"#);
        assert_eq!(
            Message::Heartbeat {
                session: "s1".into()
            }
            .kind(),
            "heartbeat"
        );
        assert_eq!(
            decode(&text).unwrap(),
            Message::Heartbeat {
                session: "s1".into()
            }
        );
    }

    #[test]
    fn other_versions_are_refused() {
        let err = decode(r#"{"v":2,"type":"heartbeat","session":"s1"}"#).unwrap_err();
        assert_eq!(err.code, ErrorCode::UnsupportedVersion);
        let err = decode(r#"{"type":"heartbeat","session":"s1"}"#).unwrap_err();
        assert_eq!(err.code, ErrorCode::BadRequest);
    }

    #[test]
    fn presets_list_the_published_rows() {
        let text = encode(&Message::Presets {
            presets: PresetInfo::all(),
        });
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(
            v["presets"][0],
            json!({"name": "tcp-original", "gains": {"kp": 5.0, "ki": 0.5, "kd": 1.0, "max_throttle": 0.75, "brake_speed": 0.4}})
        );
        assert_eq!(
            v["presets"][1]["gains"],
            json!({"kp": 11.0, "ki": 0.1, "kd": 1.0, "max_throttle": 0.8, "brake_speed": 0.45})
        );
    }

    #[test]
    fn gain_submission_overlays_current_gains() {
        let msg =
            decode(r#"{"v":1,"type":"gain_submission","session":"a","gains":{"kp":12}}"#).unwrap();
        let Message::GainSubmission(sub) = msg else {
            panic!()
        };
        let g = sub
            .payload
            .resolve(GainSet::TCP_ORIGINAL, &space())
            .unwrap();
        assert_eq!(g, GainSet::TCP_ORIGINAL.with(Param::Kp, 12.0));

        let p = GainPayload::preset("tcp-tuned").with(Param::Ki, 0.3);
        assert_eq!(
            p.resolve(GainSet::TCP_ORIGINAL, &space()).unwrap(),
            GainSet::TCP_TUNED.with(Param::Ki, 0.3)
        );
    }

    #[test]
    fn every_bad_field_is_reported() {
        let p: GainPayload = serde_json::from_value(json!({
            "preset": "fast",
            "gains": {"kp": 40.0, "ki": "high", "gain": 1.0, "kd": 2.0}
        }))
        .unwrap();
        let errors = p.resolve(GainSet::TCP_ORIGINAL, &space()).unwrap_err();
        let fields: Vec<&str> = errors.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["preset", "gain", "ki", "kp"]);
        assert!(errors[3].message.contains("outside [1, 20]"));
    }

    #[test]
    fn explicit_payload_round_trips() {
        let p = GainPayload::explicit(&GainSet::TCP_TUNED);
        assert_eq!(
            p.resolve(GainSet::TCP_ORIGINAL, &space()).unwrap(),
            GainSet::TCP_TUNED
        );
    }

    #[test]
    fn start_session_flattens_payload() {
        let msg = decode(r#"{"v":1,"type":"start_session","scenario":"S3","preset":"tcp-tuned"}"#)
            .unwrap();
        let Message::StartSession(s) = msg else {
            panic!()
        };
        assert_eq!(s.scenario, "S3");
        assert_eq!(s.repetition, 0);
        assert_eq!(s.payload.preset.as_deref(), Some("tcp-tuned"));
    }

    #[test]
    fn decimation_halves_twenty_hertz() {
        let d = Decimator::new(0.05, TELEMETRY_HZ);
        assert_eq!(d.stride, 2);
        assert_eq!(Decimator::new(0.2, TELEMETRY_HZ).stride, 1);
    }

    #[test]
    fn error_message_shape() {
        let text = encode(&Message::Error(ErrorMessage::invalid_gains(vec![
            FieldError::new("kp", "bad"),
        ])));
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "invalid_gains");
        assert_eq!(v["fields"][0]["field"], "kp");
    }
}
