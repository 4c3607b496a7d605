use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric input was NaN or infinite.
    #[error("non-finite value in `{field}`")]
    NonFinite { field: &'static str },

    /// A value is finite but outside its admissible range.
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("unknown gain preset `{0}` (known: tcp-original, tcp-tuned)")]
    UnknownPreset(String),

    #[error("unknown infraction kind `{0}`")]
    UnknownInfraction(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("trace checksum mismatch: recorded {recorded}, computed {computed}")]
    ChecksumMismatch { recorded: String, computed: String },

    #[error("replayed score {replayed} differs from recorded score {recorded}")]
    ReplayMismatch { recorded: f64, replayed: f64 },

    #[error("grid of {size} points exceeds the evaluation budget of {budget}")]
    BudgetExceeded { size: usize, budget: usize },

    #[error("cannot aggregate an empty run list")]
    EmptyRuns,

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors caused by user input (configuration, presets, payloads)
    /// rather than by internal failures or corrupted artifacts.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::Invalid { .. }
                | Error::UnknownPreset(_)
                | Error::UnknownScenario(_)
                | Error::BudgetExceeded { .. }
                | Error::Config(_)
        )
    }
}

pub(crate) fn ensure_finite(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { field })
    }
}
