use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("prior DLE probability {value} at level {level} is outside (0, 1)")]
    PriorProbabilityOutOfRange { level: usize, value: f64 },

    #[error("arm index {arm} outside a grid with {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },

    #[error("posterior integration failed: {0}")]
    Integration(String),

    #[error("no boundary pair satisfies the type I error cap of {cap}")]
    InfeasibleBoundaries { cap: f64 },

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("failed to parse configuration: {0}")]
    Parse(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("scenario `{scenario}` failed: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
