use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event scheduled in the past: t={at_us}us < now={now_us}us")]
    ScheduledInPast { at_us: u64, now_us: u64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid flight plan: {0}")]
    FlightPlan(String),
    #[error("packet delivery ratio must be in (0, 1], got {0}")]
    Pdr(f64),
    #[error("unbounded expectation: packet delivery ratio is zero")]
    Unbounded,
    #[error("superframe order {so} exceeds beacon order {bo}")]
    SuperframeOrder { bo: u8, so: u8 },
    #[error("beacon order {0} out of range 0..=14")]
    BeaconOrder(u8),
    #[error("schedule infeasible: {demand} cells requested in a slotframe of {length}")]
    InfeasibleSchedule { demand: u64, length: u64 },
    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("empty hop list")]
    NoHops,
    #[error("unknown state {0:?}")]
    UnknownState(String),
    #[error("power profile has no entry for {0}")]
    MissingProfileEntry(&'static str),
}

impl ModelError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        ModelError::Parameter { name, reason: reason.into() }
    }
}

/// Errors from loading and running scenarios.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ScenarioError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Invalid { field: field.into(), message: message.into() }
    }
}
