use thiserror::Error;

/// Errors surfaced by the engine. Display strings for the contract-level
/// failures are stable kebab-case codes so they can be matched by callers
/// on the other side of the C ABI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate-bounds")]
    DegenerateBounds,
    #[error("no-such-app: {0}")]
    NoSuchApp(String),
    #[error("slot-mismatch: {0}")]
    SlotMismatch(String),
    #[error("unlocatable-element")]
    UnlocatableElement,
    #[error("no-such-skill: {0}")]
    NoSuchSkill(String),
    #[error("not-flagged: {0}")]
    NotFlagged(String),
    #[error("store-corrupt: {key}: {reason}")]
    StoreCorrupt { key: String, reason: String },
    #[error("parse-failure: {0}")]
    ParseFailure(String),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("invalid-scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid-plan: {0}")]
    InvalidPlan(String),
    #[error("invalid-action: {0}")]
    InvalidAction(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Regex(#[from] regex::Error),
}

impl Error {
    /// Short stable code for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateBounds => "degenerate-bounds",
            Error::NoSuchApp(_) => "no-such-app",
            Error::SlotMismatch(_) => "slot-mismatch",
            Error::UnlocatableElement => "unlocatable-element",
            Error::NoSuchSkill(_) => "no-such-skill",
            Error::NotFlagged(_) => "not-flagged",
            Error::StoreCorrupt { .. } => "store-corrupt",
            Error::ParseFailure(_) => "parse-failure",
            Error::Precondition(_) => "precondition",
            Error::InvalidScenario(_) => "invalid-scenario",
            Error::InvalidPlan(_) => "invalid-plan",
            Error::InvalidAction(_) => "invalid-action",
            Error::Backend(_) => "backend",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Regex(_) => "regex",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
