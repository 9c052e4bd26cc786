use alloc::string::String;

use crate::signal::SignalKind;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing signal kind {0}")]
    MissingKind(SignalKind),

    #[error("seed storm list is empty")]
    EmptySeeds,

    #[error("all {0} search trials failed")]
    AllTrialsFailed(usize),

    #[error("unknown candidate {0}")]
    UnknownCandidate(String),

    #[error("candidate {0} is already decided")]
    AlreadyDecided(String),

    #[error("iteration {iteration} still has {pending} pending candidates")]
    IterationOpen { iteration: u32, pending: usize },

    #[error("no iteration is open")]
    NoOpenIteration,

    #[error("campaign already converged")]
    AlreadyConverged,

    #[error("span conflict: {0}")]
    SpanConflict(String),
}
