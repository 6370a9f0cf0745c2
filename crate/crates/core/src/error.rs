use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library. Variants map onto the failure modes of
/// the automaton, the numeric core, and the data pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid transition at step {step}: {action} violates mask ({reason})")]
    Transition {
        action: &'static str,
        step: usize,
        reason: &'static str,
    },

    #[error("invalid derivation at step {step}: {reason}")]
    Derivation { step: usize, reason: String },

    #[error("non-projective tree: arcs {a:?} and {b:?} cross (1-based head, dependent)")]
    NonProjective {
        a: (usize, usize),
        b: (usize, usize),
    },

    #[error("enumeration guard: n = {n} outside 1..={max}")]
    EnumerationGuard { n: usize, max: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
