use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),

    #[error("invalid transport plan: {0}")]
    InvalidPlan(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The plain-domain iteration produced inf/NaN; retry with the log-domain solver.
    #[error("non-finite value during Sinkhorn iteration {iteration} (lambda too large for plain domain?)")]
    NonFinite { iteration: usize },

    #[error("{what} of size {size} exceeds the enumeration limit {max}")]
    TooLarge {
        what: &'static str,
        size: usize,
        max: usize,
    },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("class {label} has no support instances")]
    EmptyClass { label: usize },

    #[error("need at least {needed} classes for this request, have {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("benchmark needs at least 2 episodes, got {0}")]
    TooFewEpisodes(usize),

    #[error("training diverged at episode {episode}: loss {loss} stayed above 10x the initial loss {initial}")]
    Diverged {
        episode: usize,
        loss: f64,
        initial: f64,
    },

    #[error("unknown config key `{key}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey {
        key: String,
        suggestion: Option<String>,
    },

    #[error("config key `{key}`: cannot parse `{value}` as {expected}")]
    ConfigValue {
        key: String,
        value: String,
        expected: &'static str,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_mismatch(
    context: &'static str,
    expected: impl std::fmt::Debug,
    found: impl std::fmt::Debug,
) -> Error {
    Error::ShapeMismatch {
        context,
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    }
}
