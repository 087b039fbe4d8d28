use thiserror::Error;

/// A TNTP parse failure, with the 1-based line it occurred on.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("negative flow {0}")]
    NegativeFlow(f64),

    #[error("time {time} is below the free-flow time {free_flow_time}")]
    BelowFreeFlow { time: f64, free_flow_time: f64 },

    #[error("negative time {time} on edge {edge}")]
    NegativeTime { edge: usize, time: f64 },

    #[error("root finder did not converge after {0} iterations")]
    RootFinder(usize),

    /// Positive demand between a pair with no admissible route.
    #[error("no route from node {origin} to node {destination} (internal ids)")]
    Unreachable { origin: usize, destination: usize },

    #[error("{count} OD pairs are not reachable within {walk_cap} edges")]
    UnreachableWithinCap { count: usize, walk_cap: usize },

    #[error("line search exceeded {cap} doublings (L = {lipschitz:e})")]
    DoublingCap { cap: u32, lipschitz: f64 },

    /// The step size overflowed: the objective looks unbounded below, which
    /// for stable dynamics means demand cannot be routed within capacities.
    #[error("step size overflowed after {iterations} iterations; the dual objective appears unbounded below")]
    Diverged { iterations: usize },

    #[error("oracle returned a non-finite value")]
    NonFinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
