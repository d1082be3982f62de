use thiserror::Error;

/// Errors raised by kernel construction, solvers, simulation and IO.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("negative rate {rate} on pair ({from}, {to})")]
    NegativeRate { from: usize, to: usize, rate: f64 },
    #[error("non-finite rate {rate} on pair ({from}, {to})")]
    NonFiniteRate { from: usize, to: usize, rate: f64 },
    #[error("diagonal entry ({state}, {state}) is not a jump")]
    DiagonalEntry { state: usize },
    #[error("state {state} out of range for {n_states} states")]
    StateOutOfRange { state: usize, n_states: usize },
    #[error("duplicate rate entry for pair ({from}, {to})")]
    DuplicateRateEntry { from: usize, to: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel has no states")]
    EmptyStateSpace,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("kernel is reducible: embedded graph is not strongly connected")]
    Reducible,
    #[error("state set {0} is empty")]
    EmptySet(&'static str),
    #[error("sets A and B overlap at state {0}")]
    SetsOverlap(usize),
    #[error("interior state {0} cannot reach A ∪ B")]
    UnreachableBoundary(usize),
    #[error("committor solution violates [0,1] by {0:e}")]
    MaximumPrinciple(f64),
    #[error(
        "iterative solver did not converge: residual {residual:e} after {iterations} iterations"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("terminal cost is +inf everywhere")]
    ImproperTerminal,
    #[error("time step too large: dt * c_L = {0} exceeds 0.5")]
    StepTooLarge(f64),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error(
        "backward solution vanishes at state {state} (node {node}) while the density charges it"
    )]
    VanishingPotential { state: usize, node: usize },
    #[error("value is infinite: initial law charges state {0} where psi_0 = -inf")]
    InfiniteValue(usize),

    #[error("h vanishes at non-absorbing state {0}")]
    ZeroDivisor(usize),
    #[error("field is negative at state {0}")]
    NegativeField(usize),
    #[error("state {0} is absorbing for this control")]
    AbsorbingState(usize),

    #[error(
        "process is stuck at absorbing state {state} at time {time} before the stop condition"
    )]
    StuckAbsorbing { state: usize, time: f64 },
    #[error("start state {0} is excluded from the controlled state space")]
    ExcludedStart(usize),
    #[error("no paths supplied")]
    NoPaths,
    #[error("need at least {needed} paths, got {got}")]
    TooFewPaths { needed: usize, got: usize },
    #[error("path jumps across ({from}, {to}) which is not in the kernel support")]
    UnsupportedJump { from: usize, to: usize },
    #[error("stop rule has neither sets nor a horizon nor a jump cap")]
    InvalidStopRule,
    #[error("control is unbounded: {0}")]
    UnboundedControl(String),

    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("invalid field `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("invalid config: {0}")]
    Config(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
