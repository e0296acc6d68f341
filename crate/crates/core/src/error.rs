use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("unknown policy identifier `{0}`")]
    UnknownPolicy(String),

    #[error("background population is empty")]
    EmptyPopulation,

    #[error("focal count {count} outside [1, {players}]")]
    FocalCountOutOfRange { count: usize, players: usize },

    #[error("scenario has no background players")]
    NoBackground,

    #[error("scenarios with {0} and {1} focal players cannot be compared")]
    FocalCountMismatch(usize, usize),

    #[error(
        "exact enumeration needs {leaves} leaves (limit {limit}); use the stochastic solver path"
    )]
    EnumerationTooLarge { leaves: f64, limit: f64 },

    #[error("invalid distribution at history {history}: {reason}")]
    InvalidDistribution { history: String, reason: String },

    #[error("prior has {got} weights but the scenario set has {expected} scenarios")]
    PriorMismatch { expected: usize, got: usize },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("cannot project an empty vector onto the simplex")]
    EmptyVector,

    #[error("epsilon must lie in [0, 2], got {0}")]
    InvalidEpsilon(f64),

    #[error("scenario set has no universalisation scenario")]
    MissingUniversalisation,

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("solver diverged at iteration {iter}: {reason}")]
    Diverged {
        iter: usize,
        reason: String,
        trace: Box<crate::solver::SolverTrace>,
    },

    #[error("epsilon-net precondition violated: {0}")]
    NotAnEpsilonNet(String),

    #[error("linear program: {0}")]
    Lp(String),

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
