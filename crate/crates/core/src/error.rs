use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("joint {joint} value {value} outside limits [{lower}, {upper}]")]
    OutOfLimits {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("normalized component {index} = {value} outside [-1, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("invalid arm geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("no feasible query after {tries} tries")]
    Infeasible { tries: usize },
    #[error("query start configuration is in collision")]
    InfeasibleQuery,
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("no episode in progress")]
    NotReset,
    #[error("goal is missing the `{0}` field required by the goal representation")]
    MissingGoalField(&'static str),
    #[error("go-to-goal needs a configuration goal")]
    MissingConfigGoal,
    #[error("planner endpoint is in collision ({0})")]
    InvalidEndpoint(&'static str),
    #[error("action step {index} has norm {norm} above bound {bound}")]
    StepTooLarge { index: usize, norm: f64, bound: f64 },
    #[error("path must contain at least two nodes")]
    PathTooShort,
    #[error("plan verification failed at step {step}: {reason}")]
    VerificationFailed {
        step: usize,
        reason: VerificationFailure,
    },
    #[error("episode is empty")]
    EmptyEpisode,
    #[error("no demonstration available")]
    NoDemoAvailable,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationFailure {
    Timeout,
    Collision,
}

impl std::fmt::Display for VerificationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VerificationFailure::Timeout => write!(f, "timeout"),
            VerificationFailure::Collision => write!(f, "collision"),
        }
    }
}
