use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("`{family}` expects {expected} parameters, got {got}")]
    Arity {
        family: String,
        expected: String,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("state blew up on path {path} at step {step}")]
    BlowUp { path: usize, step: usize },

    #[error("stability bound violated: {n_steps} steps requested, at least {suggested} required")]
    Cfl { n_steps: usize, suggested: usize },

    #[error("density below positivity floor at node {node}")]
    NonPositiveDensity { node: usize },

    #[error("query {coord:?} lies outside the grid")]
    OutsideGrid { coord: Vec<f64> },

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error("time {t} is not on the ensemble grid (dt = {dt})")]
    OffGrid { t: f64, dt: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
