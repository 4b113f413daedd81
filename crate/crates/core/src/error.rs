use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("power flow diverged after {iterations} iterations (max mismatch {mismatch:.3e} p.u.)")]
    Divergence { iterations: usize, mismatch: f64 },

    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("sensitivity solve failed for input `{input}`: {source}")]
    Sensitivity {
        input: String,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("QP solver did not converge within {0} iterations")]
    QpIterationLimit(usize),

    #[error("measurement taken at t={measured}s is stale at t={now}s (cycle {cycle}s)")]
    StaleMeasurement { measured: f64, now: f64, cycle: f64 },

    #[error("invalid objective: {0}")]
    Objective(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("tracking error undefined for a zero set point")]
    UndefinedMetric,

    #[error("missing measurements: {0}")]
    MissingMeasurements(String),
}

impl Error {
    /// True for plant failures (divergence, singular Jacobian), including
    /// those wrapped by a sensitivity computation.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::SingularJacobian { .. } | Error::QpIterationLimit(_) => {
                true
            }
            Error::Sensitivity { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
