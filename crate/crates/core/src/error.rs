use thiserror::Error;

/// Errors raised by model construction, simulation and the inference algorithms.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model component `{0}` is not defined")]
    MissingComponent(&'static str),

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("duplicate name `{0}`")]
    DuplicateName(String),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("simulation diverged at t = {time}: state `{state}` became {value}")]
    SimulationDiverged {
        time: f64,
        state: String,
        value: f64,
    },

    #[error("parameter transform produced a non-finite value for `{0}`")]
    TransformDomain(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("particle filter failed at observation {step}: every particle weight is zero")]
    FilterFailure { step: usize },

    #[error("singular probe covariance{}", collinear_suffix(.collinear))]
    SingularCovariance { collinear: Vec<String> },

    #[error("probe `{0}` has zero variance across simulations")]
    ZeroVariance(String),

    #[error("prior density is zero at the starting parameters")]
    ZeroPrior,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn collinear_suffix(names: &[String]) -> String {
    if names.is_empty() {
        String::from(" (numerically singular)")
    } else {
        format!(": collinear probes {}", names.join(", "))
    }
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
