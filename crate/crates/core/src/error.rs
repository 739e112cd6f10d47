use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("truncation tail mass {tail:.3e} exceeds tolerance {tol:.3e} ({context})")]
    Truncation { tail: f64, tol: f64, context: String },

    #[error("zero detuning for mode {0}: resonant drives are not supported")]
    ZeroDetuning(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("rank-deficient problem: {0}")]
    RankDeficient(String),

    #[error("herald probability {0:.3e} is below 1e-6")]
    DegenerateHerald(f64),

    #[error("capacity exceeded: {required} basis states requested, budget is {budget}")]
    Capacity { required: usize, budget: usize },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Truncation { .. }
                | Error::Convergence { .. }
                | Error::RankDeficient(_)
                | Error::DegenerateHerald(_)
                | Error::Infeasible(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidInput(_) => "invalid-input",
            Error::Truncation { .. } => "truncation",
            Error::ZeroDetuning(_) => "zero-detuning",
            Error::Unsupported(_) => "unsupported",
            Error::Convergence { .. } => "convergence",
            Error::RankDeficient(_) => "rank-deficient",
            Error::DegenerateHerald(_) => "degenerate-herald",
            Error::Capacity { .. } => "capacity",
            Error::Infeasible(_) => "infeasible",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}
