use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The quantile levels `alpha -/+ 1/(2 n^s)` leave (0, 1).
    #[error(
        "infeasible interval parameters: alpha={alpha}, s={s}, n={n} puts a quantile level outside (0, 1); \
         the smallest feasible n is {min_n}"
    )]
    Infeasible { alpha: f64, s: f64, n: usize, min_n: u64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("condition `{condition}` violated: observed {observed}, threshold {threshold}")]
    ConditionViolation {
        condition: String,
        observed: f64,
        threshold: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
