//! Empirical VaR/CVaR estimation, finite-sample concentration bounds for the
//! estimators, and a seeded Monte Carlo harness that checks each bound
//! against distributions with closed-form risk values.

pub mod cli;
pub mod distributions;
pub mod error;
pub mod estimators;

pub use distributions::{DistributionSpec, Family, SubExponentialTail, SubGaussianTail, TailModel};
pub use error::{Error, Result};
pub use estimators::{
    empirical_cdf, empirical_quantile, estimate_cvar, estimate_var, estimate_var_cvar, RiskLevel,
    SortedSample,
};
pub mod harness;
pub mod tailbounds;

mod serde_float;
