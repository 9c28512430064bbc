//! Moment-generating-function tail models.
//!
//! `SubGaussian { sigma, mu }`: `E exp(l X) <= exp(l mu + l^2 sigma^2 / 2)` for all real `l`.
//! `SubExponential { sigma, b, b_prime, mu }`: the same bound for `|l| < 1/b`, with the
//! Chernoff parameter capped at `b_prime < 1/b`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::spec_grammar::ParsedSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubGaussianTail {
    sigma: f64,
    mu: f64,
}

impl SubGaussianTail {
    pub fn new(sigma: f64, mu: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sub-Gaussian sigma must be positive, got {sigma}")));
        }
        if !mu.is_finite() {
            return Err(Error::invalid(format!("tail mean must be finite, got {mu}")));
        }
        Ok(Self { sigma, mu })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Log of the MGF bound on `E exp(l (X - mu))`.
    pub fn centered_log_mgf_bound(&self, lambda: f64) -> f64 {
        0.5 * lambda * lambda * self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubExponentialTail {
    sigma: f64,
    b: f64,
    b_prime: f64,
    mu: f64,
}

impl SubExponentialTail {
    pub fn new(sigma: f64, b: f64, b_prime: f64, mu: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sub-exponential sigma must be positive, got {sigma}")));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::invalid(format!("sub-exponential b must be positive, got {b}")));
        }
        if !(b_prime > 0.0 && b_prime < 1.0 / b) {
            return Err(Error::invalid(format!(
                "b_prime must lie in (0, 1/b) = (0, {}), got {b_prime}",
                1.0 / b
            )));
        }
        if !mu.is_finite() {
            return Err(Error::invalid(format!("tail mean must be finite, got {mu}")));
        }
        Ok(Self { sigma, b, b_prime, mu })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn b_prime(&self) -> f64 {
        self.b_prime
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn centered_log_mgf_bound(&self, lambda: f64) -> f64 {
        0.5 * lambda * lambda * self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TailModel {
    SubGaussian(SubGaussianTail),
    SubExponential(SubExponentialTail),
}

impl TailModel {
    pub fn mu(&self) -> f64 {
        match self {
            TailModel::SubGaussian(t) => t.mu,
            TailModel::SubExponential(t) => t.mu,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            TailModel::SubGaussian(t) => t.sigma,
            TailModel::SubExponential(t) => t.sigma,
        }
    }
}

impl fmt::Display for TailModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailModel::SubGaussian(t) => write!(f, "subgauss:sigma={},mu={}", t.sigma, t.mu),
            TailModel::SubExponential(t) => write!(
                f,
                "subexp:sigma={},b={},b_prime={},mu={}",
                t.sigma, t.b, t.b_prime, t.mu
            ),
        }
    }
}

impl FromStr for TailModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = ParsedSpec::parse(s)?;
        match spec.family {
            "subgauss" | "subgaussian" => {
                let [sigma, mu] = spec.take(["sigma", "mu"])?;
                Ok(TailModel::SubGaussian(SubGaussianTail::new(sigma, mu)?))
            }
            "subexp" | "subexponential" => {
                let [sigma, b, b_prime, mu] = spec.take(["sigma", "b", "b_prime", "mu"])?;
                Ok(TailModel::SubExponential(SubExponentialTail::new(sigma, b, b_prime, mu)?))
            }
            other => Err(Error::invalid(format!(
                "unknown tail model `{other}` (expected subgauss or subexp)"
            ))),
        }
    }
}

impl TryFrom<String> for TailModel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TailModel> for String {
    fn from(t: TailModel) -> String {
        t.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(SubGaussianTail::new(0.0, 0.0).is_err());
        assert!(SubExponentialTail::new(2.0, 2.0, 0.5, 1.0).is_err());
        assert!(SubExponentialTail::new(2.0, 2.0, 0.0, 1.0).is_err());
        assert!(SubExponentialTail::new(2.0, 2.0, 0.25, 1.0).is_ok());
    }

    #[test]
    fn grammar_round_trip() {
        for src in ["subgauss:sigma=1,mu=0", "subexp:sigma=2,b=2,b_prime=0.25,mu=1"] {
            let t: TailModel = src.parse().unwrap();
            assert_eq!(t.to_string(), src);
        }
        assert!("subgauss:sigma=1".parse::<TailModel>().is_err());
        assert!("subgauss:sigma=1,mu=0,b=3".parse::<TailModel>().is_err());
        assert!("heavy:sigma=1".parse::<TailModel>().is_err());
    }
}
