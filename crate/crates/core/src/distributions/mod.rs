//! Reference distribution families with closed-form VaR/CVaR.
//!
//! Each family is continuous with a strictly increasing CDF on its support,
//! so `v_alpha = F^{-1}(alpha)` is unique. Sampling is by inverse transform
//! from the seeded ChaCha8 streams in [`rng`].

pub mod normal;
pub mod rng;
mod spec_grammar;
pub mod tail;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{RiskLevel, SortedSample};
use spec_grammar::ParsedSpec;
pub use tail::{SubExponentialTail, SubGaussianTail, TailModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Gaussian { mu: f64, sigma: f64 },
    Exponential { rate: f64 },
    Uniform { a: f64, b: f64 },
}

/// A validated member of one of the catalog families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DistributionSpec(Family);

impl DistributionSpec {
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!(
                "gaussian needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        Ok(Self(Family::Gaussian { mu, sigma }))
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::invalid(format!("exponential needs rate > 0, got {rate}")));
        }
        Ok(Self(Family::Exponential { rate }))
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid(format!("uniform needs finite a < b, got a={a}, b={b}")));
        }
        Ok(Self(Family::Uniform { a, b }))
    }

    pub fn family(&self) -> Family {
        self.0
    }

    pub fn family_name(&self) -> &'static str {
        match self.0 {
            Family::Gaussian { .. } => "gaussian",
            Family::Exponential { .. } => "exponential",
            Family::Uniform { .. } => "uniform",
        }
    }

    /// The `key=value,...` part of the spec string.
    pub fn params_string(&self) -> String {
        match self.0 {
            Family::Gaussian { mu, sigma } => format!("mu={mu},sigma={sigma}"),
            Family::Exponential { rate } => format!("rate={rate}"),
            Family::Uniform { a, b } => format!("a={a},b={b}"),
        }
    }

    pub fn mean(&self) -> f64 {
        match self.0 {
            Family::Gaussian { mu, .. } => mu,
            Family::Exponential { rate } => 1.0 / rate,
            Family::Uniform { a, b } => 0.5 * (a + b),
        }
    }

    pub fn median(&self) -> f64 {
        match self.0 {
            Family::Gaussian { mu, .. } => mu,
            Family::Exponential { rate } => std::f64::consts::LN_2 / rate,
            Family::Uniform { a, b } => 0.5 * (a + b),
        }
    }

    /// Closed support `[lo, hi]`, possibly infinite.
    pub fn support(&self) -> (f64, f64) {
        match self.0 {
            Family::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Family::Exponential { .. } => (0.0, f64::INFINITY),
            Family::Uniform { a, b } => (a, b),
        }
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::invalid("cdf evaluated at NaN"));
        }
        Ok(self.cdf_unchecked(x))
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::invalid("density evaluated at NaN"));
        }
        Ok(self.density_unchecked(x))
    }

    pub(crate) fn cdf_unchecked(&self, x: f64) -> f64 {
        match self.0 {
            Family::Gaussian { mu, sigma } => normal::cdf((x - mu) / sigma),
            Family::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -libm::expm1(-rate * x)
                }
            }
            Family::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
        }
    }

    /// `1 - F(x)`, accurate in the upper tail.
    pub(crate) fn sf_unchecked(&self, x: f64) -> f64 {
        match self.0 {
            Family::Gaussian { mu, sigma } => normal::sf((x - mu) / sigma),
            Family::Exponential { rate } => {
                if x <= 0.0 {
                    1.0
                } else {
                    libm::exp(-rate * x)
                }
            }
            Family::Uniform { a, b } => ((b - x) / (b - a)).clamp(0.0, 1.0),
        }
    }

    pub(crate) fn density_unchecked(&self, x: f64) -> f64 {
        match self.0 {
            Family::Gaussian { mu, sigma } => normal::pdf((x - mu) / sigma) / sigma,
            Family::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * libm::exp(-rate * x)
                }
            }
            Family::Uniform { a, b } => {
                if (a..=b).contains(&x) {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
        }
    }

    /// `P(lo < X <= hi)`, using the survival function above the median.
    pub fn prob_between(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let p = if lo >= self.median() {
            self.sf_unchecked(lo) - self.sf_unchecked(hi)
        } else {
            self.cdf_unchecked(hi) - self.cdf_unchecked(lo)
        };
        p.max(0.0)
    }

    /// Inverse CDF on the open interval (0, 1).
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {p}")));
        }
        Ok(self.quantile_unchecked(p))
    }

    #[inline]
    fn quantile_unchecked(&self, p: f64) -> f64 {
        match self.0 {
            Family::Gaussian { mu, sigma } => mu + sigma * normal::quantile(p),
            Family::Exponential { rate } => -libm::log1p(-p) / rate,
            Family::Uniform { a, b } => a + (b - a) * p,
        }
    }

    pub fn true_var(&self, level: RiskLevel) -> f64 {
        self.quantile_unchecked(level.value())
    }

    pub fn true_cvar(&self, level: RiskLevel) -> f64 {
        let var = self.true_var(level);
        match self.0 {
            Family::Gaussian { mu, sigma } => {
                let z = (var - mu) / sigma;
                mu + sigma * normal::pdf(z) / level.tail_mass()
            }
            // Memorylessness: the overshoot above v is again Exp(rate).
            Family::Exponential { rate } => var + 1.0 / rate,
            Family::Uniform { b, .. } => 0.5 * (var + b),
        }
    }

    /// `n` i.i.d. draws from stream 0 of `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SortedSample> {
        self.sample_stream(n, seed, 0)
    }

    /// `n` i.i.d. draws from the `(seed, stream)` substream.
    pub fn sample_stream(&self, n: usize, seed: u64, stream: u64) -> Result<SortedSample> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let mut rng = rng::stream_rng(seed, stream);
        let values = (0..n)
            .map(|_| self.quantile_unchecked(rng::open_unit(&mut rng)))
            .collect();
        SortedSample::new(values)
    }

    /// Catalogued tail parameters. The sub-exponential entry is a conservative
    /// proxy, not the tightest pair.
    pub fn default_tail_model(&self) -> TailModel {
        match self.0 {
            Family::Gaussian { mu, sigma } => {
                TailModel::SubGaussian(SubGaussianTail::new(sigma, mu).expect("validated"))
            }
            // Hoeffding's lemma for a variable bounded in [a, b].
            Family::Uniform { a, b } => TailModel::SubGaussian(
                SubGaussianTail::new(0.5 * (b - a), 0.5 * (a + b)).expect("validated"),
            ),
            // E exp(s (Y - 1)) = e^{-s} / (1 - s) <= e^{2 s^2} for |s| < 1/2 and Y ~ Exp(1);
            // rescale by 1/rate.
            Family::Exponential { rate } => TailModel::SubExponential(
                SubExponentialTail::new(2.0 / rate, 2.0 / rate, rate / 4.0, 1.0 / rate)
                    .expect("validated"),
            ),
        }
    }

    /// Exact `log E exp(l (X - mean))`, `None` where the MGF diverges.
    pub fn centered_log_mgf(&self, lambda: f64) -> Option<f64> {
        match self.0 {
            Family::Gaussian { sigma, .. } => Some(0.5 * lambda * lambda * sigma * sigma),
            Family::Exponential { rate } => {
                if lambda >= rate {
                    None
                } else {
                    let s = lambda / rate;
                    Some(-s - libm::log1p(-s))
                }
            }
            Family::Uniform { a, b } => {
                let h = 0.5 * (b - a) * lambda;
                if h.abs() < 1e-8 {
                    Some(h * h / 6.0)
                } else {
                    // log(sinh(h) / h)
                    let h = h.abs();
                    Some(h + libm::log1p(-libm::exp(-2.0 * h)) - std::f64::consts::LN_2 - libm::log(h))
                }
            }
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.family_name(), self.params_string())
    }
}

impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = ParsedSpec::parse(s)?;
        match spec.family {
            "gaussian" => {
                let [mu, sigma] = spec.take(["mu", "sigma"])?;
                Self::gaussian(mu, sigma)
            }
            "exponential" => {
                let [rate] = spec.take(["rate"])?;
                Self::exponential(rate)
            }
            "uniform" => {
                let [a, b] = spec.take(["a", "b"])?;
                Self::uniform(a, b)
            }
            other => Err(Error::invalid(format!(
                "unknown distribution family `{other}` (expected gaussian, exponential or uniform)"
            ))),
        }
    }
}

impl TryFrom<String> for DistributionSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DistributionSpec> for String {
    fn from(d: DistributionSpec) -> String {
        d.to_string()
    }
}
