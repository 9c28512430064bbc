//! Empirical CDF, order-statistic quantiles and the plug-in VaR/CVaR estimators.
//!
//! The quantile follows the infimum rule `inf { x : F_n(x) >= p }`, which on a
//! sorted sample is the order statistic `X_[k]` with `k` the smallest index such
//! that `k / n >= p` (i.e. `k = ceil(n p)`). The CVaR estimator is
//!
//! ```text
//! c_n = v_n + 1/(n (1 - alpha)) * sum_i (X_i - v_n)^+
//! ```
//!
//! with the denominator fixed at `n (1 - alpha)` rather than the number of tail
//! exceedances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Risk level `alpha` in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskLevel(f64);

impl RiskLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::invalid(format!("risk level must lie in (0, 1), got {alpha}")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 - alpha`.
    #[inline]
    pub fn tail_mass(self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for RiskLevel {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<RiskLevel> for f64 {
    fn from(level: RiskLevel) -> f64 {
        level.0
    }
}

/// An immutable, ascending, finite, non-empty sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSample {
    values: Vec<f64>,
}

impl SortedSample {
    /// Sorts `values` once. Rejects empty input and non-finite entries.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sample must contain at least one value"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "sample value at index {pos} is not finite ({})",
                values[pos]
            )));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(Self { values })
    }

    /// Wraps an already sorted buffer. Checks the invariants without re-sorting.
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sample must contain at least one value"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample contains non-finite values"));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("values are not sorted ascending"));
        }
        Ok(Self { values })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for API symmetry with slices.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// 1-based order statistic `X_[k]`.
    #[inline]
    pub fn order_statistic(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

/// Fraction of sample values `<= x`.
pub fn empirical_cdf(sample: &SortedSample, x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::invalid("empirical_cdf evaluated at NaN"));
    }
    let count = sample.values.partition_point(|&v| v <= x);
    Ok(count as f64 / sample.len() as f64)
}

/// Smallest rank `k` in `1..=n` with `k / n >= p`, evaluated in the same
/// floating-point arithmetic as the empirical CDF so that the result agrees
/// with a scan of `inf { x : F_n(x) >= p }`.
pub(crate) fn quantile_rank(n: usize, p: f64) -> usize {
    let nf = n as f64;
    let mut k = ((nf * p).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= p {
        k -= 1;
    }
    while k < n && (k as f64) / nf < p {
        k += 1;
    }
    k
}

/// `inf { x : F_n(x) >= p }` for `p` in (0, 1].
pub fn empirical_quantile(sample: &SortedSample, p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1], got {p}")));
    }
    Ok(sample.order_statistic(quantile_rank(sample.len(), p)))
}

pub fn estimate_var(sample: &SortedSample, level: RiskLevel) -> f64 {
    sample.order_statistic(quantile_rank(sample.len(), level.value()))
}

pub fn estimate_cvar(sample: &SortedSample, level: RiskLevel) -> f64 {
    let k = quantile_rank(sample.len(), level.value());
    let var = sample.order_statistic(k);
    cvar_from_var(sample, level, k, var)
}

/// Both estimates from one quantile lookup.
pub fn estimate_var_cvar(sample: &SortedSample, level: RiskLevel) -> (f64, f64) {
    let k = quantile_rank(sample.len(), level.value());
    let var = sample.order_statistic(k);
    (var, cvar_from_var(sample, level, k, var))
}

fn cvar_from_var(sample: &SortedSample, level: RiskLevel, k: usize, var: f64) -> f64 {
    // Entries at or below rank k contribute a zero positive part.
    let excess = NeumaierSum::from_iter(sample.values[k..].iter().map(|&x| x - var)).value();
    var + excess / (sample.len() as f64 * level.tail_mass())
}

/// Kolmogorov distance `sup_x |F_n(x) - F(x)|` against a continuous CDF.
pub fn ks_distance(sample: &SortedSample, cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sample.len() as f64;
    let values = sample.values();
    let mut sup = 0.0_f64;
    let mut i = 0;
    while i < values.len() {
        let x = values[i];
        let mut j = i;
        while j + 1 < values.len() && values[j + 1] == x {
            j += 1;
        }
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    sup
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}
