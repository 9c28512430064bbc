//! Finite-sample concentration bounds for the VaR and CVaR estimators.
//!
//! * [`dkw_bound`]: `P(sup |F_n - F| > eps) <= 2 exp(-2 n eps^2)`.
//! * [`var_interval`]: distribution-free interval `[F_n^{-1}(alpha^-), F_n^{-1}(alpha^+)]`
//!   with `alpha^{-/+} = alpha -/+ 1/(2 n^s)` covering `v_alpha` with probability at least
//!   `1 - 2 exp(-n^{1-2s} / 8)`.
//! * [`var_deviation_bound`]: `P(|v_n - v_alpha| >= eps) <= 2 exp(-2 n delta_eps^2)`.
//! * [`cvar`]: one-sided upper-deviation bounds for the CVaR estimator under
//!   sub-Gaussian and sub-exponential tails, in general and simplified forms.
//! * [`samplesize`]: inversion of the bounds into sample sizes.
//!
//! Bound totals are reported raw and may exceed 1; use [`DeviationBound::clamped`]
//! for a probability.

pub mod cvar;
pub mod samplesize;

use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, TailModel};
use crate::error::{Error, Result};
use crate::estimators::{quantile_rank, RiskLevel, SortedSample};
use crate::serde_float;

pub use cvar::{
    check_subexp_condition, check_subgauss_condition, cvar_bound_subexp, cvar_bound_subexp_general,
    cvar_bound_subgauss, cvar_bound_subgauss_general, SubExpCondition, SubGaussCondition,
};
pub use samplesize::{sample_size_for_cvar, sample_size_for_var, SampleSize, SampleSizeOutcome};

/// A labelled non-negative quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub label: String,
    #[serde(with = "serde_float")]
    pub value: f64,
}

impl Term {
    pub fn new(label: impl Into<String>, value: f64) -> Self {
        Self { label: label.into(), value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub name: String,
    pub satisfied: bool,
    #[serde(with = "serde_float")]
    pub threshold: f64,
    #[serde(with = "serde_float")]
    pub observed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<DistributionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

/// An evaluated bound. `total` is the sum of `terms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationBound {
    pub bound_name: String,
    pub inputs: BoundInputs,
    pub terms: Vec<Term>,
    #[serde(with = "serde_float")]
    pub total: f64,
    pub conditions: Vec<ConditionEntry>,
    #[serde(default)]
    pub diagnostics: Vec<Term>,
}

impl DeviationBound {
    pub(crate) fn from_terms(
        bound_name: &str,
        inputs: BoundInputs,
        terms: Vec<Term>,
        conditions: Vec<ConditionEntry>,
        diagnostics: Vec<Term>,
    ) -> Self {
        let total = terms.iter().map(|t| t.value).sum();
        Self {
            bound_name: bound_name.to_owned(),
            inputs,
            terms,
            total,
            conditions,
            diagnostics,
        }
    }

    /// `min(1, total)`.
    pub fn clamped(&self) -> f64 {
        self.total.min(1.0)
    }

    pub fn term(&self, label: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.label == label).map(|t| t.value)
    }

    pub fn diagnostic(&self, label: &str) -> Option<f64> {
        self.diagnostics.iter().find(|t| t.label == label).map(|t| t.value)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionEntry> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// `2 exp(-2 n eps^2)`.
pub fn dkw_bound(n: u64, eps: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    check_positive("eps", eps)?;
    Ok(2.0 * (-2.0 * n as f64 * eps * eps).exp())
}

pub fn dkw_deviation_bound(n: u64, eps: f64) -> Result<DeviationBound> {
    let value = dkw_bound(n, eps)?;
    Ok(DeviationBound::from_terms(
        "dkw",
        BoundInputs { n: Some(n), eps: Some(eps), ..Default::default() },
        vec![Term::new("dkw", value)],
        Vec::new(),
        Vec::new(),
    ))
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {value}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub confidence_floor: f64,
    pub s: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub alpha: f64,
    pub n: u64,
}

impl VarConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Quantile levels and coverage floor of the distribution-free interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalLevels {
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub confidence_floor: f64,
}

fn levels_feasible(alpha: f64, s: f64, n: u64) -> bool {
    let half = 0.5 / (n as f64).powf(s);
    alpha - half > 0.0 && alpha + half < 1.0
}

/// Smallest `n` for which `alpha -/+ 1/(2 n^s)` both lie in (0, 1).
pub fn min_feasible_n(level: RiskLevel, s: f64) -> u64 {
    let alpha = level.value();
    let margin = alpha.min(1.0 - alpha);
    let estimate = (0.5 / margin).powf(1.0 / s);
    if !estimate.is_finite() || estimate > 1e15 {
        return u64::MAX;
    }
    let mut n = (estimate.floor() as u64).max(1);
    while n > 1 && levels_feasible(alpha, s, n - 1) {
        n -= 1;
    }
    while !levels_feasible(alpha, s, n) {
        n += 1;
    }
    n
}

pub fn interval_levels(level: RiskLevel, s: f64, n: u64) -> Result<IntervalLevels> {
    if !(s > 0.0 && s < 0.5) {
        return Err(Error::invalid(format!("s must lie in (0, 1/2), got {s}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let alpha = level.value();
    if !levels_feasible(alpha, s, n) {
        return Err(Error::Infeasible {
            alpha,
            s,
            n: n as usize,
            min_n: min_feasible_n(level, s),
        });
    }
    let nf = n as f64;
    let half = 0.5 / nf.powf(s);
    let confidence_floor = (1.0 - 2.0 * (-nf.powf(1.0 - 2.0 * s) / 8.0).exp()).max(0.0);
    Ok(IntervalLevels {
        alpha_minus: alpha - half,
        alpha_plus: alpha + half,
        confidence_floor,
    })
}

/// Distribution-free confidence interval for `v_alpha`.
pub fn var_interval(sample: &SortedSample, level: RiskLevel, s: f64) -> Result<VarConfidenceInterval> {
    let n = sample.len() as u64;
    let levels = interval_levels(level, s, n)?;
    let lower = sample.order_statistic(quantile_rank(sample.len(), levels.alpha_minus));
    let upper = sample.order_statistic(quantile_rank(sample.len(), levels.alpha_plus));
    Ok(VarConfidenceInterval {
        lower,
        upper,
        confidence_floor: levels.confidence_floor,
        s,
        alpha_minus: levels.alpha_minus,
        alpha_plus: levels.alpha_plus,
        alpha: level.value(),
        n,
    })
}

/// `min(F(v + left) - F(v), F(v) - F(v - right))` at `v = v_alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEpsilon {
    pub value: f64,
    pub left_arg: f64,
    pub right_arg: f64,
}

/// `left_arg` widens the neighbourhood above `v_alpha`, `right_arg` below it.
pub fn delta_epsilon(
    dist: &DistributionSpec,
    level: RiskLevel,
    left_arg: f64,
    right_arg: f64,
) -> Result<DeltaEpsilon> {
    if !(left_arg > 0.0) || !(right_arg > 0.0) {
        return Err(Error::invalid(format!(
            "delta_epsilon arguments must be positive, got {left_arg} and {right_arg}"
        )));
    }
    let v = dist.true_var(level);
    let above = dist.prob_between(v, v + left_arg);
    let below = dist.prob_between(v - right_arg, v);
    Ok(DeltaEpsilon {
        value: above.min(below),
        left_arg,
        right_arg,
    })
}

const DENSITY_GRID: usize = 1024;
const GOLDEN_TOL: f64 = 1e-6;

/// Minimum of the density over `[lo, hi]`: a 1024-point grid followed by a
/// golden-section refinement around the best grid point.
pub fn density_min(dist: &DistributionSpec, lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return dist.density_unchecked(lo);
    }
    let step = (hi - lo) / (DENSITY_GRID - 1) as f64;
    let at = |i: usize| if i == DENSITY_GRID - 1 { hi } else { lo + step * i as f64 };
    let (best_i, best) = (0..DENSITY_GRID)
        .map(|i| (i, dist.density_unchecked(at(i))))
        .fold((0, f64::INFINITY), |acc, (i, f)| if f < acc.1 { (i, f) } else { acc });

    let mut a = at(best_i.saturating_sub(1));
    let mut b = at((best_i + 1).min(DENSITY_GRID - 1));
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (dist.density_unchecked(c), dist.density_unchecked(d));
    let mut refined = best;
    while (b - a).abs() > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = dist.density_unchecked(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = dist.density_unchecked(d);
        }
        refined = refined.min(fc).min(fd);
    }
    refined
}

/// `P(|v_n - v_alpha| >= eps) <= 2 exp(-2 n delta_eps^2)`, plus the looser
/// density-constant form `2 exp(-2 n c eps^2)` with `c = (min f on [v - eps, v + eps])^2`
/// as a diagnostic.
pub fn var_deviation_bound(
    dist: &DistributionSpec,
    level: RiskLevel,
    n: u64,
    eps: f64,
) -> Result<DeviationBound> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    check_positive("eps", eps)?;
    let delta = delta_epsilon(dist, level, eps, eps)?;
    let nf = n as f64;
    let exact = 2.0 * (-2.0 * nf * delta.value * delta.value).exp();

    let v = dist.true_var(level);
    let f_min = density_min(dist, v - eps, v + eps);
    let c = f_min * f_min;
    let density_form = 2.0 * (-2.0 * nf * c * eps * eps).exp();

    Ok(DeviationBound::from_terms(
        "var_deviation",
        BoundInputs {
            distribution: Some(*dist),
            alpha: Some(level.value()),
            n: Some(n),
            eps: Some(eps),
            ..Default::default()
        },
        vec![Term::new("var_deviation", exact)],
        Vec::new(),
        vec![
            Term::new("delta_eps", delta.value),
            Term::new("density_min", f_min),
            Term::new("c", c),
            Term::new("density_form", density_form),
            Term::new("v_alpha", v),
        ],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(a: f64) -> RiskLevel {
        RiskLevel::new(a).unwrap()
    }

    fn gauss() -> DistributionSpec {
        DistributionSpec::gaussian(0.0, 1.0).unwrap()
    }

    #[test]
    fn dkw_examples() {
        assert!((dkw_bound(100, 0.1).unwrap() - 0.270_670_566_473_225_4).abs() < 1e-12);
        assert!(dkw_bound(1, 0.0).is_err());
        assert!(dkw_bound(1, -1.0).is_err());
        assert!(dkw_bound(0, 0.1).is_err());
        let mut prev = f64::INFINITY;
        for eps in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let b = dkw_bound(50, eps).unwrap();
            assert!(b <= prev);
            prev = b;
        }
        assert!(prev < 1e-300);
    }

    #[test]
    fn interval_levels_example() {
        let lv = interval_levels(level(0.9), 0.3, 10_000).unwrap();
        // 1/(2 * 10000^0.3) and 1 - 2 exp(-10000^0.4 / 8)
        assert!((0.9 - lv.alpha_minus - 0.031_547_867_224_009_665).abs() < 1e-12);
        assert!((lv.alpha_plus - 0.9 - 0.031_547_867_224_009_665).abs() < 1e-12);
        assert!((lv.confidence_floor - 0.986_201_459_473_467_5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_interval_reports_min_n() {
        let err = interval_levels(level(0.95), 0.25, 1000).unwrap_err();
        // 1/(2 n^0.25) < 0.05 <=> n > 10^4
        match err {
            Error::Infeasible { min_n, .. } => assert_eq!(min_n, 10_001),
            other => panic!("unexpected {other:?}"),
        }
        assert!(interval_levels(level(0.95), 0.25, 10_001).is_ok());
        assert!(interval_levels(level(0.5), 0.0, 100).is_err());
        assert!(interval_levels(level(0.5), 0.5, 100).is_err());
    }

    #[test]
    fn min_feasible_n_is_minimal() {
        for (a, s) in [(0.9, 0.3), (0.99, 0.45), (0.5, 0.1), (0.01, 0.2), (0.95, 0.49)] {
            let n = min_feasible_n(level(a), s);
            assert!(levels_feasible(a, s, n));
            assert!(n == 1 || !levels_feasible(a, s, n - 1));
        }
    }

    #[test]
    fn interval_on_small_sample() {
        let s = SortedSample::new((1..=10).map(f64::from).collect()).unwrap();
        let ci = var_interval(&s, level(0.5), 0.49).unwrap();
        let k_lo = (10.0 * ci.alpha_minus).ceil() as usize;
        let k_hi = (10.0 * ci.alpha_plus).ceil() as usize;
        assert_eq!(ci.lower, s.order_statistic(k_lo));
        assert_eq!(ci.upper, s.order_statistic(k_hi));
        assert!(ci.lower <= 5.0 && 5.0 <= ci.upper);
        assert!(ci.contains(crate::estimators::estimate_var(&s, level(0.5))));
    }

    #[test]
    fn delta_epsilon_examples() {
        // scipy: norm.sf(z) - norm.sf(z + 0.1) = 0.009494824, norm.cdf(z) - norm.cdf(z - 0.1) = 0.011190836
        let d = delta_epsilon(&gauss(), level(0.95), 0.1, 0.1).unwrap();
        assert!((d.value - 0.009_494_824_390_495_17).abs() < 1e-12);

        let u = DistributionSpec::uniform(0.0, 1.0).unwrap();
        let d = delta_epsilon(&u, level(0.5), 0.1, 0.1).unwrap();
        assert!((d.value - 0.1).abs() < 1e-15);

        for dist in [gauss(), u, DistributionSpec::exponential(1.0).unwrap()] {
            for a in [0.1, 0.5, 0.95] {
                let d = delta_epsilon(&dist, level(a), 1e6, 1e6).unwrap();
                assert!((d.value - a.min(1.0 - a)).abs() < 1e-12);
                let small = delta_epsilon(&dist, level(a), 0.3, 0.2).unwrap();
                assert!(small.value > 0.0 && small.value <= a.min(1.0 - a));
            }
        }
        assert!(delta_epsilon(&gauss(), level(0.5), 0.0, 0.1).is_err());
        assert!(delta_epsilon(&gauss(), level(0.5), 0.1, -1.0).is_err());
    }

    #[test]
    fn delta_epsilon_symmetric_for_uniform_median() {
        let u = DistributionSpec::uniform(0.0, 1.0).unwrap();
        let v = u.true_var(level(0.5));
        for eps in [0.01, 0.1, 0.3, 0.49] {
            let above = u.prob_between(v, v + eps);
            let below = u.prob_between(v - eps, v);
            assert!((above - below).abs() < 1e-15);
        }
    }

    #[test]
    fn var_deviation_examples() {
        let b = var_deviation_bound(&gauss(), level(0.95), 1000, 0.1).unwrap();
        // 2 exp(-2000 * 0.0094948244^2)
        assert!((b.total - 1.670_033_690_449_887_8).abs() < 1e-9);
        assert_eq!(b.clamped(), 1.0);
        let b = var_deviation_bound(&gauss(), level(0.95), 100_000, 0.1).unwrap();
        assert!((b.total / 2.954_974_091_813_780_3e-8 - 1.0).abs() < 1e-6);
        assert!(b.diagnostic("density_form").unwrap() >= b.total);
        assert!(b.diagnostic("delta_eps").unwrap() > 0.0);
    }

    #[test]
    fn density_min_matches_endpoints() {
        let g = gauss();
        let v = g.true_var(level(0.95));
        // Gaussian density decreases above 0, so the minimum is at the right end.
        let m = density_min(&g, v - 0.1, v + 0.1);
        let expected = g.density(v + 0.1).unwrap();
        assert!((m - expected).abs() < 1e-12);
        // Straddling the mode: minimum at the farther endpoint.
        let m = density_min(&g, -0.5, 2.0);
        assert!((m - g.density(2.0).unwrap()).abs() < 1e-12);
        let u = DistributionSpec::uniform(0.0, 1.0).unwrap();
        assert_eq!(density_min(&u, 0.2, 0.8), 1.0);
        assert_eq!(density_min(&u, 0.8, 1.2), 0.0);
    }

    #[test]
    fn monotone_in_n() {
        for dist in [gauss(), DistributionSpec::exponential(1.0).unwrap()] {
            let mut prev = f64::INFINITY;
            for n in [10, 100, 1000, 10_000, 100_000] {
                let b = var_deviation_bound(&dist, level(0.9), n, 0.1).unwrap().total;
                assert!(b <= prev);
                prev = b;
            }
        }
    }

    #[test]
    fn json_shape() {
        let b = var_deviation_bound(&gauss(), level(0.95), 1000, 0.1).unwrap();
        let v: serde_json::Value = serde_json::to_value(&b).unwrap();
        for key in ["bound_name", "inputs", "terms", "total", "conditions"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["terms"][0]["label"], "var_deviation");
        assert_eq!(v["inputs"]["distribution"], "gaussian:mu=0,sigma=1");
        let back: DeviationBound = serde_json::from_value(v).unwrap();
        assert_eq!(back, b);
    }
}
