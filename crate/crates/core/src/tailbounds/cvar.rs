//! Upper-deviation bounds `P(c_n - c_alpha > eps)` for the CVaR estimator.
//!
//! The general forms hold for any valid tail model once `v_alpha > mu`:
//!
//! ```text
//! T1 = exp(-n eps (1-alpha) lam / 2) * [alpha + exp(-lam (v-mu) + lam^2 sigma^2 / 2)]^n
//! T2 = 2 exp(-2 n delta1^2),  delta1 = delta_eps at half-width n (1-alpha) eps / 8
//! T3 = 2 exp(-2 n delta2^2),  delta2 = delta_eps at half-width sqrt(eps) / 4
//! T4 = exp(-2 n eps (1-alpha)^2)
//! ```
//!
//! where `lam = (v-mu)/sigma^2` for sub-Gaussian tails (then the bracket is
//! `alpha + exp(-(v-mu)^2 / (2 sigma^2))`) and `lam = m_b = min((v-mu)/sigma^2, b')`
//! for sub-exponential ones. `T1` is evaluated as `exp(n * log_factor)`, and
//! grows with `n` whenever `log_factor >= 0`.
//!
//! The simplified forms drop the bracket (valid only when the sigma condition
//! makes it < 1) and replace the delta terms by density constants `c1`, `c2`.

use serde::{Deserialize, Serialize};

use super::{
    check_positive, delta_epsilon, density_min, BoundInputs, ConditionEntry, DeviationBound, Term,
};
use crate::distributions::{DistributionSpec, SubExponentialTail, SubGaussianTail, TailModel};
use crate::error::{Error, Result};
use crate::estimators::RiskLevel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubGaussCondition {
    pub satisfied: bool,
    pub threshold: f64,
    pub var_above_mean: bool,
}

/// `sigma < sqrt((v - mu)^2 / (2 ln(1 / (1 - alpha))))`, together with `v > mu`.
pub fn check_subgauss_condition(tail: &SubGaussianTail, v_alpha: f64, level: RiskLevel) -> SubGaussCondition {
    let gap = v_alpha - tail.mu();
    let threshold = (gap * gap / (2.0 * (1.0 / level.tail_mass()).ln())).sqrt();
    let var_above_mean = gap > 0.0;
    SubGaussCondition {
        satisfied: var_above_mean && tail.sigma() < threshold,
        threshold,
        var_above_mean,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubExpCondition {
    pub satisfied: bool,
    pub m_b: f64,
    pub threshold: f64,
    pub radicand: f64,
    pub var_above_mean: bool,
}

/// `sigma < sqrt((2 ln(1 - alpha) + 2 (v - mu) m_b) / m_b^2)` with
/// `m_b = min((v - mu) / sigma^2, b')`. A non-positive radicand reports
/// threshold 0.
pub fn check_subexp_condition(tail: &SubExponentialTail, v_alpha: f64, level: RiskLevel) -> SubExpCondition {
    let gap = v_alpha - tail.mu();
    let m_b = (gap / (tail.sigma() * tail.sigma())).min(tail.b_prime());
    let radicand = 2.0 * level.tail_mass().ln() + 2.0 * gap * m_b;
    let var_above_mean = gap > 0.0;
    let threshold = if radicand > 0.0 { (radicand / (m_b * m_b)).sqrt() } else { 0.0 };
    SubExpCondition {
        satisfied: var_above_mean && radicand > 0.0 && tail.sigma() < threshold,
        m_b,
        threshold,
        radicand,
        var_above_mean,
    }
}

fn require_var_above_mean(v: f64, mu: f64) -> Result<()> {
    if v > mu {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "v_alpha = {v} must exceed the tail mean mu = {mu}"
        )))
    }
}

fn var_above_mean_entry(v: f64, mu: f64) -> ConditionEntry {
    ConditionEntry {
        name: "var_above_mean".into(),
        satisfied: v > mu,
        threshold: mu,
        observed: v,
    }
}

fn check_common(n: u64, eps: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    check_positive("eps", eps)
}

/// The `T2`-`T4` terms shared by every general form.
struct SharedTerms {
    t2: f64,
    t3: f64,
    t4: f64,
    delta1: f64,
    delta2: f64,
}

fn shared_terms(dist: &DistributionSpec, level: RiskLevel, n: u64, eps: f64) -> Result<SharedTerms> {
    let nf = n as f64;
    let tail_mass = level.tail_mass();
    let wide = nf * tail_mass * eps / 8.0;
    let narrow = eps.sqrt() / 4.0;
    let delta1 = delta_epsilon(dist, level, wide, wide)?.value;
    let delta2 = delta_epsilon(dist, level, narrow, narrow)?.value;
    Ok(SharedTerms {
        t2: 2.0 * (-2.0 * nf * delta1 * delta1).exp(),
        t3: 2.0 * (-2.0 * nf * delta2 * delta2).exp(),
        t4: (-2.0 * nf * eps * tail_mass * tail_mass).exp(),
        delta1,
        delta2,
    })
}

/// Density constants of the simplified forms.
///
/// `c2 = f_min^2 / 16` with `f_min` the density minimum on `[v - sqrt(eps)/4, v + sqrt(eps)/4]`.
/// `c1` uses the mean-value identity `delta1 = f(v_bar) * n (1-alpha) eps / 8` exactly, i.e.
/// `c1 eps^2 = delta1^2`: its neighbourhood widens with `n`, so a density minimum there
/// tends to zero for every unbounded family. The minimum-based value is kept as a diagnostic.
struct DensityConstants {
    c1: f64,
    c2: f64,
    c1_density_min: f64,
    f_min1: f64,
    f_min2: f64,
}

fn density_constants(dist: &DistributionSpec, level: RiskLevel, n: u64, eps: f64) -> Result<DensityConstants> {
    let v = dist.true_var(level);
    let scale = n as f64 * level.tail_mass() / 8.0;
    let wide = scale * eps;
    let narrow = eps.sqrt() / 4.0;
    let delta1 = delta_epsilon(dist, level, wide, wide)?.value;
    let f_min1 = density_min(dist, v - wide, v + wide);
    let f_min2 = density_min(dist, v - narrow, v + narrow);
    Ok(DensityConstants {
        c1: (delta1 / eps).powi(2),
        c2: f_min2 * f_min2 / 16.0,
        c1_density_min: (f_min1 * scale).powi(2),
        f_min1,
        f_min2,
    })
}

fn log_factor_entry(log_factor: f64) -> ConditionEntry {
    ConditionEntry {
        name: "t1_decreasing_in_n".into(),
        satisfied: log_factor < 0.0,
        threshold: 0.0,
        observed: log_factor,
    }
}

fn inputs(dist: &DistributionSpec, tail: TailModel, level: RiskLevel, n: u64, eps: f64) -> BoundInputs {
    BoundInputs {
        distribution: Some(*dist),
        tail: Some(tail),
        alpha: Some(level.value()),
        n: Some(n),
        eps: Some(eps),
    }
}

fn general_bound(
    name: &str,
    dist: &DistributionSpec,
    tail: TailModel,
    level: RiskLevel,
    n: u64,
    eps: f64,
    lambda: f64,
    mut conditions: Vec<ConditionEntry>,
    mut diagnostics: Vec<Term>,
) -> Result<DeviationBound> {
    let v = dist.true_var(level);
    let (mu, sigma) = (tail.mu(), tail.sigma());
    let alpha = level.value();
    let gap = v - mu;
    let bracket = alpha + (-lambda * gap + 0.5 * lambda * lambda * sigma * sigma).exp();
    let log_factor = -eps * level.tail_mass() * lambda / 2.0 + bracket.ln();
    let t1 = (n as f64 * log_factor).exp();
    let shared = shared_terms(dist, level, n, eps)?;

    conditions.push(log_factor_entry(log_factor));
    diagnostics.extend([
        Term::new("mgf_bracket", bracket),
        Term::new("t1_log_factor", log_factor),
        Term::new("delta_eps1", shared.delta1),
        Term::new("delta_eps2", shared.delta2),
        Term::new("v_alpha", v),
    ]);
    Ok(DeviationBound::from_terms(
        name,
        inputs(dist, tail, level, n, eps),
        vec![
            Term::new("t1_mgf", t1),
            Term::new("t2_var_deviation_wide", shared.t2),
            Term::new("t3_var_deviation_sqrt", shared.t3),
            Term::new("t4_dkw", shared.t4),
        ],
        conditions,
        diagnostics,
    ))
}

/// General sub-Gaussian bound; no condition on sigma.
pub fn cvar_bound_subgauss_general(
    tail: &SubGaussianTail,
    dist: &DistributionSpec,
    level: RiskLevel,
    n: u64,
    eps: f64,
) -> Result<DeviationBound> {
    check_common(n, eps)?;
    let v = dist.true_var(level);
    require_var_above_mean(v, tail.mu())?;
    let lambda = (v - tail.mu()) / (tail.sigma() * tail.sigma());
    let cond = check_subgauss_condition(tail, v, level);
    general_bound(
        "cvar_subgauss_general",
        dist,
        TailModel::SubGaussian(*tail),
        level,
        n,
        eps,
        lambda,
        vec![
            var_above_mean_entry(v, tail.mu()),
            ConditionEntry {
                name: "subgauss_sigma".into(),
                satisfied: cond.satisfied,
                threshold: cond.threshold,
                observed: tail.sigma(),
            },
        ],
        // lambda* = n (v - mu) / sigma^2 in the unnormalised Chernoff step.
        vec![Term::new("lambda_star", n as f64 * lambda)],
    )
}

/// General sub-exponential bound with the Chernoff parameter capped at `b'`.
pub fn cvar_bound_subexp_general(
    tail: &SubExponentialTail,
    dist: &DistributionSpec,
    level: RiskLevel,
    n: u64,
    eps: f64,
) -> Result<DeviationBound> {
    check_common(n, eps)?;
    let v = dist.true_var(level);
    require_var_above_mean(v, tail.mu())?;
    let cond = check_subexp_condition(tail, v, level);
    general_bound(
        "cvar_subexp_general",
        dist,
        TailModel::SubExponential(*tail),
        level,
        n,
        eps,
        cond.m_b,
        vec![
            var_above_mean_entry(v, tail.mu()),
            subexp_radicand_entry(&cond),
            subexp_sigma_entry(&cond, tail),
        ],
        vec![Term::new("m_b", cond.m_b)],
    )
}

fn subexp_radicand_entry(cond: &SubExpCondition) -> ConditionEntry {
    ConditionEntry {
        name: "subexp_radicand_positive".into(),
        satisfied: cond.radicand > 0.0,
        threshold: 0.0,
        observed: cond.radicand,
    }
}

fn subexp_sigma_entry(cond: &SubExpCondition, tail: &SubExponentialTail) -> ConditionEntry {
    ConditionEntry {
        name: "subexp_sigma".into(),
        satisfied: cond.satisfied,
        threshold: cond.threshold,
        observed: tail.sigma(),
    }
}

fn simplified_bound(
    name: &str,
    dist: &DistributionSpec,
    tail: TailModel,
    level: RiskLevel,
    n: u64,
    eps: f64,
    t1_rate: f64,
    conditions: Vec<ConditionEntry>,
    mut diagnostics: Vec<Term>,
) -> Result<DeviationBound> {
    let nf = n as f64;
    let tail_mass = level.tail_mass();
    let consts = density_constants(dist, level, n, eps)?;
    diagnostics.extend([
        Term::new("c1", consts.c1),
        Term::new("c1_density_min", consts.c1_density_min),
        Term::new("c2", consts.c2),
        Term::new("density_min_wide", consts.f_min1),
        Term::new("density_min_sqrt", consts.f_min2),
        Term::new("t1_log_factor", -t1_rate),
        Term::new("v_alpha", dist.true_var(level)),
    ]);
    Ok(DeviationBound::from_terms(
        name,
        inputs(dist, tail, level, n, eps),
        vec![
            Term::new("t1_mgf", (-nf * t1_rate).exp()),
            Term::new("t2_density_c1", 2.0 * (-2.0 * nf * consts.c1 * eps * eps).exp()),
            Term::new("t3_density_c2", 2.0 * (-2.0 * nf * consts.c2 * eps).exp()),
            Term::new("t4_dkw", (-2.0 * nf * eps * tail_mass * tail_mass).exp()),
        ],
        conditions,
        diagnostics,
    ))
}

/// Simplified sub-Gaussian bound; errors with `ConditionViolation` unless
/// `sigma` is below the threshold of [`check_subgauss_condition`].
pub fn cvar_bound_subgauss(
    tail: &SubGaussianTail,
    dist: &DistributionSpec,
    level: RiskLevel,
    n: u64,
    eps: f64,
) -> Result<DeviationBound> {
    check_common(n, eps)?;
    let v = dist.true_var(level);
    require_var_above_mean(v, tail.mu())?;
    let cond = check_subgauss_condition(tail, v, level);
    if !cond.satisfied {
        return Err(Error::ConditionViolation {
            condition: "subgauss_sigma".into(),
            observed: tail.sigma(),
            threshold: cond.threshold,
        });
    }
    let gap = v - tail.mu();
    let rate = eps * level.tail_mass() * gap / (2.0 * tail.sigma() * tail.sigma());
    simplified_bound(
        "cvar_subgauss",
        dist,
        TailModel::SubGaussian(*tail),
        level,
        n,
        eps,
        rate,
        vec![
            var_above_mean_entry(v, tail.mu()),
            ConditionEntry {
                name: "subgauss_sigma".into(),
                satisfied: true,
                threshold: cond.threshold,
                observed: tail.sigma(),
            },
        ],
        Vec::new(),
    )
}

/// Simplified sub-exponential bound; errors with `ConditionViolation` unless
/// [`check_subexp_condition`] is satisfied.
pub fn cvar_bound_subexp(
    tail: &SubExponentialTail,
    dist: &DistributionSpec,
    level: RiskLevel,
    n: u64,
    eps: f64,
) -> Result<DeviationBound> {
    check_common(n, eps)?;
    let v = dist.true_var(level);
    require_var_above_mean(v, tail.mu())?;
    let cond = check_subexp_condition(tail, v, level);
    if !cond.satisfied {
        let (condition, observed, threshold) = if cond.radicand <= 0.0 {
            ("subexp_radicand_positive", cond.radicand, 0.0)
        } else {
            ("subexp_sigma", tail.sigma(), cond.threshold)
        };
        return Err(Error::ConditionViolation {
            condition: condition.into(),
            observed,
            threshold,
        });
    }
    let rate = eps * level.tail_mass() * cond.m_b / 2.0;
    simplified_bound(
        "cvar_subexp",
        dist,
        TailModel::SubExponential(*tail),
        level,
        n,
        eps,
        rate,
        vec![
            var_above_mean_entry(v, tail.mu()),
            subexp_radicand_entry(&cond),
            subexp_sigma_entry(&cond, tail),
        ],
        vec![Term::new("m_b", cond.m_b)],
    )
}

/// Condition report for a tail model without evaluating a bound.
pub fn condition_report(tail: &TailModel, dist: &DistributionSpec, level: RiskLevel) -> Vec<ConditionEntry> {
    let v = dist.true_var(level);
    match tail {
        TailModel::SubGaussian(t) => {
            let cond = check_subgauss_condition(t, v, level);
            vec![
                var_above_mean_entry(v, t.mu()),
                ConditionEntry {
                    name: "subgauss_sigma".into(),
                    satisfied: cond.satisfied,
                    threshold: cond.threshold,
                    observed: t.sigma(),
                },
            ]
        }
        TailModel::SubExponential(t) => {
            let cond = check_subexp_condition(t, v, level);
            vec![
                var_above_mean_entry(v, t.mu()),
                subexp_radicand_entry(&cond),
                subexp_sigma_entry(&cond, t),
            ]
        }
    }
}
