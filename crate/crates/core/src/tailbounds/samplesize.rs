//! Smallest sample size at which a bound drops to a target probability.
//!
//! Every search runs doubling followed by bisection on `min(1, total(n)) <= delta`,
//! which is valid because each bound used here is nonincreasing in `n`.

use serde::{Deserialize, Serialize};

use super::{
    check_positive, cvar_bound_subexp_general, cvar_bound_subgauss_general, delta_epsilon,
    var_deviation_bound, DeviationBound,
};
use crate::distributions::{DistributionSpec, TailModel};
use crate::error::{Error, Result};
use crate::estimators::RiskLevel;

/// Largest `n` the search will consider.
pub const SEARCH_CAP: u64 = 1 << 52;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    pub n: u64,
    /// Raw bound total at `n`.
    pub bound_at_n: f64,
    /// Raw bound total at `n - 1`; `None` when `n == 1`.
    pub bound_at_prev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SampleSizeOutcome {
    Achieved(SampleSize),
    NotAchievable {
        reason: String,
        t1_log_factor: Option<f64>,
    },
}

impl SampleSizeOutcome {
    pub fn n(&self) -> Option<u64> {
        match self {
            SampleSizeOutcome::Achieved(s) => Some(s.n),
            SampleSizeOutcome::NotAchievable { .. } => None,
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0, 1], got {delta}")))
    }
}

fn search<F>(bound: F, delta: f64) -> Result<Option<SampleSize>>
where
    F: Fn(u64) -> Result<f64>,
{
    let meets = |total: f64| total.min(1.0) <= delta;
    let first = bound(1)?;
    if meets(first) {
        return Ok(Some(SampleSize { n: 1, bound_at_n: first, bound_at_prev: None }));
    }
    let mut lo = 1u64;
    let mut hi = 2u64;
    loop {
        if meets(bound(hi)?) {
            break;
        }
        if hi >= SEARCH_CAP {
            return Ok(None);
        }
        lo = hi;
        hi = (hi * 2).min(SEARCH_CAP);
    }
    // Invariant: bound(lo) misses, bound(hi) meets.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if meets(bound(mid)?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(SampleSize {
        n: hi,
        bound_at_n: bound(hi)?,
        bound_at_prev: Some(bound(lo)?),
    }))
}

/// Smallest `n` with `min(1, var_deviation_bound(n)) <= delta`.
pub fn sample_size_for_var(
    eps: f64,
    delta: f64,
    dist: &DistributionSpec,
    level: RiskLevel,
) -> Result<SampleSizeOutcome> {
    check_positive("eps", eps)?;
    check_delta(delta)?;
    if delta_epsilon(dist, level, eps, eps)?.value <= 0.0 {
        return Ok(SampleSizeOutcome::NotAchievable {
            reason: "delta_eps is zero at this accuracy".into(),
            t1_log_factor: None,
        });
    }
    let found = search(|n| Ok(var_deviation_bound(dist, level, n, eps)?.total), delta)?;
    Ok(match found {
        Some(s) => SampleSizeOutcome::Achieved(s),
        None => SampleSizeOutcome::NotAchievable {
            reason: format!("bound stays above {delta} up to n = {SEARCH_CAP}"),
            t1_log_factor: None,
        },
    })
}

fn cvar_general(
    tail: &TailModel,
    dist: &DistributionSpec,
    level: RiskLevel,
    n: u64,
    eps: f64,
) -> Result<DeviationBound> {
    match tail {
        TailModel::SubGaussian(t) => cvar_bound_subgauss_general(t, dist, level, n, eps),
        TailModel::SubExponential(t) => cvar_bound_subexp_general(t, dist, level, n, eps),
    }
}

/// Smallest `n` with `min(1, general CVaR bound(n)) <= delta`. Reports
/// `NotAchievable` when the MGF term does not decay in `n`.
pub fn sample_size_for_cvar(
    eps: f64,
    delta: f64,
    tail: &TailModel,
    dist: &DistributionSpec,
    level: RiskLevel,
) -> Result<SampleSizeOutcome> {
    check_positive("eps", eps)?;
    check_delta(delta)?;
    let at_one = cvar_general(tail, dist, level, 1, eps)?;
    if at_one.clamped() <= delta {
        return Ok(SampleSizeOutcome::Achieved(SampleSize {
            n: 1,
            bound_at_n: at_one.total,
            bound_at_prev: None,
        }));
    }
    let log_factor = at_one.diagnostic("t1_log_factor").expect("general bounds report t1_log_factor");
    if log_factor >= 0.0 {
        return Ok(SampleSizeOutcome::NotAchievable {
            reason: format!(
                "MGF term grows with n (per-sample log-factor {log_factor:.6} >= 0); increase eps or tighten the tail model"
            ),
            t1_log_factor: Some(log_factor),
        });
    }
    let found = search(|n| Ok(cvar_general(tail, dist, level, n, eps)?.total), delta)?;
    Ok(match found {
        Some(s) => SampleSizeOutcome::Achieved(s),
        None => SampleSizeOutcome::NotAchievable {
            reason: format!("bound stays above {delta} up to n = {SEARCH_CAP}"),
            t1_log_factor: Some(log_factor),
        },
    })
}
