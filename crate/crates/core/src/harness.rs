//! Seeded Monte Carlo experiments that compare empirical coverage and deviation
//! frequencies with the bounds in [`crate::tailbounds`], plus convergence sweeps.
//!
//! Replication `r` (1-based) draws its sample from substream `r` of the plan's
//! master seed, so a replication's data never depends on scheduling. Replications
//! run in parallel and are reduced by integer summation, which makes every
//! frequency independent of the thread count.
//!
//! Plans that share `(dist, n, replications, master_seed)` also share samples:
//! [`run_batch`] groups them and evaluates all of them on each drawn sample.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, TailModel};
use crate::error::{Error, Result};
use crate::estimators::{estimate_var_cvar, RiskLevel, SortedSample};
use crate::serde_float;
use crate::tailbounds::cvar::condition_report;
use crate::tailbounds::{
    check_positive, cvar_bound_subexp, cvar_bound_subexp_general, cvar_bound_subgauss,
    cvar_bound_subgauss_general, interval_levels, var_deviation_bound, var_interval,
    ConditionEntry, DeviationBound, Term,
};

/// Standard errors of slack allowed by the pass rule.
pub const SLACK_STDERRS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvarBoundChoice {
    SubgaussGeneral,
    SubexpGeneral,
    SubgaussSimplified,
    SubexpSimplified,
}

impl CvarBoundChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            CvarBoundChoice::SubgaussGeneral => "subgauss_general",
            CvarBoundChoice::SubexpGeneral => "subexp_general",
            CvarBoundChoice::SubgaussSimplified => "subgauss_simplified",
            CvarBoundChoice::SubexpSimplified => "subexp_simplified",
        }
    }

    /// The general form matching a tail model.
    pub fn general_for(tail: &TailModel) -> Self {
        match tail {
            TailModel::SubGaussian(_) => CvarBoundChoice::SubgaussGeneral,
            TailModel::SubExponential(_) => CvarBoundChoice::SubexpGeneral,
        }
    }
}

impl fmt::Display for CvarBoundChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CvarBoundChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "subgauss_general" => Ok(CvarBoundChoice::SubgaussGeneral),
            "subexp_general" => Ok(CvarBoundChoice::SubexpGeneral),
            "subgauss_simplified" | "subgauss" => Ok(CvarBoundChoice::SubgaussSimplified),
            "subexp_simplified" | "subexp" => Ok(CvarBoundChoice::SubexpSimplified),
            _ => Err(Error::invalid(format!(
                "unknown CVaR bound `{s}` (expected subgauss_general, subexp_general, subgauss_simplified or subexp_simplified)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    VarCoverage { n: u64, s: f64 },
    VarDeviation { n: u64, eps: f64 },
    CvarUpperDeviation { n: u64, eps: f64, bound: CvarBoundChoice },
    Convergence { grid: Vec<u64> },
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::VarCoverage { .. } => "var_coverage",
            ExperimentKind::VarDeviation { .. } => "var_deviation",
            ExperimentKind::CvarUpperDeviation { .. } => "cvar_upper_deviation",
            ExperimentKind::Convergence { .. } => "convergence",
        }
    }

    /// Sample size of a single-`n` experiment.
    pub fn n(&self) -> Option<u64> {
        match self {
            ExperimentKind::VarCoverage { n, .. }
            | ExperimentKind::VarDeviation { n, .. }
            | ExperimentKind::CvarUpperDeviation { n, .. } => Some(*n),
            ExperimentKind::Convergence { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dist: DistributionSpec,
    pub alpha: RiskLevel,
    #[serde(flatten)]
    pub kind: ExperimentKind,
    pub replications: u64,
    pub master_seed: u64,
    /// Tail model for CVaR experiments; the distribution's catalog model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailModel>,
}

impl ExperimentPlan {
    pub fn new(dist: DistributionSpec, alpha: RiskLevel, kind: ExperimentKind, replications: u64, master_seed: u64) -> Self {
        Self { dist, alpha, kind, replications, master_seed, tail: None }
    }

    pub fn with_tail(mut self, tail: TailModel) -> Self {
        self.tail = Some(tail);
        self
    }

    pub fn tail_model(&self) -> TailModel {
        self.tail.unwrap_or_else(|| self.dist.default_tail_model())
    }

    /// Checks every precondition that can be checked without sampling.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        match &self.kind {
            ExperimentKind::VarCoverage { n, s } => {
                check_n(*n)?;
                interval_levels(self.alpha, *s, *n)?;
            }
            ExperimentKind::VarDeviation { n, eps } => {
                check_n(*n)?;
                check_positive("eps", *eps)?;
            }
            ExperimentKind::CvarUpperDeviation { n, eps, bound } => {
                check_n(*n)?;
                check_positive("eps", *eps)?;
                self.cvar_bound(*bound, *n, *eps)?;
            }
            ExperimentKind::Convergence { grid } => {
                if grid.len() < 3 {
                    return Err(Error::invalid(format!(
                        "convergence grid needs at least 3 points, got {}",
                        grid.len()
                    )));
                }
                for &n in grid {
                    check_n(n)?;
                }
            }
        }
        Ok(())
    }

    fn cvar_bound(&self, choice: CvarBoundChoice, n: u64, eps: f64) -> Result<DeviationBound> {
        let tail = self.tail_model();
        let (dist, level) = (&self.dist, self.alpha);
        match (choice, &tail) {
            (CvarBoundChoice::SubgaussGeneral, TailModel::SubGaussian(t)) => cvar_bound_subgauss_general(t, dist, level, n, eps),
            (CvarBoundChoice::SubgaussSimplified, TailModel::SubGaussian(t)) => cvar_bound_subgauss(t, dist, level, n, eps),
            (CvarBoundChoice::SubexpGeneral, TailModel::SubExponential(t)) => cvar_bound_subexp_general(t, dist, level, n, eps),
            (CvarBoundChoice::SubexpSimplified, TailModel::SubExponential(t)) => cvar_bound_subexp(t, dist, level, n, eps),
            (choice, tail) => Err(Error::invalid(format!(
                "bound {choice} does not apply to tail model {tail}"
            ))),
        }
    }
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 || n > usize::MAX as u64 {
        return Err(Error::invalid(format!("n must be a positive sample size, got {n}")));
    }
    Ok(())
}

/// One finished coverage or deviation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub plan: ExperimentPlan,
    /// Replications in which the event occurred; `empirical_frequency = hits / R`.
    pub hits: u64,
    #[serde(with = "serde_float")]
    pub empirical_frequency: f64,
    #[serde(with = "serde_float")]
    pub binomial_stderr: f64,
    /// Coverage floor `1 - 2 exp(-n^(1-2s)/8)` for coverage experiments, otherwise the bound total.
    #[serde(with = "serde_float")]
    pub bound_raw: f64,
    /// `max(0, raw)` for coverage experiments, otherwise `min(1, raw)`.
    #[serde(with = "serde_float")]
    pub bound_clamped: f64,
    pub terms: Vec<Term>,
    #[serde(default)]
    pub conditions: Vec<ConditionEntry>,
    pub duration_secs: f64,
    pub pass: bool,
}

impl ExperimentRecord {
    fn new(plan: ExperimentPlan, hits: u64, bound_raw: f64, terms: Vec<Term>, conditions: Vec<ConditionEntry>, duration_secs: f64) -> Self {
        let r = plan.replications as f64;
        let p = hits as f64 / r;
        let bound_clamped = if is_coverage(&plan) { bound_raw.max(0.0) } else { bound_raw.min(1.0) };
        let mut record = Self {
            plan,
            hits,
            empirical_frequency: p,
            binomial_stderr: (p * (1.0 - p) / r).sqrt(),
            bound_raw,
            bound_clamped,
            terms,
            conditions,
            duration_secs,
            pass: false,
        };
        record.pass = record.recompute_pass();
        record
    }

    /// The pass rule evaluated on the stored fields.
    pub fn recompute_pass(&self) -> bool {
        let slack = SLACK_STDERRS * self.binomial_stderr;
        if is_coverage(&self.plan) {
            self.empirical_frequency >= self.bound_clamped - slack
        } else {
            self.empirical_frequency <= self.bound_clamped + slack
        }
    }

    /// Label used in the `kind` CSV column; CVaR rows carry the bound choice.
    pub fn kind_label(&self) -> String {
        match &self.plan.kind {
            ExperimentKind::CvarUpperDeviation { bound, .. } => format!("cvar_upper_deviation/{bound}"),
            kind => kind.name().to_owned(),
        }
    }

    /// `s` for coverage experiments, `eps` otherwise.
    pub fn s_or_eps(&self) -> f64 {
        match &self.plan.kind {
            ExperimentKind::VarCoverage { s, .. } => *s,
            ExperimentKind::VarDeviation { eps, .. } | ExperimentKind::CvarUpperDeviation { eps, .. } => *eps,
            ExperimentKind::Convergence { .. } => f64::NAN,
        }
    }

    pub fn csv_row(&self) -> CsvRecordRow {
        CsvRecordRow {
            kind: self.kind_label(),
            family: self.plan.dist.family_name().to_owned(),
            params: self.plan.dist.params_string(),
            alpha: self.plan.alpha.value(),
            n: self.plan.kind.n().unwrap_or(0),
            s_or_eps: self.s_or_eps(),
            replications: self.plan.replications,
            seed: self.plan.master_seed,
            frequency: self.empirical_frequency,
            stderr: self.binomial_stderr,
            bound_raw: self.bound_raw,
            bound_clamped: self.bound_clamped,
            pass: self.pass,
        }
    }
}

fn is_coverage(plan: &ExperimentPlan) -> bool {
    matches!(plan.kind, ExperimentKind::VarCoverage { .. })
}

/// One CSV row; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecordRow {
    pub kind: String,
    pub family: String,
    pub params: String,
    pub alpha: f64,
    pub n: u64,
    pub s_or_eps: f64,
    #[serde(rename = "R")]
    pub replications: u64,
    pub seed: u64,
    pub frequency: f64,
    pub stderr: f64,
    pub bound_raw: f64,
    pub bound_clamped: f64,
    pub pass: bool,
}

/// Per-plan event test, prepared before any sampling.
enum Event {
    Covers { s: f64, v: f64 },
    VarDeviates { eps: f64, v: f64 },
    CvarExceeds { eps: f64, c: f64 },
}

impl Event {
    fn occurs(&self, sample: &SortedSample, level: RiskLevel) -> Result<bool> {
        Ok(match *self {
            Event::Covers { s, v } => var_interval(sample, level, s)?.contains(v),
            Event::VarDeviates { eps, v } => (estimate_var_cvar(sample, level).0 - v).abs() >= eps,
            Event::CvarExceeds { eps, c } => estimate_var_cvar(sample, level).1 - c > eps,
        })
    }
}

struct Prepared {
    event: Event,
    bound_raw: f64,
    terms: Vec<Term>,
    conditions: Vec<ConditionEntry>,
}

fn prepare(plan: &ExperimentPlan) -> Result<Prepared> {
    plan.validate()?;
    let level = plan.alpha;
    let v = plan.dist.true_var(level);
    match plan.kind {
        ExperimentKind::VarCoverage { n, s } => {
            let floor = 1.0 - 2.0 * (-(n as f64).powf(1.0 - 2.0 * s) / 8.0).exp();
            Ok(Prepared {
                event: Event::Covers { s, v },
                bound_raw: floor,
                terms: vec![Term::new("confidence_floor", floor)],
                conditions: Vec::new(),
            })
        }
        ExperimentKind::VarDeviation { n, eps } => {
            let bound = var_deviation_bound(&plan.dist, level, n, eps)?;
            Ok(Prepared {
                event: Event::VarDeviates { eps, v },
                bound_raw: bound.total,
                terms: bound.terms,
                conditions: bound.conditions,
            })
        }
        ExperimentKind::CvarUpperDeviation { n, eps, bound } => {
            let b = plan.cvar_bound(bound, n, eps)?;
            Ok(Prepared {
                event: Event::CvarExceeds { eps, c: plan.dist.true_cvar(level) },
                bound_raw: b.total,
                terms: b.terms,
                conditions: b.conditions,
            })
        }
        ExperimentKind::Convergence { .. } => Err(Error::invalid(
            "convergence plans produce a sweep; use run_convergence",
        )),
    }
}

/// Runs coverage and deviation plans, sharing samples between plans with the same
/// `(dist, n, replications, master_seed)`. Every plan is validated before any
/// sampling starts. Records come back in input order.
pub fn run_batch(plans: &[ExperimentPlan]) -> Result<Vec<ExperimentRecord>> {
    let prepared = plans.iter().map(prepare).collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<(String, u64, u64, u64), Vec<usize>> = BTreeMap::new();
    for (i, plan) in plans.iter().enumerate() {
        let n = plan.kind.n().expect("prepared plans have a single n");
        groups
            .entry((plan.dist.to_string(), n, plan.replications, plan.master_seed))
            .or_default()
            .push(i);
    }

    let mut records: Vec<Option<ExperimentRecord>> = vec![None; plans.len()];
    for ((_, n, replications, seed), members) in groups {
        let start = Instant::now();
        let dist = plans[members[0]].dist;
        let hits = (1..=replications)
            .into_par_iter()
            .map(|r| {
                let sample = dist.sample_stream(n as usize, seed, r)?;
                members
                    .iter()
                    .map(|&i| Ok(u64::from(prepared[i].event.occurs(&sample, plans[i].alpha)?)))
                    .collect::<Result<Vec<u64>>>()
            })
            .try_reduce(
                || vec![0; members.len()],
                |mut acc, x| {
                    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
                    Ok(acc)
                },
            )?;
        let elapsed = start.elapsed().as_secs_f64();
        for (&i, h) in members.iter().zip(hits) {
            let p = &prepared[i];
            records[i] = Some(ExperimentRecord::new(
                plans[i].clone(),
                h,
                p.bound_raw,
                p.terms.clone(),
                p.conditions.clone(),
                elapsed,
            ));
        }
    }
    Ok(records.into_iter().map(|r| r.expect("every plan belongs to a group")).collect())
}

/// [`run_batch`] on a dedicated pool of `threads` workers.
pub fn run_batch_with_threads(plans: &[ExperimentPlan], threads: usize) -> Result<Vec<ExperimentRecord>> {
    with_threads(threads, || run_batch(plans))
}

pub(crate) fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build a pool of {threads} threads: {e}")))?;
    pool.install(f)
}

fn run_single(plan: &ExperimentPlan, expected: &str) -> Result<ExperimentRecord> {
    if plan.kind.name() != expected {
        return Err(Error::invalid(format!(
            "expected a {expected} plan, got {}",
            plan.kind.name()
        )));
    }
    Ok(run_batch(std::slice::from_ref(plan))?.remove(0))
}

/// Frequency with which the distribution-free interval covers `v_alpha`.
pub fn run_var_coverage(plan: &ExperimentPlan) -> Result<ExperimentRecord> {
    run_single(plan, "var_coverage")
}

/// Frequency of `|v_n - v_alpha| >= eps` against `min(1, var_deviation_bound)`.
pub fn run_var_deviation(plan: &ExperimentPlan) -> Result<ExperimentRecord> {
    run_single(plan, "var_deviation")
}

/// Frequency of `c_n - c_alpha > eps` against the chosen CVaR bound. Simplified
/// bounds whose sigma condition fails are rejected before sampling.
pub fn run_cvar_deviation(plan: &ExperimentPlan) -> Result<ExperimentRecord> {
    run_single(plan, "cvar_upper_deviation")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n: u64,
    /// Median of `|v_n - v_alpha|` over the replications.
    pub median_abs_var_error: f64,
    /// Median of the signed error `c_n - c_alpha`.
    pub median_cvar_error: f64,
    /// Median of `|c_n - c_alpha|`.
    pub median_abs_cvar_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub plan: ExperimentPlan,
    pub points: Vec<ConvergencePoint>,
    /// Least-squares slope of `ln median |v_n - v_alpha|` against `ln n`.
    #[serde(with = "serde_float")]
    pub var_slope: f64,
    /// Least-squares slope of `ln median |c_n - c_alpha|` against `ln n`.
    #[serde(with = "serde_float")]
    pub cvar_slope: f64,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCsvRow {
    pub family: String,
    pub params: String,
    pub alpha: f64,
    pub n: u64,
    #[serde(rename = "R")]
    pub replications: u64,
    pub seed: u64,
    pub median_abs_var_error: f64,
    pub median_cvar_error: f64,
    pub median_abs_cvar_error: f64,
}

impl ConvergenceReport {
    pub fn csv_rows(&self) -> Vec<ConvergenceCsvRow> {
        self.points
            .iter()
            .map(|p| ConvergenceCsvRow {
                family: self.plan.dist.family_name().to_owned(),
                params: self.plan.dist.params_string(),
                alpha: self.plan.alpha.value(),
                n: p.n,
                replications: self.plan.replications,
                seed: self.plan.master_seed,
                median_abs_var_error: p.median_abs_var_error,
                median_cvar_error: p.median_cvar_error,
                median_abs_cvar_error: p.median_abs_cvar_error,
            })
            .collect()
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Medians of the VaR and CVaR estimation errors at each grid size. Grid point
/// `g` uses substreams `g * 2^32 + r`, so points are independent of each other.
pub fn run_convergence(plan: &ExperimentPlan) -> Result<ConvergenceReport> {
    plan.validate()?;
    let ExperimentKind::Convergence { grid } = &plan.kind else {
        return Err(Error::invalid(format!("expected a convergence plan, got {}", plan.kind.name())));
    };
    let start = Instant::now();
    let level = plan.alpha;
    let (v, c) = (plan.dist.true_var(level), plan.dist.true_cvar(level));
    let points = grid
        .iter()
        .enumerate()
        .map(|(g, &n)| {
            let errors = (1..=plan.replications)
                .into_par_iter()
                .map(|r| {
                    let sample = plan.dist.sample_stream(n as usize, plan.master_seed, ((g as u64) << 32) + r)?;
                    let (vh, ch) = estimate_var_cvar(&sample, level);
                    Ok((vh - v, ch - c))
                })
                .collect::<Result<Vec<(f64, f64)>>>()?;
            Ok(ConvergencePoint {
                n,
                median_abs_var_error: median(errors.iter().map(|e| e.0.abs()).collect()),
                median_cvar_error: median(errors.iter().map(|e| e.1).collect()),
                median_abs_cvar_error: median(errors.iter().map(|e| e.1.abs()).collect()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = |f: fn(&ConvergencePoint) -> f64| {
        log_log_slope(&points.iter().map(|p| (p.n as f64, f(p))).collect::<Vec<_>>())
    };
    Ok(ConvergenceReport {
        plan: plan.clone(),
        var_slope: slope(|p| p.median_abs_var_error),
        cvar_slope: slope(|p| p.median_abs_cvar_error),
        points,
        duration_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn run_convergence_with_threads(plan: &ExperimentPlan, threads: usize) -> Result<ConvergenceReport> {
    with_threads(threads, || run_convergence(plan))
}

pub const DEFAULT_ALPHAS: [f64; 2] = [0.9, 0.95];
pub const DEFAULT_NS: [u64; 3] = [1_000, 10_000, 100_000];
pub const DEFAULT_EPS: [f64; 3] = [0.1, 0.5, 1.0];
pub const DEFAULT_REPLICATIONS: u64 = 2000;

/// The default grid: Gaussian(0,1), Exponential(1) and Uniform(0,1) crossed with
/// `alpha`, `n` and `eps` from the constants above. Each point gets a VaR deviation
/// plan and a CVaR plan with the general bound of the catalog tail model.
pub fn default_grid(replications: u64, master_seed: u64) -> Vec<ExperimentPlan> {
    let dists = [
        DistributionSpec::gaussian(0.0, 1.0),
        DistributionSpec::exponential(1.0),
        DistributionSpec::uniform(0.0, 1.0),
    ]
    .map(|d| d.expect("catalog parameters are valid"));
    let mut plans = Vec::new();
    for dist in dists {
        let choice = CvarBoundChoice::general_for(&dist.default_tail_model());
        for alpha in DEFAULT_ALPHAS {
            let level = RiskLevel::new(alpha).expect("valid level");
            for n in DEFAULT_NS {
                for eps in DEFAULT_EPS {
                    plans.push(ExperimentPlan::new(dist, level, ExperimentKind::VarDeviation { n, eps }, replications, master_seed));
                    plans.push(ExperimentPlan::new(
                        dist,
                        level,
                        ExperimentKind::CvarUpperDeviation { n, eps, bound: choice },
                        replications,
                        master_seed,
                    ));
                }
            }
        }
    }
    plans
}

/// Condition report for a CVaR plan's tail model, for display alongside records.
pub fn plan_conditions(plan: &ExperimentPlan) -> Vec<ConditionEntry> {
    condition_report(&plan.tail_model(), &plan.dist, plan.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::SubGaussianTail;

    fn gauss() -> DistributionSpec {
        DistributionSpec::gaussian(0.0, 1.0).unwrap()
    }

    fn level(a: f64) -> RiskLevel {
        RiskLevel::new(a).unwrap()
    }

    fn plan(kind: ExperimentKind, r: u64) -> ExperimentPlan {
        ExperimentPlan::new(gauss(), level(0.95), kind, r, 42)
    }

    #[test]
    fn validation_rejects_bad_plans() {
        let bad = [
            plan(ExperimentKind::VarDeviation { n: 100, eps: 0.1 }, 0),
            plan(ExperimentKind::VarDeviation { n: 0, eps: 0.1 }, 10),
            plan(ExperimentKind::VarDeviation { n: 100, eps: -1.0 }, 10),
            plan(ExperimentKind::VarCoverage { n: 1000, s: 0.25 }, 10),
            plan(ExperimentKind::Convergence { grid: vec![100, 200] }, 10),
            plan(ExperimentKind::CvarUpperDeviation { n: 100, eps: 0.5, bound: CvarBoundChoice::SubexpGeneral }, 10),
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        assert!(matches!(
            plan(ExperimentKind::VarCoverage { n: 1000, s: 0.25 }, 10).validate(),
            Err(Error::Infeasible { min_n: 10001, .. })
        ));
    }

    #[test]
    fn simplified_condition_fails_before_sampling() {
        let e = DistributionSpec::exponential(1.0).unwrap();
        let p = ExperimentPlan::new(
            e,
            level(0.95),
            ExperimentKind::CvarUpperDeviation { n: 1_000_000_000, eps: 0.5, bound: CvarBoundChoice::SubexpSimplified },
            1_000_000,
            1,
        );
        let start = Instant::now();
        assert!(matches!(run_cvar_deviation(&p), Err(Error::ConditionViolation { .. })));
        assert!(start.elapsed().as_secs_f64() < 1.0);
    }

    #[test]
    fn single_replication_frequency_is_binary() {
        let r = run_var_deviation(&plan(ExperimentKind::VarDeviation { n: 100, eps: 0.1 }, 1)).unwrap();
        assert!(r.empirical_frequency == 0.0 || r.empirical_frequency == 1.0);
        assert_eq!(r.binomial_stderr, 0.0);
        let c = run_var_coverage(&ExperimentPlan::new(
            gauss(),
            level(0.9),
            ExperimentKind::VarCoverage { n: 10_000, s: 0.3 },
            1,
            3,
        ))
        .unwrap();
        assert!(c.hits <= 1);
    }

    #[test]
    fn vacuous_bound_passes_and_keeps_frequency() {
        let r = run_var_deviation(&plan(ExperimentKind::VarDeviation { n: 50, eps: 0.05 }, 200)).unwrap();
        assert!(r.bound_raw >= 1.0);
        assert_eq!(r.bound_clamped, 1.0);
        assert!(r.pass);
        assert!(r.empirical_frequency > 0.0);
        assert!((r.empirical_frequency * 200.0 - r.hits as f64).abs() < 1e-9);
    }

    #[test]
    fn large_eps_never_deviates() {
        let r = run_var_deviation(&plan(ExperimentKind::VarDeviation { n: 200, eps: 100.0 }, 100)).unwrap();
        assert_eq!(r.hits, 0);
        let r = run_cvar_deviation(&plan(
            ExperimentKind::CvarUpperDeviation { n: 20_000, eps: 1e4, bound: CvarBoundChoice::SubgaussGeneral },
            20,
        ))
        .unwrap();
        assert_eq!(r.hits, 0);
        assert!(r.bound_clamped < 1e-10 && r.pass);
    }

    #[test]
    fn wrong_runner_is_rejected() {
        let p = plan(ExperimentKind::VarDeviation { n: 100, eps: 0.1 }, 5);
        assert!(run_var_coverage(&p).is_err());
        assert!(run_batch(&[plan(ExperimentKind::Convergence { grid: vec![10, 20, 40] }, 5)]).is_err());
    }

    #[test]
    fn batch_matches_individual_runs() {
        let plans = vec![
            plan(ExperimentKind::VarDeviation { n: 500, eps: 0.1 }, 300),
            plan(ExperimentKind::CvarUpperDeviation { n: 500, eps: 0.5, bound: CvarBoundChoice::SubgaussGeneral }, 300),
            ExperimentPlan::new(gauss(), level(0.9), ExperimentKind::VarDeviation { n: 500, eps: 0.2 }, 300, 42),
            plan(ExperimentKind::VarDeviation { n: 800, eps: 0.1 }, 300),
            ExperimentPlan::new(gauss(), level(0.9), ExperimentKind::VarCoverage { n: 500, s: 0.45 }, 300, 42),
        ];
        let batched = run_batch(&plans).unwrap();
        for (p, b) in plans.iter().zip(&batched) {
            let single = run_batch(std::slice::from_ref(p)).unwrap().remove(0);
            assert_eq!(&b.plan, p);
            assert_eq!(b.hits, single.hits);
            assert_eq!(b.bound_raw, single.bound_raw);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let plans = vec![
            plan(ExperimentKind::VarDeviation { n: 300, eps: 0.1 }, 400),
            plan(ExperimentKind::CvarUpperDeviation { n: 300, eps: 0.5, bound: CvarBoundChoice::SubgaussGeneral }, 400),
        ];
        let a = run_batch_with_threads(&plans, 1).unwrap();
        let b = run_batch_with_threads(&plans, 4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.hits, y.hits);
            assert_eq!(x.empirical_frequency.to_bits(), y.empirical_frequency.to_bits());
        }
    }

    #[test]
    fn pass_flag_recomputes_after_json_round_trip() {
        let records = run_batch(&[
            plan(ExperimentKind::VarDeviation { n: 200, eps: 0.1 }, 100),
            ExperimentPlan::new(gauss(), level(0.9), ExperimentKind::VarCoverage { n: 2000, s: 0.3 }, 100, 5),
        ])
        .unwrap();
        for r in records {
            let back: ExperimentRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            assert_eq!(back, r);
            assert_eq!(back.recompute_pass(), r.pass);
        }
    }

    #[test]
    fn plan_json_shape() {
        let p = plan(ExperimentKind::CvarUpperDeviation { n: 100, eps: 0.5, bound: CvarBoundChoice::SubgaussGeneral }, 10)
            .with_tail(TailModel::SubGaussian(SubGaussianTail::new(1.0, 0.0).unwrap()));
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["kind"], "cvar_upper_deviation");
        assert_eq!(v["bound"], "subgauss_general");
        assert_eq!(v["dist"], "gaussian:mu=0,sigma=1");
        assert_eq!(v["alpha"], 0.95);
        let back: ExperimentPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn median_and_slope() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        let pts: Vec<(f64, f64)> = [1.0f64, 4.0, 16.0].iter().map(|&n| (n, 3.0 / n.sqrt())).collect();
        assert!((log_log_slope(&pts) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_replication_convergence_uses_the_observation() {
        let p = plan(ExperimentKind::Convergence { grid: vec![100, 200, 400] }, 1);
        let rep = run_convergence(&p).unwrap();
        let v = gauss().true_var(level(0.95));
        let s = gauss().sample_stream(200, 42, (1u64 << 32) + 1).unwrap();
        let (vh, _) = estimate_var_cvar(&s, level(0.95));
        assert_eq!(rep.points[1].median_abs_var_error, (vh - v).abs());
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid(2000, 1);
        assert_eq!(g.len(), 3 * 2 * 3 * 3 * 2);
        assert!(g.iter().all(|p| p.validate().is_ok()));
    }

    #[test]
    #[ignore = "full default grid, several minutes on one core"]
    fn default_grid_has_no_violations() {
        let records = run_batch(&default_grid(DEFAULT_REPLICATIONS, 20_240_601)).unwrap();
        let failures: Vec<_> = records.iter().filter(|r| !r.pass).collect();
        assert!(failures.is_empty(), "{failures:#?}");
    }
}
