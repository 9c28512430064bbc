//! The `cvarbound` command line.
//!
//! ```text
//! cvarbound estimate    --file data.txt --alpha 0.95
//! cvarbound bound       cvar-subgauss-general --dist gaussian:mu=0,sigma=1 --alpha 0.95 --n 1000 --eps 0.5
//! cvarbound samplesize  var --dist gaussian:mu=0,sigma=1 --alpha 0.95 --eps 0.1 --delta 0.05
//! cvarbound experiment  var-coverage --dist gaussian:mu=0,sigma=1 --alpha 0.9 --n 10000 --s 0.3 --R 2000 --seed 42
//! cvarbound conditions  --dist exponential:rate=1 --alpha 0.95
//! ```
//!
//! Exit codes: 0 success, 1 input or validation error, 2 infeasible or not
//! achievable, 3 I/O error. Nothing is written to the output before all inputs
//! have been validated.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::distributions::{DistributionSpec, SubExponentialTail, SubGaussianTail, TailModel};
use crate::error::Error;
use crate::estimators::{estimate_var_cvar, RiskLevel, SortedSample};
use crate::harness::{
    default_grid, run_batch, run_convergence, ConvergenceReport, CvarBoundChoice, ExperimentKind,
    ExperimentPlan, ExperimentRecord, DEFAULT_REPLICATIONS,
};
use crate::tailbounds::cvar::condition_report;
use crate::tailbounds::{
    cvar_bound_subexp, cvar_bound_subexp_general, cvar_bound_subgauss, cvar_bound_subgauss_general,
    dkw_deviation_bound, interval_levels, sample_size_for_cvar, sample_size_for_var, var_deviation_bound,
    var_interval, ConditionEntry, DeviationBound, SampleSizeOutcome,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cvarbound", version, about = "VaR/CVaR estimation, concentration bounds and Monte Carlo checks")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Human, global = true)]
    pub format: Format,

    /// Write output to this file instead of standard output.
    #[arg(long, short = 'o', global = true)]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate VaR and CVaR from a sample file or a simulated sample.
    Estimate(EstimateArgs),
    /// Evaluate a concentration bound.
    Bound(BoundArgs),
    /// Smallest sample size that brings a bound below delta.
    Samplesize(SampleSizeArgs),
    /// Run Monte Carlo experiments.
    Experiment(ExperimentArgs),
    /// Report the CVaR bound conditions for a distribution and tail model.
    Conditions(ConditionArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Sample file: one number per line, `#` comments and blank lines ignored.
    #[arg(long, conflicts_with = "dist", required_unless_present = "dist")]
    pub file: Option<PathBuf>,
    /// Distribution to simulate, e.g. `gaussian:mu=0,sigma=1`.
    #[arg(long, requires = "n")]
    pub dist: Option<DistributionSpec>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundName {
    VarInterval,
    VarDeviation,
    CvarSubgauss,
    CvarSubgaussGeneral,
    CvarSubexp,
    CvarSubexpGeneral,
    Dkw,
}

#[derive(Debug, Args)]
pub struct TailArgs {
    /// Tail model, e.g. `subgauss:sigma=1,mu=0` or `subexp:sigma=2,b=2,b_prime=0.25,mu=1`.
    /// Defaults to the distribution's catalog model.
    #[arg(long)]
    pub tail: Option<TailModel>,
    /// Replace the tail model's sigma.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(value_enum)]
    pub name: BoundName,
    #[arg(long)]
    pub dist: Option<DistributionSpec>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Interval exponent in (0, 1/2) for `var-interval`.
    #[arg(long)]
    pub s: Option<f64>,
    /// Sample file for `var-interval`.
    #[arg(long, conflicts_with = "seed")]
    pub file: Option<PathBuf>,
    /// Seed for the simulated `var-interval` sample (requires --dist).
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub tail: TailArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Var,
    Cvar,
}

#[derive(Debug, Args)]
pub struct SampleSizeArgs {
    #[arg(value_enum)]
    pub target: Target,
    #[arg(long)]
    pub dist: DistributionSpec,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub delta: f64,
    #[command(flatten)]
    pub tail: TailArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    VarCoverage,
    VarDeviation,
    CvarDeviation,
    Convergence,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: Option<ExperimentName>,
    #[arg(long)]
    pub dist: Option<DistributionSpec>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// CVaR bound: subgauss_general, subexp_general, subgauss_simplified or subexp_simplified.
    #[arg(long)]
    pub bound: Option<CvarBoundChoice>,
    /// Comma-separated sample sizes for `convergence`, or `default` for the default experiment grid.
    #[arg(long)]
    pub grid: Option<String>,
    /// Number of replications.
    #[arg(long = "R", default_value_t = DEFAULT_REPLICATIONS)]
    pub replications: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores); results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// JSON file holding one plan or an array of plans.
    #[arg(long, conflicts_with_all = ["kind", "grid"])]
    pub plan: Option<PathBuf>,
    #[command(flatten)]
    pub tail: TailArgs,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    #[arg(long)]
    pub dist: DistributionSpec,
    #[arg(long)]
    pub alpha: f64,
    #[command(flatten)]
    pub tail: TailArgs,
}

/// An error with its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Infeasible { .. } => EXIT_INFEASIBLE,
            _ => EXIT_INPUT,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::io(format!("write failed: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::io(format!("CSV write failed: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let sink = Sink { format: cli.format, path: cli.output.clone() };
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a, &sink),
        Command::Bound(a) => cmd_bound(a, &sink),
        Command::Samplesize(a) => cmd_samplesize(a, &sink),
        Command::Experiment(a) => cmd_experiment(a, &sink),
        Command::Conditions(a) => cmd_conditions(a, &sink),
    }
}

/// Where and how results are written. Opened only once inputs are validated.
struct Sink {
    format: Format,
    path: Option<PathBuf>,
}

impl Sink {
    fn open(&self) -> CliResult<Box<dyn Write>> {
        Ok(match &self.path {
            Some(p) => Box::new(BufWriter::new(
                fs::File::create(p).map_err(|e| CliError::io(format!("cannot create {}: {e}", p.display())))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    /// Writes a finished document in one go.
    fn emit(&self, human: impl FnOnce() -> String, json: impl FnOnce() -> CliResult<String>, csv: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
        let mut out = self.open()?;
        match self.format {
            Format::Human => out.write_all(human().as_bytes())?,
            Format::Json => {
                out.write_all(json()?.as_bytes())?;
                out.write_all(b"\n")?;
            }
            Format::Csv => csv(&mut out)?,
        }
        out.flush()?;
        Ok(())
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::io(format!("JSON encoding failed: {e}")))
}

fn write_csv<T: Serialize>(out: &mut dyn Write, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn need<T: Copy>(value: Option<T>, flag: &str, what: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::input(format!("{what} requires {flag}")))
}

fn need_ref<'a, T>(value: &'a Option<T>, flag: &str, what: &str) -> CliResult<&'a T> {
    value.as_ref().ok_or_else(|| CliError::input(format!("{what} requires {flag}")))
}

fn level(alpha: f64) -> CliResult<RiskLevel> {
    Ok(RiskLevel::new(alpha)?)
}

fn sample_size(n: u64) -> CliResult<usize> {
    if n == 0 {
        return Err(CliError::input("--n must be at least 1"));
    }
    usize::try_from(n).map_err(|_| CliError::input(format!("--n {n} is too large")))
}

/// Reads a sample file: one decimal number per line; `#` comments and blank lines are skipped.
pub fn read_sample_file(path: &Path) -> CliResult<SortedSample> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let x: f64 = t.parse().map_err(|_| {
            CliError::input(format!("{} line {}: cannot parse `{t}` as a number", path.display(), i + 1))
        })?;
        if !x.is_finite() {
            return Err(CliError::input(format!("{} line {}: value `{t}` is not finite", path.display(), i + 1)));
        }
        values.push(x);
    }
    if values.is_empty() {
        return Err(CliError::input(format!("{} contains no sample values", path.display())));
    }
    Ok(SortedSample::new(values)?)
}

fn resolve_tail(dist: &DistributionSpec, args: &TailArgs) -> CliResult<TailModel> {
    let base = args.tail.unwrap_or_else(|| dist.default_tail_model());
    let Some(sigma) = args.sigma else { return Ok(base) };
    Ok(match base {
        TailModel::SubGaussian(t) => TailModel::SubGaussian(SubGaussianTail::new(sigma, t.mu())?),
        TailModel::SubExponential(t) => {
            TailModel::SubExponential(SubExponentialTail::new(sigma, t.b(), t.b_prime(), t.mu())?)
        }
    })
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    source: String,
    n: usize,
    alpha: f64,
    var_hat: f64,
    cvar_hat: f64,
    true_var: Option<f64>,
    true_cvar: Option<f64>,
    var_error: Option<f64>,
    cvar_error: Option<f64>,
}

fn cmd_estimate(a: &EstimateArgs, sink: &Sink) -> CliResult<()> {
    let lvl = level(a.alpha)?;
    let (source, sample, dist) = match (&a.file, &a.dist) {
        (Some(path), _) => (path.display().to_string(), read_sample_file(path)?, None),
        (None, Some(dist)) => {
            let n = sample_size(need(a.n, "--n", "--dist")?)?;
            (format!("{dist} (seed {})", a.seed), dist.sample(n, a.seed)?, Some(*dist))
        }
        (None, None) => return Err(CliError::input("estimate requires --file or --dist")),
    };
    let (var_hat, cvar_hat) = estimate_var_cvar(&sample, lvl);
    let true_var = dist.map(|d| d.true_var(lvl));
    let true_cvar = dist.map(|d| d.true_cvar(lvl));
    let report = EstimateReport {
        source,
        n: sample.len(),
        alpha: a.alpha,
        var_hat,
        cvar_hat,
        true_var,
        true_cvar,
        var_error: true_var.map(|v| var_hat - v),
        cvar_error: true_cvar.map(|c| cvar_hat - c),
    };
    sink.emit(
        || {
            let mut s = format!(
                "source    {}\nn         {}\nalpha     {}\nvar_hat   {}\ncvar_hat  {}\n",
                report.source, report.n, report.alpha, report.var_hat, report.cvar_hat
            );
            if let (Some(v), Some(c), Some(ev), Some(ec)) = (report.true_var, report.true_cvar, report.var_error, report.cvar_error) {
                s += &format!("true_var  {v}  (error {ev})\ntrue_cvar {c}  (error {ec})\n");
            }
            s
        },
        || to_json(&report),
        |out| write_csv(out, std::slice::from_ref(&report)),
    )
}

#[derive(Debug, Serialize)]
struct IntervalReport {
    alpha: f64,
    s: f64,
    n: u64,
    alpha_minus: f64,
    alpha_plus: f64,
    confidence_floor: f64,
    lower: Option<f64>,
    upper: Option<f64>,
    true_var: Option<f64>,
    covers_true_var: Option<bool>,
}

#[derive(Debug, Serialize)]
struct BoundCsvRow<'a> {
    bound_name: &'a str,
    section: &'a str,
    label: &'a str,
    value: f64,
    satisfied: Option<bool>,
    threshold: Option<f64>,
}

fn bound_rows(b: &DeviationBound) -> Vec<BoundCsvRow<'_>> {
    let row = |section, label, value| BoundCsvRow { bound_name: &b.bound_name, section, label, value, satisfied: None, threshold: None };
    let mut rows: Vec<_> = b.terms.iter().map(|t| row("term", t.label.as_str(), t.value)).collect();
    rows.push(row("total", "raw", b.total));
    rows.push(row("total", "clamped", b.clamped()));
    rows.extend(b.conditions.iter().map(|c| BoundCsvRow {
        bound_name: &b.bound_name,
        section: "condition",
        label: &c.name,
        value: c.observed,
        satisfied: Some(c.satisfied),
        threshold: Some(c.threshold),
    }));
    rows.extend(b.diagnostics.iter().map(|t| row("diagnostic", t.label.as_str(), t.value)));
    rows
}

/// Plain notation for moderate magnitudes, scientific otherwise.
fn num(x: f64) -> String {
    if x != 0.0 && x.is_finite() && (x.abs() >= 1e6 || x.abs() < 1e-4) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn human_conditions(conditions: &[ConditionEntry]) -> String {
    conditions
        .iter()
        .map(|c| {
            format!(
                "  {:<26} {:<13} observed {}  threshold {}\n",
                c.name,
                if c.satisfied { "satisfied" } else { "NOT satisfied" },
                num(c.observed),
                num(c.threshold)
            )
        })
        .collect()
}

fn human_bound(b: &DeviationBound, note: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(note) = note {
        s += &format!("note: {note}\n");
    }
    s += &format!("bound  {}\n", b.bound_name);
    let i = &b.inputs;
    let mut inputs = Vec::new();
    if let Some(d) = &i.distribution {
        inputs.push(format!("dist={d}"));
    }
    if let Some(t) = &i.tail {
        inputs.push(format!("tail={t}"));
    }
    if let Some(a) = i.alpha {
        inputs.push(format!("alpha={a}"));
    }
    if let Some(n) = i.n {
        inputs.push(format!("n={n}"));
    }
    if let Some(e) = i.eps {
        inputs.push(format!("eps={e}"));
    }
    s += &format!("inputs {}\nterms\n", inputs.join(" "));
    for t in &b.terms {
        s += &format!("  {:<26} {}\n", t.label, num(t.value));
    }
    s += &format!("total (raw)                  {}\n", num(b.total));
    s += &format!("total (clamped to [0, 1])    {}\n", num(b.clamped()));
    if !b.conditions.is_empty() {
        s += "conditions\n";
        s += &human_conditions(&b.conditions);
    }
    if !b.diagnostics.is_empty() {
        s += "diagnostics\n";
        for t in &b.diagnostics {
            s += &format!("  {:<26} {}\n", t.label, num(t.value));
        }
    }
    s
}

#[derive(Debug, Serialize)]
struct BoundReport {
    #[serde(flatten)]
    bound: DeviationBound,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn cmd_bound(a: &BoundArgs, sink: &Sink) -> CliResult<()> {
    let what = "this bound";
    if a.name == BoundName::VarInterval {
        return cmd_var_interval(a, sink);
    }
    let n = need(a.n, "--n", what)?;
    let eps = need(a.eps, "--eps", what)?;
    let mut note = None;
    let bound = if a.name == BoundName::Dkw {
        dkw_deviation_bound(n, eps)?
    } else {
        let dist = *need_ref(&a.dist, "--dist", what)?;
        let lvl = level(need(a.alpha, "--alpha", what)?)?;
        let tail = resolve_tail(&dist, &a.tail)?;
        let mismatch = |name: &str| CliError::input(format!("{name} needs a matching tail model, got {tail}; pass --tail"));
        match (a.name, &tail) {
            (BoundName::VarDeviation, _) => var_deviation_bound(&dist, lvl, n, eps)?,
            (BoundName::CvarSubgaussGeneral, TailModel::SubGaussian(t)) => cvar_bound_subgauss_general(t, &dist, lvl, n, eps)?,
            (BoundName::CvarSubexpGeneral, TailModel::SubExponential(t)) => cvar_bound_subexp_general(t, &dist, lvl, n, eps)?,
            (BoundName::CvarSubgauss, TailModel::SubGaussian(t)) => match cvar_bound_subgauss(t, &dist, lvl, n, eps) {
                Err(Error::ConditionViolation { condition, .. }) => {
                    note = Some(format!("condition `{condition}` fails; the simplified bound does not apply, showing the general form"));
                    cvar_bound_subgauss_general(t, &dist, lvl, n, eps)?
                }
                other => other?,
            },
            (BoundName::CvarSubexp, TailModel::SubExponential(t)) => match cvar_bound_subexp(t, &dist, lvl, n, eps) {
                Err(Error::ConditionViolation { condition, .. }) => {
                    note = Some(format!("condition `{condition}` fails; the simplified bound does not apply, showing the general form"));
                    cvar_bound_subexp_general(t, &dist, lvl, n, eps)?
                }
                other => other?,
            },
            (BoundName::CvarSubgauss | BoundName::CvarSubgaussGeneral, _) => return Err(mismatch("sub-Gaussian bounds")),
            (BoundName::CvarSubexp | BoundName::CvarSubexpGeneral, _) => return Err(mismatch("sub-exponential bounds")),
            (BoundName::Dkw | BoundName::VarInterval, _) => unreachable!("handled above"),
        }
    };
    let report = BoundReport { bound, note };
    sink.emit(
        || human_bound(&report.bound, report.note.as_deref()),
        || to_json(&report),
        |out| write_csv(out, &bound_rows(&report.bound)),
    )
}

fn cmd_var_interval(a: &BoundArgs, sink: &Sink) -> CliResult<()> {
    let what = "var-interval";
    let alpha = need(a.alpha, "--alpha", what)?;
    let lvl = level(alpha)?;
    let s = need(a.s, "--s", what)?;
    // Feasibility is settled before any sample is read or drawn.
    if let Some(n) = a.n {
        interval_levels(lvl, s, n)?;
    }
    let sample = match (&a.file, &a.dist) {
        (Some(path), _) => {
            let sample = read_sample_file(path)?;
            if let Some(n) = a.n {
                if n != sample.len() as u64 {
                    return Err(CliError::input(format!("--n {n} disagrees with the {} values in {}", sample.len(), path.display())));
                }
            }
            Some(sample)
        }
        (None, Some(dist)) if a.seed.is_some() => {
            let n = sample_size(need(a.n, "--n", "a simulated interval")?)?;
            Some(dist.sample(n, a.seed.unwrap_or_default())?)
        }
        _ => None,
    };
    let n = match &sample {
        Some(x) => x.len() as u64,
        None => need(a.n, "--n", what)?,
    };
    let levels = interval_levels(lvl, s, n)?;
    let interval = sample.as_ref().map(|x| var_interval(x, lvl, s)).transpose()?;
    let true_var = a.dist.map(|d| d.true_var(lvl));
    let report = IntervalReport {
        alpha,
        s,
        n,
        alpha_minus: levels.alpha_minus,
        alpha_plus: levels.alpha_plus,
        confidence_floor: levels.confidence_floor,
        lower: interval.as_ref().map(|i| i.lower),
        upper: interval.as_ref().map(|i| i.upper),
        true_var,
        covers_true_var: interval.as_ref().zip(true_var).map(|(i, v)| i.contains(v)),
    };
    sink.emit(
        || {
            let mut out = format!(
                "bound  var_interval\ninputs alpha={} s={} n={}\nalpha-  {}\nalpha+  {}\nconfidence floor  {}\n",
                report.alpha, report.s, report.n, report.alpha_minus, report.alpha_plus, report.confidence_floor
            );
            match (report.lower, report.upper) {
                (Some(l), Some(u)) => out += &format!("interval  [{l}, {u}]\n"),
                _ => out += "interval  (pass --file, or --dist with --seed, to compute the endpoints)\n",
            }
            if let (Some(v), Some(c)) = (report.true_var, report.covers_true_var) {
                out += &format!("true_var  {v}  ({})\n", if c { "covered" } else { "not covered" });
            }
            out
        },
        || to_json(&report),
        |out| write_csv(out, std::slice::from_ref(&report)),
    )
}

#[derive(Debug, Serialize)]
struct SampleSizeReport {
    target: Target,
    dist: DistributionSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail: Option<TailModel>,
    alpha: f64,
    eps: f64,
    delta: f64,
    outcome: SampleSizeOutcome,
}

#[derive(Debug, Serialize)]
struct SampleSizeCsvRow {
    target: Target,
    dist: String,
    alpha: f64,
    eps: f64,
    delta: f64,
    status: &'static str,
    n: Option<u64>,
    bound_at_n: Option<f64>,
    bound_at_prev: Option<f64>,
    reason: Option<String>,
}

fn cmd_samplesize(a: &SampleSizeArgs, sink: &Sink) -> CliResult<()> {
    let lvl = level(a.alpha)?;
    let (outcome, tail) = match a.target {
        Target::Var => (sample_size_for_var(a.eps, a.delta, &a.dist, lvl)?, None),
        Target::Cvar => {
            let tail = resolve_tail(&a.dist, &a.tail)?;
            (sample_size_for_cvar(a.eps, a.delta, &tail, &a.dist, lvl)?, Some(tail))
        }
    };
    let report = SampleSizeReport { target: a.target, dist: a.dist, tail, alpha: a.alpha, eps: a.eps, delta: a.delta, outcome };
    sink.emit(
        || match &report.outcome {
            SampleSizeOutcome::Achieved(s) => {
                let mut out = format!("n  {}\nbound at n      {}\n", s.n, s.bound_at_n);
                match s.bound_at_prev {
                    Some(p) => out += &format!("bound at n - 1  {p}\n"),
                    None => out += "bound at n - 1  (n = 1)\n",
                }
                out
            }
            SampleSizeOutcome::NotAchievable { reason, .. } => format!("not achievable: {reason}\n"),
        },
        || to_json(&report),
        |out| {
            let row = match &report.outcome {
                SampleSizeOutcome::Achieved(s) => SampleSizeCsvRow {
                    target: report.target,
                    dist: report.dist.to_string(),
                    alpha: report.alpha,
                    eps: report.eps,
                    delta: report.delta,
                    status: "achieved",
                    n: Some(s.n),
                    bound_at_n: Some(s.bound_at_n),
                    bound_at_prev: s.bound_at_prev,
                    reason: None,
                },
                SampleSizeOutcome::NotAchievable { reason, .. } => SampleSizeCsvRow {
                    target: report.target,
                    dist: report.dist.to_string(),
                    alpha: report.alpha,
                    eps: report.eps,
                    delta: report.delta,
                    status: "not_achievable",
                    n: None,
                    bound_at_n: None,
                    bound_at_prev: None,
                    reason: Some(reason.clone()),
                },
            };
            write_csv(out, &[row])
        },
    )?;
    match &report.outcome {
        SampleSizeOutcome::Achieved(_) => Ok(()),
        SampleSizeOutcome::NotAchievable { reason, .. } => {
            Err(CliError { code: EXIT_INFEASIBLE, message: format!("sample size not achievable: {reason}") })
        }
    }
}

fn parse_grid(text: &str) -> CliResult<Vec<u64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| CliError::input(format!("--grid entry `{}` is not a positive integer", t.trim())))
        })
        .collect()
}

fn read_plan_file(path: &Path) -> CliResult<Vec<ExperimentPlan>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: invalid JSON: {e}", path.display())))?;
    let plans = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|p| vec![p])
    };
    let plans: Vec<ExperimentPlan> = plans.map_err(|e| CliError::input(format!("{}: invalid plan: {e}", path.display())))?;
    if plans.is_empty() {
        return Err(CliError::input(format!("{} contains no plans", path.display())));
    }
    Ok(plans)
}

fn plans_from_flags(a: &ExperimentArgs) -> CliResult<Vec<ExperimentPlan>> {
    if a.grid.as_deref() == Some("default") {
        if a.kind.is_some() {
            return Err(CliError::input("--grid default runs the whole default grid; drop the experiment kind"));
        }
        return Ok(default_grid(a.replications, a.seed));
    }
    let Some(kind) = a.kind else {
        return Err(CliError::input("experiment requires a kind, --grid default, or --plan FILE"));
    };
    let what = "this experiment";
    let dist = *need_ref(&a.dist, "--dist", what)?;
    let lvl = level(need(a.alpha, "--alpha", what)?)?;
    let kind = match kind {
        ExperimentName::VarCoverage => ExperimentKind::VarCoverage { n: need(a.n, "--n", what)?, s: need(a.s, "--s", what)? },
        ExperimentName::VarDeviation => ExperimentKind::VarDeviation { n: need(a.n, "--n", what)?, eps: need(a.eps, "--eps", what)? },
        ExperimentName::CvarDeviation => {
            let tail = resolve_tail(&dist, &a.tail)?;
            ExperimentKind::CvarUpperDeviation {
                n: need(a.n, "--n", what)?,
                eps: need(a.eps, "--eps", what)?,
                bound: a.bound.unwrap_or_else(|| CvarBoundChoice::general_for(&tail)),
            }
        }
        ExperimentName::Convergence => {
            let grid = need_ref(&a.grid, "--grid", "convergence")?;
            ExperimentKind::Convergence { grid: parse_grid(grid)? }
        }
    };
    let mut plan = ExperimentPlan::new(dist, lvl, kind, a.replications, a.seed);
    if a.tail.tail.is_some() || a.tail.sigma.is_some() {
        plan = plan.with_tail(resolve_tail(&dist, &a.tail)?);
    }
    Ok(vec![plan])
}

fn human_record(r: &ExperimentRecord) -> String {
    let p = &r.plan;
    let param = match &p.kind {
        ExperimentKind::VarCoverage { s, .. } => format!("s={s}"),
        _ => format!("eps={}", r.s_or_eps()),
    };
    let (rel, bound) = if matches!(p.kind, ExperimentKind::VarCoverage { .. }) {
        (">=", "floor")
    } else {
        ("<=", "bound")
    };
    format!(
        "{} {} alpha={} n={} {} R={} seed={}: frequency {} (stderr {}) {rel} {bound} raw {} clamped {} -> {}\n",
        r.kind_label(),
        p.dist,
        p.alpha.value(),
        p.kind.n().unwrap_or(0),
        param,
        p.replications,
        p.master_seed,
        num(r.empirical_frequency),
        num(r.binomial_stderr),
        num(r.bound_raw),
        num(r.bound_clamped),
        if r.pass { "PASS" } else { "FAIL" }
    )
}

fn human_convergence(r: &ConvergenceReport) -> String {
    let mut s = format!(
        "convergence {} alpha={} R={} seed={}\n{:>12} {:>22} {:>22} {:>22}\n",
        r.plan.dist,
        r.plan.alpha.value(),
        r.plan.replications,
        r.plan.master_seed,
        "n",
        "median |var error|",
        "median cvar error",
        "median |cvar error|"
    );
    for p in &r.points {
        s += &format!(
            "{:>12} {:>22.6e} {:>22.6e} {:>22.6e}\n",
            p.n, p.median_abs_var_error, p.median_cvar_error, p.median_abs_cvar_error
        );
    }
    s += &format!("log-log slope: var {:.4}, cvar {:.4}\n", r.var_slope, r.cvar_slope);
    s
}

fn cmd_experiment(a: &ExperimentArgs, sink: &Sink) -> CliResult<()> {
    let plans = match &a.plan {
        Some(path) => read_plan_file(path)?,
        None => plans_from_flags(a)?,
    };
    for plan in &plans {
        plan.validate()?;
    }
    if a.threads == Some(0) {
        return Err(CliError::input("--threads must be at least 1"));
    }
    let convergence = plans.iter().filter(|p| matches!(p.kind, ExperimentKind::Convergence { .. })).count();
    if convergence > 0 && convergence < plans.len() {
        return Err(CliError::input("convergence plans cannot be mixed with other experiment kinds in one run"));
    }
    let go = || -> CliResult<()> {
        if convergence > 0 {
            run_convergence_plans(&plans, sink)
        } else {
            run_record_plans(&plans, sink)
        }
    };
    match a.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::input(format!("cannot start {t} threads: {e}")))?;
            pool.install(go)
        }
        None => go(),
    }
}

fn run_convergence_plans(plans: &[ExperimentPlan], sink: &Sink) -> CliResult<()> {
    let reports = plans.iter().map(run_convergence).collect::<Result<Vec<_>, _>>()?;
    sink.emit(
        || reports.iter().map(human_convergence).collect(),
        || if reports.len() == 1 { to_json(&reports[0]) } else { to_json(&reports) },
        |out| write_csv(out, &reports.iter().flat_map(|r| r.csv_rows()).collect::<Vec<_>>()),
    )
}

/// Runs plans group by group so CSV and human rows stream as groups finish.
fn run_record_plans(plans: &[ExperimentPlan], sink: &Sink) -> CliResult<()> {
    let mut groups: Vec<((String, u64, u64, u64), Vec<ExperimentPlan>)> = Vec::new();
    for plan in plans {
        let key = (plan.dist.to_string(), plan.kind.n().unwrap_or(0), plan.replications, plan.master_seed);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(plan.clone()),
            None => groups.push((key, vec![plan.clone()])),
        }
    }
    let mut out = sink.open()?;
    match sink.format {
        Format::Json => {
            let mut records = Vec::with_capacity(plans.len());
            for (_, members) in &groups {
                records.extend(run_batch(members)?);
            }
            out.write_all(to_json(&records)?.as_bytes())?;
            out.write_all(b"\n")?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            let mut wrote_header = false;
            for (_, members) in &groups {
                for r in run_batch(members)? {
                    w.serialize(r.csv_row())?;
                    wrote_header = true;
                }
                w.flush()?;
            }
            if !wrote_header {
                w.write_record(["kind", "family", "params", "alpha", "n", "s_or_eps", "R", "seed", "frequency", "stderr", "bound_raw", "bound_clamped", "pass"])?;
            }
            w.flush()?;
        }
        Format::Human => {
            for (_, members) in &groups {
                for r in run_batch(members)? {
                    out.write_all(human_record(&r).as_bytes())?;
                }
                out.flush()?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_conditions(a: &ConditionArgs, sink: &Sink) -> CliResult<()> {
    let lvl = level(a.alpha)?;
    let tail = resolve_tail(&a.dist, &a.tail)?;
    let conditions = condition_report(&tail, &a.dist, lvl);
    #[derive(Serialize)]
    struct Report<'a> {
        dist: DistributionSpec,
        tail: TailModel,
        alpha: f64,
        v_alpha: f64,
        conditions: &'a [ConditionEntry],
    }
    let report = Report { dist: a.dist, tail, alpha: a.alpha, v_alpha: a.dist.true_var(lvl), conditions: &conditions };
    sink.emit(
        || format!("dist {} tail {} alpha {} v_alpha {}\n{}", report.dist, report.tail, report.alpha, report.v_alpha, human_conditions(&conditions)),
        || to_json(&report),
        |out| write_csv(out, &conditions),
    )
}
