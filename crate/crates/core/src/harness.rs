//! Experiment drivers: long-time drift runs, convergence studies and drift
//! scaling fits.
//!
//! Independent cells (method × ε × h) run on a bounded rayon pool. Results
//! come back in cell order regardless of scheduling, so output is
//! deterministic.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{
    builtin_problem, commutes, skew_of, FieldModel, Mat3, ProblemSpec, Vec3, BUILTIN_PROBLEMS,
};
use crate::integrators::{drive, step_count, FixedPointStats, IntegratorConfig, Method, ParticleState};
use crate::invariants::{Channel, DriftMeter, DriftSeries, InvariantValues};
use crate::reference::{reference_flow, relative_state_error, ReferenceConfig};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "CPD_THREADS";

/// Drift curves are compared against their maximum over `[0, SHORT_WINDOW]`.
pub const SHORT_WINDOW: f64 = 100.0;

pub const DEFAULT_T_END: f64 = 1000.0;
pub const FULL_T_END: f64 = 10_000.0;
pub const DEFAULT_EPSILONS: [f64; 3] = [1.0, 0.125, 0.015625];

/// Reads `CPD_THREADS`. Unset or empty means "let rayon decide" (`0`).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(s) if s.trim().is_empty() => Ok(0),
        Ok(s) => s.trim().parse().map_err(|_| {
            Error::InvalidParameter(format!("{THREADS_ENV} must be a non-negative integer, got `{s}`"))
        }),
        Err(_) => Ok(0),
    }
}

fn in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

/// Where the problem for each ε comes from.
#[derive(Debug, Clone)]
pub enum ProblemSource {
    Builtin(String),
    /// A fixed problem (e.g. loaded from a file); only its own ε is valid.
    Fixed(ProblemSpec),
}

impl ProblemSource {
    pub fn name(&self) -> &str {
        match self {
            ProblemSource::Builtin(name) => name,
            ProblemSource::Fixed(p) => &p.name,
        }
    }

    pub fn instantiate(&self, epsilon: f64) -> Result<ProblemSpec> {
        match self {
            ProblemSource::Builtin(name) => builtin_problem(name, epsilon),
            ProblemSource::Fixed(p) if p.epsilon == epsilon => Ok(p.clone()),
            ProblemSource::Fixed(p) => Err(Error::InvalidParameter(format!(
                "problem `{}` is defined for epsilon = {} only, requested {epsilon}",
                p.name, p.epsilon
            ))),
        }
    }

    /// The ε values used when none are requested.
    pub fn default_epsilons(&self) -> Vec<f64> {
        match self {
            ProblemSource::Builtin(_) => DEFAULT_EPSILONS.to_vec(),
            ProblemSource::Fixed(p) => vec![p.epsilon],
        }
    }
}

/// Integrator settings that replace the per-problem defaults when present.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct IntegratorOverrides {
    pub quad_nodes: Option<usize>,
    pub fp_tol: Option<f64>,
    pub fp_max_iter: Option<usize>,
}

impl IntegratorOverrides {
    pub fn config<F: FieldModel + ?Sized>(&self, method: Method, h: f64, field: &F) -> IntegratorConfig {
        let mut cfg = IntegratorConfig::new(method, h, field);
        if let Some(n) = self.quad_nodes {
            cfg.quad_nodes = n;
        }
        if let Some(tol) = self.fp_tol {
            cfg.fp_tol = tol;
        }
        if let Some(n) = self.fp_max_iter {
            cfg.fp_max_iter = n;
        }
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub problem: ProblemSource,
    pub methods: Vec<Method>,
    pub h: f64,
    pub t_end: f64,
    pub sample_stride: usize,
    pub epsilons: Vec<f64>,
    pub overrides: IntegratorOverrides,
    /// Worker pool size; `0` lets rayon choose.
    pub threads: usize,
}

impl ExperimentPlan {
    pub fn new(problem: ProblemSource, methods: Vec<Method>, h: f64, t_end: f64) -> Self {
        let epsilons = problem.default_epsilons();
        ExperimentPlan {
            problem,
            methods,
            h,
            t_end,
            sample_stride: 1,
            epsilons,
            overrides: IntegratorOverrides::default(),
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("at least one method is required".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::InvalidParameter("at least one epsilon is required".into()));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidParameter("sample stride must be at least 1".into()));
        }
        step_count(self.t_end, self.h)?;
        for &eps in &self.epsilons {
            let problem = self.problem.instantiate(eps)?;
            for &m in &self.methods {
                self.overrides.config(m, self.h, problem.field.as_ref()).validate()?;
            }
        }
        Ok(())
    }
}

/// Outcome of one (method, ε) drift run.
#[derive(Debug, Clone, Serialize)]
pub struct DriftCell {
    pub method: Method,
    pub epsilon: f64,
    pub config: IntegratorConfig,
    #[serde(skip)]
    pub series: DriftSeries,
    /// Maximum of each channel over the stored samples, in `Channel::ALL` order.
    pub max_drift: [f64; 4],
    pub wall_seconds: f64,
    /// Steps completed (fewer than planned if the run failed).
    pub steps: usize,
    pub planned_steps: usize,
    pub fp_stats: FixedPointStats,
    pub absolute_channels: Vec<Channel>,
    pub failure: Option<CellFailure>,
}

impl DriftCell {
    pub fn max(&self, channel: Channel) -> f64 {
        self.max_drift[channel.index()]
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub message: String,
    /// True for numerical breakdown, false for invalid input.
    pub numerical: bool,
}

impl From<&Error> for CellFailure {
    fn from(e: &Error) -> Self {
        CellFailure {
            message: e.to_string(),
            numerical: e.is_numerical(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub problem: String,
    pub h: f64,
    pub t_end: f64,
    pub sample_stride: usize,
    /// Cells ordered by ε, then by method, as listed in the plan.
    pub cells: Vec<DriftCell>,
}

impl ExperimentResult {
    pub fn cell(&self, method: Method, epsilon: f64) -> Option<&DriftCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.epsilon == epsilon)
    }

    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(DriftCell::failed)
    }
}

/// Integrates one cell, sampling all four drifts every `stride` steps.
pub fn run_drift_cell(
    problem: &ProblemSpec,
    cfg: &IntegratorConfig,
    t_end: f64,
    stride: usize,
) -> DriftCell {
    let started = Instant::now();
    let mut cell = DriftCell {
        method: cfg.method,
        epsilon: problem.epsilon,
        config: *cfg,
        series: DriftSeries::default(),
        max_drift: [0.0; 4],
        wall_seconds: 0.0,
        steps: 0,
        planned_steps: 0,
        fp_stats: FixedPointStats::default(),
        absolute_channels: Vec::new(),
        failure: None,
    };
    let n = match step_count(t_end, cfg.h) {
        Ok(n) if stride > 0 => n,
        Ok(_) => {
            let e = Error::InvalidParameter("sample stride must be at least 1".into());
            cell.failure = Some(CellFailure::from(&e));
            return cell;
        }
        Err(e) => {
            cell.failure = Some(CellFailure::from(&e));
            return cell;
        }
    };
    cell.planned_steps = n;

    let mut series = DriftSeries::with_capacity(n / stride + 1);
    let mut meter: Option<DriftMeter> = None;
    let mut last = 0;
    let outcome = drive(
        problem.field.as_ref(),
        ParticleState::initial(problem),
        cfg,
        n,
        &mut cell.fp_stats,
        |k, s| {
            last = k;
            if k % stride != 0 {
                return Ok(());
            }
            let values = InvariantValues::evaluate(s, problem, cfg.h)?;
            let m = *meter.get_or_insert_with(|| DriftMeter::new(values));
            series.push(s.t, m.drifts(&values));
            Ok(())
        },
    );
    match outcome {
        Ok(_) => cell.steps = n,
        Err((e, completed)) => {
            cell.steps = completed.min(last);
            cell.failure = Some(CellFailure::from(&e));
        }
    }
    if let Some(m) = meter {
        series.absolute_channels = Channel::ALL
            .into_iter()
            .filter(|c| m.is_absolute(*c))
            .collect();
    }
    cell.max_drift = Channel::ALL.map(|c| series.max(c));
    cell.absolute_channels = series.absolute_channels.clone();
    cell.series = series;
    cell.wall_seconds = started.elapsed().as_secs_f64();
    cell
}

/// Runs every (ε, method) cell of `plan`. A failing cell is marked and keeps
/// its partial series; the other cells still run.
pub fn run_drift_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let problems = plan
        .epsilons
        .iter()
        .map(|&eps| plan.problem.instantiate(eps))
        .collect::<Result<Vec<_>>>()?;
    let keys: Vec<(usize, Method)> = (0..problems.len())
        .flat_map(|i| plan.methods.iter().map(move |&m| (i, m)))
        .collect();
    let cells = in_pool(plan.threads, || {
        keys.par_iter()
            .map(|&(i, m)| {
                let p = &problems[i];
                let cfg = plan.overrides.config(m, plan.h, p.field.as_ref());
                run_drift_cell(p, &cfg, plan.t_end, plan.sample_stride)
            })
            .collect::<Vec<_>>()
    })?;
    Ok(ExperimentResult {
        problem: plan.problem.name().to_string(),
        h: plan.h,
        t_end: plan.t_end,
        sample_stride: plan.sample_stride,
        cells,
    })
}

/// Least-squares slope of `ln y` against `ln x`. Needs at least two points
/// with positive, finite coordinates.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 || pts.len() != xs.len().min(ys.len()) {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub k: u32,
    pub h: f64,
    /// One entry per method, `None` where the run failed.
    pub errors: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub problem: String,
    pub epsilon: f64,
    pub t_end: f64,
    pub methods: Vec<Method>,
    pub rows: Vec<ConvergenceRow>,
    /// Fitted order per method; `None` if any of its runs failed.
    pub slopes: Vec<Option<f64>>,
    pub failures: Vec<String>,
}

impl ConvergenceStudy {
    pub fn errors(&self, method: Method) -> Option<Vec<f64>> {
        let j = self.methods.iter().position(|m| *m == method)?;
        self.rows.iter().map(|r| r.errors[j]).collect()
    }

    pub fn slope(&self, method: Method) -> Option<f64> {
        let j = self.methods.iter().position(|m| *m == method)?;
        self.slopes[j]
    }
}

/// Shared settings for convergence and scaling sweeps.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    pub overrides: IntegratorOverrides,
    pub reference: ReferenceConfig,
    pub threads: usize,
}

/// Global error at `t_end` for `h = 2^{-k}` over `k_range`, with the fitted
/// convergence order per method.
pub fn run_convergence_study(
    problem: &ProblemSpec,
    methods: &[Method],
    k_range: std::ops::RangeInclusive<u32>,
    t_end: f64,
    opts: &SweepOptions,
) -> Result<ConvergenceStudy> {
    if methods.is_empty() || k_range.is_empty() {
        return Err(Error::InvalidParameter("convergence study needs methods and a non-empty k range".into()));
    }
    if *k_range.end() > 52 {
        return Err(Error::InvalidParameter(format!("k must be at most 52, got {}", k_range.end())));
    }
    let ks: Vec<u32> = k_range.collect();
    for &k in &ks {
        let n = t_end * (1u64 << k) as f64;
        if n.is_nan() || n < 1.0 || n.fract() != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "t_end = {t_end} is not a positive multiple of 2^-{k}"
            )));
        }
        step_count(t_end, 1.0 / (1u64 << k) as f64)?;
    }
    opts.reference.validate()?;
    for &m in methods {
        opts.overrides.config(m, 0.5, problem.field.as_ref()).validate()?;
    }


    let start = ParticleState::initial(problem);
    let field = problem.field.as_ref();
    let keys: Vec<(usize, usize)> = (0..ks.len())
        .flat_map(|i| (0..methods.len()).map(move |j| (i, j)))
        .collect();
    let exact = reference_flow(field, &start, t_end, &opts.reference)?;
    let cells: Vec<Result<f64>> = in_pool(opts.threads, || {
        keys.par_iter()
            .map(|&(i, j)| {
                let h = 1.0 / (1u64 << ks[i]) as f64;
                let cfg = opts.overrides.config(methods[j], h, field);
                let n = step_count(t_end, h)?;
                let mut stats = FixedPointStats::default();
                let end = drive(field, start, &cfg, n, &mut stats, |_, _| Ok(())).map_err(|(e, _)| e)?;
                Ok(relative_state_error(&end, &exact))
            })
            .collect()
    })?;

    let mut rows: Vec<ConvergenceRow> = ks
        .iter()
        .map(|&k| ConvergenceRow {
            k,
            h: 1.0 / (1u64 << k) as f64,
            errors: vec![None; methods.len()],
        })
        .collect();
    let mut failures = Vec::new();
    for (&(i, j), cell) in keys.iter().zip(cells) {
        match cell {
            Ok(e) => rows[i].errors[j] = Some(e),
            Err(e) => failures.push(format!("{} at k = {}: {e}", methods[j], ks[i])),
        }
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let slopes = (0..methods.len())
        .map(|j| {
            let errs: Option<Vec<f64>> = rows.iter().map(|r| r.errors[j]).collect();
            errs.and_then(|e| fit_slope(&hs, &e))
        })
        .collect();
    Ok(ConvergenceStudy {
        problem: problem.name.clone(),
        epsilon: problem.epsilon,
        t_end,
        methods: methods.to_vec(),
        rows,
        slopes,
        failures,
    })
}

/// One theorem hypothesis evaluated on a concrete problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Precondition {
    pub condition: &'static str,
    pub holds: bool,
}

fn commutation_tol(a: &Mat3, b: &Mat3) -> f64 {
    1e-12 * a.amax().max(1.0) * b.amax().max(1.0)
}

/// Hypotheses under which the long-time drift of `channel` is known to be
/// `O(h²)` for the splittings. An empty list means no extra hypotheses.
pub fn preconditions(problem: &ProblemSpec, channel: Channel) -> Vec<Precondition> {
    let field = problem.field.as_ref();
    let constant_b = field.is_constant_b();
    let quadratic = field.quadratic();
    // For constant fields B does not depend on the evaluation point.
    let b = field.magnetic(&Vec3::zeros());
    let mut out = Vec::new();
    match channel {
        Channel::Energy => out.push(Precondition {
            condition: "B constant or U quadratic",
            holds: constant_b || quadratic.is_some(),
        }),
        Channel::ModifiedEnergy => out.push(Precondition {
            condition: "U quadratic",
            holds: quadratic.is_some(),
        }),
        Channel::Momentum => {
            let s = problem.momentum_matrix.matrix();
            out.push(Precondition {
                condition: "B constant",
                holds: constant_b,
            });
            out.push(Precondition {
                condition: "S v = v x B",
                holds: constant_b && (s - skew_of(&b).matrix()).amax() <= 1e-12 * b.amax().max(1.0),
            });
            out.push(Precondition {
                condition: "U quadratic",
                holds: quadratic.is_some(),
            });
            out.push(Precondition {
                condition: "QS = SQ",
                holds: quadratic.is_some_and(|q| commutes(q.q_mat(), s, commutation_tol(q.q_mat(), s))),
            });
        }
        Channel::MagneticMoment => {
            out.push(Precondition {
                condition: "B constant",
                holds: constant_b,
            });
            out.push(Precondition {
                condition: "U quadratic",
                holds: quadratic.is_some(),
            });
            let norm = b.norm();
            let holds = constant_b
                && norm > 0.0
                && quadratic.is_some_and(|q| {
                    let unit = *skew_of(&(b / norm)).matrix();
                    commutes(q.q_mat(), &unit, commutation_tol(q.q_mat(), &unit))
                });
            out.push(Precondition {
                condition: "Q B^ = B^ Q",
                holds,
            });
        }
    }
    out
}

pub fn theorem_covered(problem: &ProblemSpec, channel: Channel) -> bool {
    preconditions(problem, channel).iter().all(|p| p.holds)
}

/// Which channels have an `O(h²)` drift guarantee, per built-in problem at ε = 1.
pub fn coverage_matrix() -> Vec<(&'static str, [bool; 4])> {
    BUILTIN_PROBLEMS
        .iter()
        .map(|&name| {
            let p = builtin_problem(name, 1.0).expect("built-in problem");
            (name, Channel::ALL.map(|c| theorem_covered(&p, c)))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftScaling {
    pub problem: String,
    pub epsilon: f64,
    pub method: Method,
    pub channel: Channel,
    pub t_end: f64,
    pub h: Vec<f64>,
    /// Maximum drift over `[0, t_end]`, per step size.
    pub max_drift: Vec<f64>,
    /// Maximum drift over `[0, min(SHORT_WINDOW, t_end)]`, per step size.
    pub window_max_drift: Vec<f64>,
    pub exponent: Option<f64>,
    pub preconditions: Vec<Precondition>,
    pub theorem_covered: bool,
    pub failures: Vec<String>,
}

impl DriftScaling {
    /// True when no run shows secular growth: the long-horizon maximum stays
    /// within `factor` of the short-window maximum at every step size.
    pub fn bounded(&self, factor: f64) -> bool {
        self.failures.is_empty()
            && self
                .max_drift
                .iter()
                .zip(&self.window_max_drift)
                .all(|(m, w)| *m <= factor * *w)
    }
}

/// Maximum drift of `channel` over `[0, t_end]` for each step size, with a
/// log-log fit of drift against `h`. Every step is sampled.
pub fn run_drift_scaling(
    problem: &ProblemSpec,
    method: Method,
    h_list: &[f64],
    t_end: f64,
    channel: Channel,
    opts: &SweepOptions,
) -> Result<DriftScaling> {
    if h_list.len() < 2 {
        return Err(Error::InvalidParameter("drift scaling needs at least two step sizes".into()));
    }
    for &h in h_list {
        step_count(t_end, h)?;
        opts.overrides.config(method, h, problem.field.as_ref()).validate()?;
    }
    let window = SHORT_WINDOW.min(t_end);
    let cells: Vec<DriftCell> = in_pool(opts.threads, || {
        h_list
            .par_iter()
            .map(|&h| {
                let cfg = opts.overrides.config(method, h, problem.field.as_ref());
                run_drift_cell(problem, &cfg, t_end, 1)
            })
            .collect()
    })?;
    let failures = cells
        .iter()
        .zip(h_list)
        .filter_map(|(c, h)| c.failure.as_ref().map(|f| format!("h = {h}: {}", f.message)))
        .collect::<Vec<_>>();
    let max_drift: Vec<f64> = cells.iter().map(|c| c.max(channel)).collect();
    let window_max_drift = cells.iter().map(|c| c.series.max_until(channel, window)).collect();
    let exponent = if failures.is_empty() {
        fit_slope(h_list, &max_drift)
    } else {
        None
    };
    let preconditions = preconditions(problem, channel);
    Ok(DriftScaling {
        problem: problem.name.clone(),
        epsilon: problem.epsilon,
        method,
        channel,
        t_end,
        h: h_list.to_vec(),
        max_drift,
        window_max_drift,
        exponent,
        theorem_covered: preconditions.iter().all(|p| p.holds),
        preconditions,
        failures,
    })
}
