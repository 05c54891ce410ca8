//! One-step methods for `ẍ = v × B(x) + E(x)`.
//!
//! Both splittings are the Strang composition
//! `Φ^L_{h/2} ∘ Φ^{P}_h ∘ Φ^L_{h/2}`, where `Φ^L` rotates the velocity about
//! the local magnetic field exactly and `Φ^P` advances the electric
//! subsystem `(ẋ, v̇) = (v, E(x))`:
//!
//! * [`Method::ImsO2`] uses the average-vector-field discretisation of `Φ^P`,
//!   which is implicit in the new position and preserves `½|v|² + U(x)`.
//! * [`Method::ExsO2`] uses the explicit velocity-Verlet step instead.
//!
//! [`Method::Boris`] is the synchronized Boris scheme, kept for comparison.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{FieldModel, ProblemSpec, Vec3};
use crate::quadrature::{GaussLegendre, MAX_CACHED_NODES};
use crate::rotation::rotate;

/// Fixed-point tolerance on the max-norm increment of the implicit position.
pub const DEFAULT_FP_TOL: f64 = 1e-16;
pub const DEFAULT_FP_MAX_ITER: usize = 50;
/// Node count when the potential is quadratic (the AVF integrand is affine).
pub const QUADRATIC_QUAD_NODES: usize = 2;
pub const DEFAULT_QUAD_NODES: usize = 10;
/// The iteration is considered stagnated once the increment has failed to
/// decrease this many times in a row while at the rounding floor.
pub const STAGNATION_WINDOW: usize = 3;
/// Rounding floor for the fixed-point increment, in units of
/// `ε·max(1, |x|_∞)`.
pub const STAGNATION_ULPS: f64 = 64.0;

/// Increments at or below this value are attributed to rounding.
pub fn stagnation_floor(x: &Vec3) -> f64 {
    STAGNATION_ULPS * f64::EPSILON * x.amax().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParticleState {
    pub x: Vec3,
    pub v: Vec3,
    pub t: f64,
}

impl ParticleState {
    pub fn new(x: Vec3, v: Vec3, t: f64) -> Self {
        ParticleState { x, v, t }
    }

    pub fn initial(problem: &ProblemSpec) -> Self {
        ParticleState::new(problem.x0, problem.v0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.v.iter()).all(|c| c.is_finite()) && self.t.is_finite()
    }

    /// Max-norm distance over positions and velocities.
    pub fn distance(&self, other: &ParticleState) -> f64 {
        (self.x - other.x).amax().max((self.v - other.v).amax())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Method {
    #[serde(rename = "ims-o2")]
    ImsO2,
    #[serde(rename = "exs-o2")]
    ExsO2,
    #[serde(rename = "boris")]
    Boris,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ImsO2, Method::ExsO2, Method::Boris];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ImsO2 => "ims-o2",
            Method::ExsO2 => "exs-o2",
            Method::Boris => "boris",
        }
    }

    /// The two symmetric splittings covered by the long-time analysis.
    pub fn is_splitting(&self) -> bool {
        matches!(self, Method::ImsO2 | Method::ExsO2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ims-o2" | "ims" => Ok(Method::ImsO2),
            "exs-o2" | "exs" => Ok(Method::ExsO2),
            "boris" => Ok(Method::Boris),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub h: f64,
    pub quad_nodes: usize,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
}

impl IntegratorConfig {
    /// Defaults: 2 quadrature nodes for quadratic potentials, 10 otherwise;
    /// fixed-point tolerance `1e-16` and at most 50 iterations.
    pub fn new<F: FieldModel + ?Sized>(method: Method, h: f64, field: &F) -> Self {
        IntegratorConfig {
            method,
            h,
            quad_nodes: default_quad_nodes(field),
            fp_tol: DEFAULT_FP_TOL,
            fp_max_iter: DEFAULT_FP_MAX_ITER,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.h.is_finite() {
            return Err(Error::InvalidParameter(format!("step size must be finite, got {}", self.h)));
        }
        if self.quad_nodes == 0 || self.quad_nodes > MAX_CACHED_NODES {
            return Err(Error::InvalidParameter(format!(
                "quad_nodes must be in 1..={MAX_CACHED_NODES}, got {}",
                self.quad_nodes
            )));
        }
        if self.fp_tol.is_nan() || self.fp_tol <= 0.0 {
            return Err(Error::InvalidParameter(format!("fp_tol must be positive, got {}", self.fp_tol)));
        }
        if self.fp_max_iter == 0 {
            return Err(Error::InvalidParameter("fp_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn default_quad_nodes<F: FieldModel + ?Sized>(field: &F) -> usize {
    if field.is_quadratic_u() {
        QUADRATIC_QUAD_NODES
    } else {
        DEFAULT_QUAD_NODES
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub state: ParticleState,
    /// Fixed-point iterations spent on the implicit position (0 if explicit).
    pub fp_iterations: usize,
    pub converged: bool,
    /// Last max-norm increment of the fixed-point iteration.
    pub fp_increment: f64,
}

impl StepReport {
    fn explicit(state: ParticleState) -> Self {
        StepReport {
            state,
            fp_iterations: 0,
            converged: true,
            fp_increment: 0.0,
        }
    }
}

/// `∫₀¹ E(ρ x_a + (1 − ρ) x_b) dρ` by `nodes`-point Gauss–Legendre.
pub fn avf_field_average<F: FieldModel + ?Sized>(
    x_a: &Vec3,
    x_b: &Vec3,
    field: &F,
    nodes: usize,
) -> Result<Vec3> {
    avf_with_rule(x_a, x_b, field, GaussLegendre::cached(nodes)?)
}

fn avf_with_rule<F: FieldModel + ?Sized>(
    x_a: &Vec3,
    x_b: &Vec3,
    field: &F,
    rule: &GaussLegendre,
) -> Result<Vec3> {
    if x_a == x_b {
        return field.electric(x_a);
    }
    let d = x_a - x_b;
    let mut acc = Vec3::zeros();
    for (rho, w) in rule.iter() {
        acc += w * field.electric(&(x_b + rho * d))?;
    }
    Ok(acc)
}

/// One EXS-O2 step:
///
/// ```text
/// x' = x + h·e^{(h/2)B̃(x)} v + (h²/2) E(x)
/// v' = e^{(h/2)B̃(x')} [ e^{(h/2)B̃(x)} v + (h/2)(E(x) + E(x')) ]
/// ```
pub fn step_exs<F: FieldModel + ?Sized>(
    s: &ParticleState,
    cfg: &IntegratorConfig,
    field: &F,
) -> Result<StepReport> {
    let h = cfg.h;
    let half = 0.5 * h;
    let e0 = field.electric(&s.x)?;
    let w = rotate(&s.v, &field.magnetic(&s.x), half);
    let x1 = s.x + h * w + (0.5 * h * h) * e0;
    let e1 = field.electric(&x1)?;
    let v1 = rotate(&(w + half * (e0 + e1)), &field.magnetic(&x1), half);
    Ok(StepReport::explicit(ParticleState::new(x1, v1, s.t + h)))
}

/// One IMS-O2 step. The new position solves
///
/// ```text
/// x' = x + h·e^{(h/2)B̃(x)} v + (h²/2) ∫₀¹ E(ρx + (1 − ρ)x') dρ
/// ```
///
/// by fixed-point iteration warm-started from the EXS-O2 position. The
/// velocity is then `e^{(h/2)B̃(x')} [e^{(h/2)B̃(x)} v + h ∫₀¹ E dρ]`.
pub fn step_ims<F: FieldModel + ?Sized>(
    s: &ParticleState,
    cfg: &IntegratorConfig,
    field: &F,
) -> Result<StepReport> {
    let rule = GaussLegendre::cached(cfg.quad_nodes)?;
    let h = cfg.h;
    let half = 0.5 * h;
    let kick = 0.5 * h * h;
    let w = rotate(&s.v, &field.magnetic(&s.x), half);
    let drift = s.x + h * w;

    let mut guess = drift + kick * field.electric(&s.x)?;
    let mut average = Vec3::zeros();
    let mut increment = f64::INFINITY;
    let mut non_decreasing = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.fp_max_iter {
        iterations += 1;
        average = avf_with_rule(&s.x, &guess, field, rule)?;
        let next = drift + kick * average;
        let inc = (next - guess).amax();
        guess = next;
        if !inc.is_finite() {
            break;
        }
        if inc <= cfg.fp_tol {
            increment = inc;
            converged = true;
            break;
        }
        if inc >= increment && inc <= stagnation_floor(&guess) {
            non_decreasing += 1;
        } else {
            non_decreasing = 0;
        }
        increment = inc;
        if non_decreasing >= STAGNATION_WINDOW {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Diverged {
            iterations,
            increment,
            last: Box::new(ParticleState::new(guess, s.v, s.t + h)),
        });
    }
    let v1 = rotate(&(w + h * average), &field.magnetic(&guess), half);
    Ok(StepReport {
        state: ParticleState::new(guess, v1, s.t + h),
        fp_iterations: iterations,
        converged,
        fp_increment: increment,
    })
}

/// One step of the synchronized Boris scheme. Consecutive positions satisfy
///
/// ```text
/// (x⁺ − 2x + x⁻)/h² = ((x⁺ − x⁻)/2h) × B(x) + E(x)
/// ```
///
/// with `v` the centred difference `(x⁺ − x⁻)/2h`.
pub fn step_boris<F: FieldModel + ?Sized>(
    s: &ParticleState,
    cfg: &IntegratorConfig,
    field: &F,
) -> Result<StepReport> {
    let h = cfg.h;
    let half = 0.5 * h;
    let e0 = field.electric(&s.x)?;
    let b0 = field.magnetic(&s.x);
    let v_half = s.v + half * (e0 + s.v.cross(&b0));
    let x1 = s.x + h * v_half;

    let v_minus = v_half + half * field.electric(&x1)?;
    let t_vec = half * field.magnetic(&x1);
    let s_vec = (2.0 / (1.0 + t_vec.norm_squared())) * t_vec;
    let v_prime = v_minus + v_minus.cross(&t_vec);
    let v_plus = v_minus + v_prime.cross(&s_vec);
    let v1 = 0.5 * (v_minus + v_plus);
    Ok(StepReport::explicit(ParticleState::new(x1, v1, s.t + h)))
}

pub fn step<F: FieldModel + ?Sized>(
    s: &ParticleState,
    cfg: &IntegratorConfig,
    field: &F,
) -> Result<StepReport> {
    match cfg.method {
        Method::ImsO2 => step_ims(s, cfg, field),
        Method::ExsO2 => step_exs(s, cfg, field),
        Method::Boris => step_boris(s, cfg, field),
    }
}

/// Number of steps of size `h` covering `t_end`, rounded to the nearest
/// integer.
pub fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {h}")));
    }
    if t_end < 0.0 || !t_end.is_finite() {
        return Err(Error::InvalidParameter(format!("t_end must be non-negative, got {t_end}")));
    }
    let n = (t_end / h).round();
    if n > (1u64 << 31) as f64 {
        return Err(Error::InvalidParameter(format!(
            "t_end/h = {n} exceeds 2^31 steps"
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FixedPointStats {
    pub steps: usize,
    pub total_iterations: u64,
    pub max_iterations: usize,
}

impl FixedPointStats {
    pub fn record(&mut self, iterations: usize) {
        self.steps += 1;
        self.total_iterations += iterations as u64;
        self.max_iterations = self.max_iterations.max(iterations);
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.steps as f64
        }
    }

    pub fn merge(&mut self, other: &FixedPointStats) {
        self.steps += other.steps;
        self.total_iterations += other.total_iterations;
        self.max_iterations = self.max_iterations.max(other.max_iterations);
    }
}

/// Advances `start` by `n_steps` steps, calling `visit(k, state)` for the
/// initial state (`k = 0`) and after every step. Times are set to
/// `start.t + k·h` so they do not accumulate rounding.
///
/// On failure returns the error together with the number of completed steps.
pub fn drive<F, V>(
    field: &F,
    start: ParticleState,
    cfg: &IntegratorConfig,
    n_steps: usize,
    stats: &mut FixedPointStats,
    mut visit: V,
) -> std::result::Result<ParticleState, (Error, usize)>
where
    F: FieldModel + ?Sized,
    V: FnMut(usize, &ParticleState) -> Result<()>,
{
    cfg.validate().map_err(|e| (e, 0))?;
    let mut state = start;
    visit(0, &state).map_err(|e| (e, 0))?;
    for k in 1..=n_steps {
        let report = step(&state, cfg, field).map_err(|e| (e, k - 1))?;
        if cfg.method == Method::ImsO2 {
            stats.record(report.fp_iterations);
        }
        state = report.state;
        state.t = start.t + k as f64 * cfg.h;
        if !state.is_finite() {
            return Err((Error::NumericalBlowup { step: k, t: state.t }, k - 1));
        }
        visit(k, &state).map_err(|e| (e, k))?;
    }
    Ok(state)
}

/// A sampled numerical trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// States at steps `0, stride, 2·stride, …`.
    pub states: Vec<ParticleState>,
    pub stride: usize,
    pub h: f64,
    /// Steps actually taken.
    pub steps: usize,
    /// `steps · h`.
    pub realized_t_end: f64,
    pub fp_stats: FixedPointStats,
}

#[derive(Debug)]
pub struct IntegrationFailure {
    pub partial: Box<Trajectory>,
    pub error: Error,
}

impl fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} steps)", self.error, self.partial.steps)
    }
}

impl std::error::Error for IntegrationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Integrates `problem` from its initial data for `round(t_end/h)` steps,
/// keeping every `stride`-th state.
pub fn integrate(
    problem: &ProblemSpec,
    cfg: &IntegratorConfig,
    t_end: f64,
    stride: usize,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    let empty = Trajectory {
        states: Vec::new(),
        stride: stride.max(1),
        h: cfg.h,
        steps: 0,
        realized_t_end: 0.0,
        fp_stats: FixedPointStats::default(),
    };
    let fail = |error| IntegrationFailure {
        partial: Box::new(empty.clone()),
        error,
    };
    if stride == 0 {
        return Err(fail(Error::InvalidParameter("sample stride must be at least 1".into())));
    }
    let n = step_count(t_end, cfg.h).map_err(fail)?;

    let mut traj = empty.clone();
    traj.states.reserve(n / stride + 1);
    let mut stats = FixedPointStats::default();
    let mut last_step = 0;
    let outcome = drive(
        problem.field.as_ref(),
        ParticleState::initial(problem),
        cfg,
        n,
        &mut stats,
        |k, s| {
            last_step = k;
            if k % stride == 0 {
                traj.states.push(*s);
            }
            Ok(())
        },
    );
    traj.fp_stats = stats;
    match outcome {
        Ok(_) => {
            traj.steps = n;
            traj.realized_t_end = n as f64 * cfg.h;
            Ok(traj)
        }
        Err((error, completed)) => {
            traj.steps = completed.min(last_step);
            traj.realized_t_end = traj.steps as f64 * cfg.h;
            Err(IntegrationFailure {
                partial: Box::new(traj),
                error,
            })
        }
    }
}
