//! High-accuracy reference trajectories from an adaptive Dormand–Prince 5(4)
//! integrator applied to the first-order system `(ẋ, v̇) = (v, v × B(x) + E(x))`.

use nalgebra::SVector;

use crate::error::{Error, Result};
use crate::fields::{FieldModel, ProblemSpec};
use crate::integrators::{drive, step_count, FixedPointStats, IntegratorConfig, ParticleState};

type Y = SVector<f64, 6>;

/// Tightest tolerance the controller is asked to meet.
pub const MIN_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            rtol: 1e-12,
            atol: 1e-12,
            max_steps: 10_000_000,
        }
    }
}

impl ReferenceConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        ReferenceConfig {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol >= MIN_TOLERANCE && self.atol >= MIN_TOLERANCE) {
            return Err(Error::InvalidParameter(format!(
                "reference tolerances must be at least {MIN_TOLERANCE:e} (rtol = {}, atol = {})",
                self.rtol, self.atol
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        Ok(())
    }
}

// Dormand–Prince 5(4) tableau. The system is autonomous, so the nodes c_i
// are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI controller.
const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const ALPHA: f64 = 0.7 / 5.0;
const BETA: f64 = 0.4 / 5.0;

fn pack(s: &ParticleState) -> Y {
    Y::from_column_slice(&[s.x.x, s.x.y, s.x.z, s.v.x, s.v.y, s.v.z])
}

fn unpack(y: &Y, t: f64) -> ParticleState {
    ParticleState::new(y.fixed_rows::<3>(0).into(), y.fixed_rows::<3>(3).into(), t)
}

fn rhs<F: FieldModel + ?Sized>(field: &F, y: &Y) -> Result<Y> {
    let s = unpack(y, 0.0);
    let a = s.v.cross(&field.magnetic(&s.x)) + field.electric(&s.x)?;
    Ok(Y::from_column_slice(&[s.v.x, s.v.y, s.v.z, a.x, a.y, a.z]))
}

fn error_norm(err: &Y, y0: &Y, y1: &Y, cfg: &ReferenceConfig) -> f64 {
    let sum: f64 = (0..6)
        .map(|i| {
            let scale = cfg.atol + cfg.rtol * y0[i].abs().max(y1[i].abs());
            (err[i] / scale).powi(2)
        })
        .sum();
    (sum / 6.0).sqrt()
}

/// Integrates from `start` to `start.t + duration`.
pub fn reference_flow<F: FieldModel + ?Sized>(
    field: &F,
    start: &ParticleState,
    duration: f64,
    cfg: &ReferenceConfig,
) -> Result<ParticleState> {
    cfg.validate()?;
    if duration < 0.0 || !duration.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "reference duration must be non-negative, got {duration}"
        )));
    }
    if duration == 0.0 {
        return Ok(*start);
    }

    let mut y = pack(start);
    let mut t = 0.0;
    let mut k1 = rhs(field, &y)?;

    // Initial step from the usual order-based estimate.
    let scale = |y: &Y, i: usize| cfg.atol + cfg.rtol * y[i].abs();
    let d0 = ((0..6).map(|i| (y[i] / scale(&y, i)).powi(2)).sum::<f64>() / 6.0).sqrt();
    let d1 = ((0..6).map(|i| (k1[i] / scale(&y, i)).powi(2)).sum::<f64>() / 6.0).sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(duration);

    let mut err_prev: f64 = 1e-4;
    let mut steps = 0;
    loop {
        if steps >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded(cfg.max_steps));
        }
        steps += 1;
        let last = t + h >= duration;
        if last {
            h = duration - t;
        }
        if h <= f64::EPSILON * t.abs().max(duration) * 4.0 {
            return Err(Error::StiffnessSuspected { t: start.t + t, h });
        }

        let k2 = rhs(field, &(y + h * (A21 * k1)))?;
        let k3 = rhs(field, &(y + h * (A31 * k1 + A32 * k2)))?;
        let k4 = rhs(field, &(y + h * (A41 * k1 + A42 * k2 + A43 * k3)))?;
        let k5 = rhs(field, &(y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4)))?;
        let k6 = rhs(
            field,
            &(y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5)),
        )?;
        let y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
        let k7 = rhs(field, &y_new)?;
        let err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
        let en = error_norm(&err, &y, &y_new, cfg);

        if en <= 1.0 {
            t = if last { duration } else { t + h };
            y = y_new;
            k1 = k7;
            if last {
                return Ok(unpack(&y, start.t + duration));
            }
            let en = en.max(1e-10);
            let factor = (SAFETY * en.powf(-ALPHA) * err_prev.powf(BETA)).clamp(MIN_FACTOR, MAX_FACTOR);
            err_prev = en;
            h *= factor;
        } else {
            let factor = (SAFETY * en.powf(-ALPHA)).max(MIN_FACTOR);
            h *= factor;
        }
    }
}

/// The reference state of `problem` at `t_end`.
pub fn reference_solve(problem: &ProblemSpec, t_end: f64, cfg: &ReferenceConfig) -> Result<ParticleState> {
    reference_flow(problem.field.as_ref(), &ParticleState::initial(problem), t_end, cfg)
}

/// `|xₙ − x(tₙ)|/|x(tₙ)| + |vₙ − v(tₙ)|/|v(tₙ)|` with Euclidean norms.
pub fn relative_state_error(numerical: &ParticleState, exact: &ParticleState) -> f64 {
    (numerical.x - exact.x).norm() / exact.x.norm() + (numerical.v - exact.v).norm() / exact.v.norm()
}

/// Relative global error of a splitting or Boris run at `t_end` (rounded to
/// a whole number of steps) against the reference solution.
pub fn global_error(
    problem: &ProblemSpec,
    cfg: &IntegratorConfig,
    t_end: f64,
    ref_cfg: &ReferenceConfig,
) -> Result<f64> {
    let n = step_count(t_end, cfg.h)?;
    let realized = n as f64 * cfg.h;
    let mut stats = FixedPointStats::default();
    let end = drive(
        problem.field.as_ref(),
        ParticleState::initial(problem),
        cfg,
        n,
        &mut stats,
        |_, _| Ok(()),
    )
    .map_err(|(e, _)| e)?;
    let exact = reference_solve(problem, realized, ref_cfg)?;
    Ok(relative_state_error(&end, &exact))
}
