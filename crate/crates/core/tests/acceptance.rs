//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! non-zero status if any criterion fails.
//!
//! Set `CPD_FULL_HORIZON=1` to run the long-time criteria on `[0, 10⁴]`
//! instead of `[0, 10³]`. `CPD_THREADS` caps the worker pool.

use std::process::ExitCode;
use std::time::Instant;

use cpd_core::fields::{builtin_problem, skew_of, Mat3, Vec3, BUILTIN_PROBLEMS};
use cpd_core::harness::{
    run_convergence_study, run_drift_experiment, run_drift_scaling, threads_from_env, ExperimentPlan,
    ProblemSource, SweepOptions, DEFAULT_T_END, FULL_T_END,
};
use cpd_core::integrators::{integrate, step, IntegratorConfig, Method, ParticleState};
use cpd_core::invariants::{Channel, DriftMeter, InvariantValues};
use cpd_core::quadrature::GaussLegendre;
use cpd_core::reference::{reference_flow, relative_state_error, ReferenceConfig};
use cpd_core::rotation::rotate;
use cpd_core::ProblemSpec;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const DRIFT_H: f64 = 0.01;
const SCALING_H: [f64; 3] = [0.04, 0.02, 0.01];
const EXPONENT_RANGE: (f64, f64) = (1.6, 2.4);
/// Long-horizon maximum may exceed the `[0, 100]` maximum by at most this factor.
const BOUNDED_FACTOR: f64 = 2.0;

const IMS_ENERGY_TOL_QUADRATIC: f64 = 1e-9;
const IMS_ENERGY_TOL_QUADRATURE: f64 = 1e-7;
const EXS_MODIFIED_ENERGY_TOL: f64 = 1e-10;
const EPSILON_SWEEP: [f64; 3] = [1.0, 0.125, 0.015625];

const GLOBAL_ORDER: f64 = 2.0;
const LOCAL_ORDER: f64 = 3.0;
const ORDER_TOL: f64 = 0.2;

const EXS_REVERSIBILITY_TOL: f64 = 1e-12;
const IMS_REVERSIBILITY_TOL: f64 = 1e-9;
const REVERSIBILITY_SAMPLES: usize = 100;
const REVERSIBILITY_H: f64 = 0.1;

const ROTATION_NORM_TOL: f64 = 1e-14;
const ROTATION_SERIES_TOL: f64 = 1e-12;
const QUADRATURE_TOL: f64 = 1e-14;
const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-6;
const TAN_IDENTITY_TOL: f64 = 1e-10;
const BORIS_TWO_STEP_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

fn t_end() -> f64 {
    match std::env::var("CPD_FULL_HORIZON") {
        Ok(v) if v == "1" => FULL_T_END,
        _ => DEFAULT_T_END,
    }
}

fn opts() -> SweepOptions {
    SweepOptions {
        threads: threads_from_env().unwrap_or(0),
        ..Default::default()
    }
}

fn in_range(x: Option<f64>, (lo, hi): (f64, f64)) -> bool {
    x.is_some_and(|x| (lo..=hi).contains(&x))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |x| format!("{x:.3}"))
}

fn ims_energy() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, tol) in [("problem1", IMS_ENERGY_TOL_QUADRATIC), ("problem2", IMS_ENERGY_TOL_QUADRATURE)] {
        let mut plan = ExperimentPlan::new(ProblemSource::Builtin(name.into()), vec![Method::ImsO2], DRIFT_H, t_end());
        plan.epsilons = vec![1.0];
        plan.threads = opts().threads;
        let r = run_drift_experiment(&plan).expect("valid plan");
        let c = &r.cells[0];
        let e = c.max(Channel::Energy);
        let ok = !c.failed() && e <= tol;
        pass &= ok;
        parts.push(format!(
            "{name} max e_H = {e:.2e} (<= {tol:.0e}, {} nodes, mean fp iters {:.2})",
            c.config.quad_nodes,
            c.fp_stats.mean_iterations()
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn exs_modified_energy() -> Outcome {
    let mut plan = ExperimentPlan::new(ProblemSource::Builtin("problem1".into()), vec![Method::ExsO2], DRIFT_H, t_end());
    plan.epsilons = EPSILON_SWEEP.to_vec();
    plan.threads = opts().threads;
    let r = run_drift_experiment(&plan).expect("valid plan");
    let mut pass = true;
    let parts: Vec<String> = r
        .cells
        .iter()
        .map(|c| {
            let e = c.max(Channel::ModifiedEnergy);
            pass &= !c.failed() && e <= EXS_MODIFIED_ENERGY_TOL;
            format!("eps={} max e_Hh = {e:.2e}", c.epsilon)
        })
        .collect();
    Outcome::new(pass, format!("{} (<= {EXS_MODIFIED_ENERGY_TOL:.0e})", parts.join(", ")))
}

/// Exponent and boundedness of the drift of `channel` for each (problem, method).
fn drift_scaling(cases: &[(&str, Method)], channel: Channel) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &(name, method) in cases {
        let p = builtin_problem(name, 1.0).unwrap();
        let s = run_drift_scaling(&p, method, &SCALING_H, t_end(), channel, &opts()).expect("valid sweep");
        let checks: Vec<String> = s
            .preconditions
            .iter()
            .map(|c| format!("{}: {}", c.condition, if c.holds { "holds" } else { "VIOLATED" }))
            .collect();
        let exp_ok = in_range(s.exponent, EXPONENT_RANGE);
        let bounded = s.bounded(BOUNDED_FACTOR);
        pass &= s.theorem_covered && exp_ok && bounded;
        let maxes: Vec<String> = s.max_drift.iter().map(|e| format!("{e:.2e}")).collect();
        let ratio = s
            .max_drift
            .iter()
            .zip(&s.window_max_drift)
            .map(|(m, w)| m / w)
            .fold(0.0, f64::max);
        parts.push(format!(
            "{name}/{method} exponent {} (in [{}, {}]: {}), max e_{} [{}], long/short max ratio {ratio:.2} (bounded: {bounded}) [{}]",
            fmt_opt(s.exponent),
            EXPONENT_RANGE.0,
            EXPONENT_RANGE.1,
            exp_ok,
            channel,
            maxes.join(", "),
            checks.join("; ")
        ));
    }
    Outcome::new(pass, parts.join(" | "))
}

/// Largest drift of `channel` along the reference solution over `[0, 100]`.
fn exact_flow_drift(p: &ProblemSpec, channel: Channel) -> f64 {
    let cfg = ReferenceConfig::with_tolerance(1e-13);
    let mut s = ParticleState::initial(p);
    let meter = DriftMeter::new(InvariantValues::evaluate(&s, p, 0.0).unwrap());
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        s = reference_flow(p.field.as_ref(), &s, 0.1, &cfg).unwrap();
        let v = InvariantValues::evaluate(&s, p, 0.0).unwrap();
        worst = worst.max(meter.drift(channel, v.get(channel)));
    }
    worst
}

fn magnetic_moment() -> Outcome {
    let mut out = drift_scaling(
        &[("problem1", Method::ImsO2), ("problem1", Method::ExsO2)],
        Channel::MagneticMoment,
    );
    let p = builtin_problem("problem1", 1.0).unwrap();
    out.detail += &format!(
        " | diagnostic: reference solution max e_I over [0,100] = {:.3}",
        exact_flow_drift(&p, Channel::MagneticMoment)
    );
    out
}

fn global_convergence() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["problem1", "problem3"] {
        for eps in [1.0, 0.125] {
            let p = builtin_problem(name, eps).unwrap();
            let s = run_convergence_study(&p, &Method::ALL, 6..=12, 1.0, &opts()).expect("valid study");
            let slopes: Vec<String> = Method::ALL
                .iter()
                .map(|&m| {
                    let sl = s.slope(m);
                    pass &= sl.is_some_and(|x| (x - GLOBAL_ORDER).abs() <= ORDER_TOL);
                    format!("{m} {}", fmt_opt(sl))
                })
                .collect();
            let exs = s.errors(Method::ExsO2).unwrap_or_default();
            let boris = s.errors(Method::Boris).unwrap_or_default();
            let ordered = exs.len() == boris.len() && !exs.is_empty() && exs.iter().zip(&boris).all(|(e, b)| e <= b);
            pass &= ordered && s.failures.is_empty();
            parts.push(format!(
                "{name} eps={eps}: slopes {} ; exs <= boris at every h: {ordered}",
                slopes.join(", ")
            ));
        }
    }
    Outcome::new(pass, parts.join(" | "))
}

fn local_order() -> Outcome {
    let p = builtin_problem("problem1", 1.0).unwrap();
    let start = ParticleState::initial(&p);
    let reference = ReferenceConfig::with_tolerance(1e-14);
    let mut pass = true;
    let mut parts = Vec::new();
    for method in [Method::ImsO2, Method::ExsO2] {
        let (hs, errs): (Vec<f64>, Vec<f64>) = (4..=10)
            .map(|k| {
                let h = 1.0 / (1u64 << k) as f64;
                let cfg = IntegratorConfig::new(method, h, p.field.as_ref());
                let one = step(&start, &cfg, p.field.as_ref()).unwrap().state;
                let exact = reference_flow(p.field.as_ref(), &start, h, &reference).unwrap();
                (h, relative_state_error(&one, &exact))
            })
            .unzip();
        let slope = cpd_core::harness::fit_slope(&hs, &errs);
        pass &= slope.is_some_and(|x| (x - LOCAL_ORDER).abs() <= ORDER_TOL);
        parts.push(format!("{method} slope {}", fmt_opt(slope)));
    }
    Outcome::new(pass, format!("{} (target {LOCAL_ORDER} +- {ORDER_TOL})", parts.join(", ")))
}

fn random_state(rng: &mut StdRng) -> ParticleState {
    let r = rng.random_range(0.3..2.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let x = Vec3::new(r * phi.cos(), r * phi.sin(), rng.random_range(-1.0..1.0));
    let v = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
    ParticleState::new(x, v, 0.0)
}

fn reversibility() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut worst = [0.0f64; 2];
    for name in BUILTIN_PROBLEMS {
        let p = builtin_problem(name, 1.0).unwrap();
        let f = p.field.as_ref();
        for _ in 0..REVERSIBILITY_SAMPLES {
            let s = random_state(&mut rng);
            for (i, method) in [Method::ExsO2, Method::ImsO2].into_iter().enumerate() {
                let fwd = IntegratorConfig::new(method, REVERSIBILITY_H, f);
                let there = step(&s, &fwd, f).unwrap().state;
                let back = step(&there, &fwd.with_step(-REVERSIBILITY_H), f).unwrap().state;
                worst[i] = worst[i].max(back.distance(&s));
            }
        }
    }
    Outcome::new(
        worst[0] <= EXS_REVERSIBILITY_TOL && worst[1] <= IMS_REVERSIBILITY_TOL,
        format!(
            "{REVERSIBILITY_SAMPLES} states per problem, h = {REVERSIBILITY_H}: exs-o2 {:.2e} (<= {EXS_REVERSIBILITY_TOL:.0e}), ims-o2 {:.2e} (<= {IMS_REVERSIBILITY_TOL:.0e})",
            worst[0], worst[1]
        ),
    )
}

/// `exp(tB̃)v` as sixteen applications of the 30-term series at `t/16`.
fn series_exp(v: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    let tau = t / 16.0;
    let mut out = *v;
    for _ in 0..16 {
        let mut term = out;
        for k in 1..=30 {
            term = (tau / k as f64) * skew_of(b).apply(&term);
            out += term;
        }
    }
    out
}

fn unit(i: usize) -> Vec3 {
    let mut e = Vec3::zeros();
    e[i] = FD_STEP;
    e
}

fn property_suite() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xacce97);
    let rand3 = |rng: &mut StdRng, a: f64| Vec3::from_fn(|_, _| rng.random_range(-a..a));

    let (mut norm_err, mut series_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let v = rand3(&mut rng, 1.0);
        let b = rand3(&mut rng, 3.0);
        let t = rng.random_range(-10.0..10.0) / b.norm();
        let r = rotate(&v, &b, t);
        norm_err = norm_err.max((r.norm() - v.norm()).abs() / v.norm());
        series_err = series_err.max((r - series_exp(&v, &b, t)).norm() / v.norm());
    }

    let mut quad_err = 0.0f64;
    for n in 1..=20 {
        let rule = GaussLegendre::new(n).unwrap();
        let c: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact: f64 = c.iter().enumerate().map(|(d, a)| a / (d as f64 + 1.0)).sum();
        let got = rule.integrate(|x| c.iter().rev().fold(0.0, |acc, a| acc * x + a));
        quad_err = quad_err.max((got - exact).abs());
    }

    let mut fd_err = 0.0f64;
    for name in BUILTIN_PROBLEMS {
        let f = builtin_problem(name, 1.0).unwrap().field;
        for _ in 0..100 {
            let r = rng.random_range(0.2..3.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let x = Vec3::new(r * phi.cos(), r * phi.sin(), rng.random_range(-2.0..2.0));
            let g = f.grad_potential(&x).unwrap();
            let fd_g = Vec3::from_fn(|i, _| {
                (f.potential(&(x + unit(i))).unwrap() - f.potential(&(x - unit(i))).unwrap()) / (2.0 * FD_STEP)
            });
            fd_err = fd_err.max((g - fd_g).norm() / (1.0 + g.norm()));
            let hess = f.hessian_potential(&x).unwrap().unwrap();
            let mut fd_h = Mat3::zeros();
            for j in 0..3 {
                fd_h.set_column(
                    j,
                    &((f.grad_potential(&(x + unit(j))).unwrap() - f.grad_potential(&(x - unit(j))).unwrap())
                        / (2.0 * FD_STEP)),
                );
            }
            fd_err = fd_err.max((hess - fd_h).norm() / (1.0 + hess.norm()));
            let d: [Vec3; 3] = std::array::from_fn(|j| {
                (f.vector_potential(&(x + unit(j))) - f.vector_potential(&(x - unit(j)))) / (2.0 * FD_STEP)
            });
            let curl = Vec3::new(d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]);
            let b = f.magnetic(&x);
            fd_err = fd_err.max((curl - b).norm() / b.norm());
        }
    }

    // Scaled residual of the EXS-O2 two-step relation with tan factor; the
    // bound is 1e-10·max(1,|x|)/h², so report residual·h²/max(1,|x|).
    let p = builtin_problem("problem1", 1.0).unwrap();
    let f = p.field.as_ref();
    let mut tan_err = 0.0f64;
    let mut boris_err = 0.0f64;
    for h in [0.1, 0.01] {
        for (method, worst) in [(Method::ExsO2, &mut tan_err), (Method::Boris, &mut boris_err)] {
            let cfg = IntegratorConfig::new(method, h, f);
            let states = integrate(&p, &cfg, 1000.0 * h, 1).unwrap().states;
            for w in states.windows(3) {
                let (xm, x, xp) = (w[0].x, w[1].x, w[2].x);
                let b = f.magnetic(&x);
                let factor = if method == Method::ExsO2 {
                    let theta = 0.5 * h * b.norm();
                    theta.tan() / theta
                } else {
                    1.0
                };
                let lhs = xp - 2.0 * x + xm;
                let rhs = h * h * (factor * ((xp - xm) / (2.0 * h)).cross(&b) + f.electric(&x).unwrap());
                *worst = worst.max((lhs - rhs).norm() / x.norm().max(1.0));
            }
        }
    }

    let checks = [
        ("rotation norm", norm_err, ROTATION_NORM_TOL),
        ("rotation vs series", series_err, ROTATION_SERIES_TOL),
        ("gauss-legendre", quad_err, QUADRATURE_TOL),
        ("finite differences", fd_err, FD_TOL),
        ("exs two-step", tan_err, TAN_IDENTITY_TOL),
        ("boris two-step", boris_err, BORIS_TWO_STEP_TOL),
    ];
    let pass = checks.iter().all(|(_, e, tol)| e <= tol);
    let detail = checks
        .iter()
        .map(|(n, e, tol)| format!("{n} {e:.1e} (<= {tol:.0e})"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new(pass, detail)
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "IMS-O2 exact energy conservation", ims_energy),
        (2, "EXS-O2 exact modified-energy conservation", exs_modified_energy),
        (3, "EXS-O2 long-time O(h^2) energy drift", || {
            drift_scaling(&[("problem1", Method::ExsO2), ("problem2", Method::ExsO2)], Channel::Energy)
        }),
        (4, "momentum near-conservation O(h^2)", || {
            drift_scaling(&[("problem1", Method::ImsO2), ("problem1", Method::ExsO2)], Channel::Momentum)
        }),
        (5, "magnetic-moment near-conservation O(h^2)", magnetic_moment),
        (6, "global second-order convergence", global_convergence),
        (7, "local third-order error", local_order),
        (8, "symmetry / reversibility", reversibility),
        (9, "property suite", property_suite),
    ];
    println!("acceptance: t_end = {} for long-time criteria", t_end());
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        let started = Instant::now();
        let out = run();
        println!(
            "{} [{id}] {name}: {} ({:.1}s)",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            started.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
