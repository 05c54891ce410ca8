use cpd_core::fields::{builtin_problem, Vec3, BUILTIN_PROBLEMS};
use cpd_core::integrators::ParticleState;
use cpd_core::invariants::{energy, magnetic_moment, modified_energy, momentum, Channel, DriftMeter, InvariantValues};
use cpd_core::reference::{reference_flow, reference_solve, ReferenceConfig};
use proptest::prelude::*;

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(lo..hi).prop_map(Vec3::from)
}

proptest! {
    #[test]
    fn modified_energy_offset(
        r in 0.3f64..3.0,
        phi in 0.0f64..std::f64::consts::TAU,
        z in -2.0f64..2.0,
        v in vec3(-1.0, 1.0),
        h in 0.0f64..0.5,
        which in 0usize..3,
    ) {
        let p = builtin_problem(BUILTIN_PROBLEMS[which], 1.0).unwrap();
        let s = ParticleState::new(Vec3::new(r * phi.cos(), r * phi.sin(), z), v, 0.0);
        let f = p.field.as_ref();
        let hh = modified_energy(&s, f, h).unwrap();
        let e = energy(&s, f).unwrap();
        let g = f.grad_potential(&s.x).unwrap();
        let offset = -(h * h / 8.0) * g.norm_squared();
        // One rounding in the final subtraction.
        prop_assert!(((hh - e) - offset).abs() <= 4.0 * f64::EPSILON * e.abs().max(hh.abs()));
    }

    #[test]
    fn magnetic_moment_is_quadratic_in_velocity(v in vec3(-1.0, 1.0), x in vec3(-1.0, 1.0)) {
        let p = builtin_problem("problem1", 1.0).unwrap();
        let s = ParticleState::new(x, v, 0.0);
        let s2 = ParticleState::new(x, 2.0 * v, 0.0);
        let i1 = magnetic_moment(&s, p.field.as_ref()).unwrap();
        let i2 = magnetic_moment(&s2, p.field.as_ref()).unwrap();
        prop_assert!((i2 - 4.0 * i1).abs() <= 1e-15 * i2.abs().max(1e-300));
    }
}

/// Exact-flow drift of `channel` sampled at unit times over `[0, t_end]`.
fn exact_flow_drift(name: &str, channel: Channel, t_end: usize) -> f64 {
    let p = builtin_problem(name, 1.0).unwrap();
    let cfg = ReferenceConfig::with_tolerance(1e-13);
    let mut s = ParticleState::initial(&p);
    let meter = DriftMeter::new(InvariantValues::evaluate(&s, &p, 0.0).unwrap());
    let mut worst: f64 = 0.0;
    for _ in 0..t_end {
        s = reference_flow(p.field.as_ref(), &s, 1.0, &cfg).unwrap();
        let values = InvariantValues::evaluate(&s, &p, 0.0).unwrap();
        worst = worst.max(meter.drift(channel, values.get(channel)));
    }
    worst
}

#[test]
fn exact_flow_conserves_energy() {
    for name in BUILTIN_PROBLEMS {
        let e = exact_flow_drift(name, Channel::Energy, 100);
        assert!(e <= 1e-9, "{name}: e_H = {e:e}");
    }
}

#[test]
fn exact_flow_conserves_momentum_on_problem1() {
    let e = exact_flow_drift("problem1", Channel::Momentum, 100);
    assert!(e <= 1e-8, "e_M = {e:e}");
}

#[test]
fn tighter_reference_tolerance_never_widens_the_gap() {
    let p = builtin_problem("problem1", 1.0).unwrap();
    let truth = reference_solve(&p, 1.0, &ReferenceConfig::with_tolerance(1e-13)).unwrap();
    let mut tol = 1e-6;
    let mut previous = f64::INFINITY;
    while tol >= 1e-12 {
        let gap = reference_solve(&p, 1.0, &ReferenceConfig::with_tolerance(tol))
            .unwrap()
            .distance(&truth);
        assert!(gap <= previous, "tol {tol:e}: gap {gap:e} > {previous:e}");
        previous = gap;
        tol /= 2.0;
    }
}

#[test]
fn momentum_of_initial_data() {
    let p = builtin_problem("problem1", 1.0).unwrap();
    let s = ParticleState::initial(&p);
    let m = momentum(&s, p.field.as_ref(), &p.momentum_matrix);
    assert!((m + 0.41).abs() < 1e-15);
}
