//! Exact flow of the magnetic subsystem `v̇ = v × B(x)` with frozen position.

use crate::fields::{FieldModel, Vec3};

/// Below this rotation angle the Rodrigues coefficients are taken from their
/// Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// `exp(t·B̃)·v` where `B̃v = v × b`.
///
/// Uses `exp(K) = I + (sin θ/θ) K + ((1 − cos θ)/θ²) K²` with `K = t·B̃` and
/// `θ = |t|·|b|`, so that `K v = t (v × b)` and `K² v = t² (v × b) × b`.
pub fn rotate(v: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    let bn = b.norm();
    let theta = t.abs() * bn;
    if theta == 0.0 {
        return *v;
    }
    let (sinc, cosc) = if theta < SMALL_ANGLE {
        let th2 = theta * theta;
        (1.0 - th2 / 6.0, 0.5 - th2 / 24.0)
    } else {
        // 1 − cos θ = 2 sin²(θ/2) avoids cancellation at moderate angles.
        let s2 = (0.5 * theta).sin() / theta;
        (theta.sin() / theta, 2.0 * s2 * s2)
    };
    let kv = t * v.cross(b);
    let kkv = t * kv.cross(b);
    v + sinc * kv + cosc * kkv
}

/// The magnetic half of the splitting: `exp(t·B̃(x))·v`.
pub fn rotation_flow<F: FieldModel + ?Sized>(x: &Vec3, v: &Vec3, t: f64, field: &F) -> Vec3 {
    rotate(v, &field.magnetic(x), t)
}
