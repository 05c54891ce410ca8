//! Electromagnetic field models and the built-in benchmark problems.
//!
//! A field model supplies the scalar potential `U`, its gradient (the electric
//! field is `E = -∇U`), optionally its Hessian, the magnetic field `B` and a
//! vector potential `A` with `∇×A = B`. Everything is in nondimensional units.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this cylindrical radius the inverse-radius potential is treated as
/// undefined.
pub const AXIS_GUARD: f64 = 1e-12;

/// A 3×3 matrix with `Mᵀ = -M`, checked entry by entry on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewMatrix3(Mat3);

impl SkewMatrix3 {
    pub fn new(m: Mat3) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                if m[(i, j)] != -m[(j, i)] || !m[(i, j)].is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "matrix is not skew-symmetric: entry ({i},{j}) = {} but ({j},{i}) = {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(SkewMatrix3(m))
    }

    pub fn zero() -> Self {
        SkewMatrix3(Mat3::zeros())
    }

    /// The momentum matrix used by all built-in problems,
    /// `S = [[0, 1, 0], [-1, 0, 0], [0, 0, 0]]`.
    pub fn planar_rotation() -> Self {
        SkewMatrix3(Mat3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn scaled(&self, s: f64) -> Self {
        SkewMatrix3(self.0 * s)
    }
}

/// The matrix `B̃` with `B̃ v = v × B`.
pub fn skew_of(b: &Vec3) -> SkewMatrix3 {
    SkewMatrix3(Mat3::new(
        0.0, b.z, -b.y, //
        -b.z, 0.0, b.x, //
        b.y, -b.x, 0.0,
    ))
}

/// Symmetric-gauge vector potential of a uniform field, `A(x) = -½ x × B`.
pub fn vector_potential_constant_b(x: &Vec3, b: &Vec3) -> Vec3 {
    -0.5 * x.cross(b)
}

/// Whether `‖AB − BA‖_max ≤ tol`.
pub fn commutes(a: &Mat3, b: &Mat3, tol: f64) -> bool {
    (a * b - b * a).amax() <= tol
}

/// `U(x) = ½ xᵀQx + qᵀx` with symmetric `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPotential {
    q_mat: Mat3,
    q_vec: Vec3,
}

impl QuadraticPotential {
    pub fn new(q_mat: Mat3, q_vec: Vec3) -> Result<Self> {
        if q_mat != q_mat.transpose() {
            return Err(Error::InvalidParameter(
                "quadratic potential matrix Q must be symmetric".into(),
            ));
        }
        if q_mat.iter().chain(q_vec.iter()).any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "quadratic potential has non-finite coefficients".into(),
            ));
        }
        Ok(QuadraticPotential { q_mat, q_vec })
    }

    pub fn q_mat(&self) -> &Mat3 {
        &self.q_mat
    }

    pub fn q_vec(&self) -> &Vec3 {
        &self.q_vec
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        0.5 * x.dot(&(self.q_mat * x)) + self.q_vec.dot(x)
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        self.q_mat * x + self.q_vec
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    Quadratic(QuadraticPotential),
    /// `U(x) = strength / √(x₁² + x₂²)`, singular on the x₃-axis.
    InverseRadius { strength: f64 },
}

fn cylindrical_radius(x: &Vec3) -> f64 {
    x.x.hypot(x.y)
}

fn axis_error(x: &Vec3) -> Error {
    Error::Domain {
        x: [x.x, x.y, x.z],
        reason: "inverse-radius potential is singular on the x3-axis",
    }
}

impl Potential {
    /// `U ≡ 0`, represented as the quadratic with vanishing coefficients.
    pub fn zero() -> Self {
        Potential::Quadratic(QuadraticPotential {
            q_mat: Mat3::zeros(),
            q_vec: Vec3::zeros(),
        })
    }

    pub fn value(&self, x: &Vec3) -> Result<f64> {
        match self {
            Potential::Quadratic(p) => Ok(p.value(x)),
            Potential::InverseRadius { strength } => {
                let r = cylindrical_radius(x);
                if r < AXIS_GUARD {
                    return Err(axis_error(x));
                }
                Ok(strength / r)
            }
        }
    }

    pub fn gradient(&self, x: &Vec3) -> Result<Vec3> {
        match self {
            Potential::Quadratic(p) => Ok(p.gradient(x)),
            Potential::InverseRadius { strength } => {
                let r = cylindrical_radius(x);
                if r < AXIS_GUARD {
                    return Err(axis_error(x));
                }
                let c = -strength / (r * r * r);
                Ok(Vec3::new(c * x.x, c * x.y, 0.0))
            }
        }
    }

    pub fn hessian(&self, x: &Vec3) -> Result<Mat3> {
        match self {
            Potential::Quadratic(p) => Ok(*p.q_mat()),
            Potential::InverseRadius { strength } => {
                let r = cylindrical_radius(x);
                if r < AXIS_GUARD {
                    return Err(axis_error(x));
                }
                let r3 = r * r * r;
                let r5 = r3 * r * r;
                let (a, b) = (x.x, x.y);
                let xx = strength * (3.0 * a * a / r5 - 1.0 / r3);
                let yy = strength * (3.0 * b * b / r5 - 1.0 / r3);
                let xy = strength * 3.0 * a * b / r5;
                Ok(Mat3::new(xx, xy, 0.0, xy, yy, 0.0, 0.0, 0.0, 0.0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MagneticField {
    Constant(Vec3),
    /// `B(x) = scale·(0, 0, √(x₁² + x₂²))`, with
    /// `A(x) = (scale/3)·(−x₂ r, x₁ r, 0)`.
    AxialRadial { scale: f64 },
}

impl MagneticField {
    pub fn value(&self, x: &Vec3) -> Vec3 {
        match self {
            MagneticField::Constant(b) => *b,
            MagneticField::AxialRadial { scale } => {
                Vec3::new(0.0, 0.0, scale * cylindrical_radius(x))
            }
        }
    }

    pub fn vector_potential(&self, x: &Vec3) -> Vec3 {
        match self {
            MagneticField::Constant(b) => vector_potential_constant_b(x, b),
            MagneticField::AxialRadial { scale } => {
                let r = cylindrical_radius(x);
                (scale / 3.0) * Vec3::new(-x.y * r, x.x * r, 0.0)
            }
        }
    }
}

/// Static electric and magnetic fields acting on a single particle.
pub trait FieldModel: Send + Sync + fmt::Debug {
    fn potential(&self, x: &Vec3) -> Result<f64>;

    fn grad_potential(&self, x: &Vec3) -> Result<Vec3>;

    fn electric(&self, x: &Vec3) -> Result<Vec3> {
        self.grad_potential(x).map(|g| -g)
    }

    /// `∇²U(x)`, if the model provides it analytically.
    fn hessian_potential(&self, _x: &Vec3) -> Option<Result<Mat3>> {
        None
    }

    fn magnetic(&self, x: &Vec3) -> Vec3;

    fn vector_potential(&self, x: &Vec3) -> Vec3;

    fn is_constant_b(&self) -> bool {
        false
    }

    /// The coefficients of `U` when it is quadratic.
    fn quadratic(&self) -> Option<&QuadraticPotential> {
        None
    }

    fn is_quadratic_u(&self) -> bool {
        self.quadratic().is_some()
    }
}

/// A field model assembled from one of the supported potential and magnetic
/// field families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Field {
    pub potential: Potential,
    pub magnetic: MagneticField,
}

impl FieldModel for Field {
    fn potential(&self, x: &Vec3) -> Result<f64> {
        self.potential.value(x)
    }

    fn grad_potential(&self, x: &Vec3) -> Result<Vec3> {
        self.potential.gradient(x)
    }

    fn hessian_potential(&self, x: &Vec3) -> Option<Result<Mat3>> {
        Some(self.potential.hessian(x))
    }

    fn magnetic(&self, x: &Vec3) -> Vec3 {
        self.magnetic.value(x)
    }

    fn vector_potential(&self, x: &Vec3) -> Vec3 {
        self.magnetic.vector_potential(x)
    }

    fn is_constant_b(&self) -> bool {
        matches!(self.magnetic, MagneticField::Constant(_))
    }

    fn quadratic(&self) -> Option<&QuadraticPotential> {
        match &self.potential {
            Potential::Quadratic(p) => Some(p),
            Potential::InverseRadius { .. } => None,
        }
    }
}

/// A field together with initial data and the momentum matrix `S`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub field: Arc<dyn FieldModel>,
    pub x0: Vec3,
    pub v0: Vec3,
    /// Field-strength scaling; the magnetic field is proportional to `1/ε`.
    pub epsilon: f64,
    pub momentum_matrix: SkewMatrix3,
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        field: Arc<dyn FieldModel>,
        x0: Vec3,
        v0: Vec3,
        epsilon: f64,
        momentum_matrix: SkewMatrix3,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        if x0.iter().chain(v0.iter()).any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "initial state must be finite".into(),
            ));
        }
        Ok(ProblemSpec {
            name: name.into(),
            field,
            x0,
            v0,
            epsilon,
            momentum_matrix,
        })
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )))
    }
}

pub const BUILTIN_PROBLEMS: [&str; 3] = ["problem1", "problem2", "problem3"];

pub fn builtin_initial_position() -> Vec3 {
    Vec3::new(0.0, 1.0, 0.1)
}

pub fn builtin_initial_velocity() -> Vec3 {
    Vec3::new(0.09, 0.05, 0.20)
}

/// The three benchmark problems:
///
/// * `problem1`: `U = |x|²/100`, `B = (0, 0, 1/ε)`.
/// * `problem2`: `U = 1/(100 r)`, same `B`.
/// * `problem3`: `U = 1/(100 r)`, `B = (0, 0, r/ε)`.
///
/// All start from `x0 = (0, 1, 0.1)`, `v0 = (0.09, 0.05, 0.20)`.
pub fn builtin_problem(name: &str, epsilon: f64) -> Result<ProblemSpec> {
    let field = builtin_field(name, epsilon)?;
    ProblemSpec::new(
        name,
        Arc::new(field),
        builtin_initial_position(),
        builtin_initial_velocity(),
        epsilon,
        SkewMatrix3::planar_rotation(),
    )
}

pub(crate) fn builtin_field(name: &str, epsilon: f64) -> Result<Field> {
    if !BUILTIN_PROBLEMS.contains(&name) {
        return Err(Error::NotFound(name.to_string()));
    }
    check_epsilon(epsilon)?;
    let uniform = MagneticField::Constant(Vec3::new(0.0, 0.0, 1.0 / epsilon));
    let inverse_radius = Potential::InverseRadius { strength: 0.01 };
    let field = match name {
        "problem1" => Field {
            potential: Potential::Quadratic(QuadraticPotential::new(
                Mat3::identity() * 0.02,
                Vec3::zeros(),
            )?),
            magnetic: uniform,
        },
        "problem2" => Field {
            potential: inverse_radius,
            magnetic: uniform,
        },
        _ => Field {
            potential: inverse_radius,
            magnetic: MagneticField::AxialRadial {
                scale: 1.0 / epsilon,
            },
        },
    };
    Ok(field)
}
