//! Structure-preserving integrators for charged-particle dynamics
//! `ẍ = v × B(x) + E(x)`.
//!
//! The crate provides the implicit energy-preserving splitting IMS-O2, its
//! explicit linearisation EXS-O2 and the Boris scheme, together with the
//! invariants used to assess long-time behaviour (energy, modified energy,
//! momentum, magnetic moment), a Dormand–Prince reference solver and an
//! experiment harness for drift and convergence studies.

pub mod config;
pub mod error;
pub mod fields;
pub mod harness;
pub mod integrators;
pub mod invariants;
pub mod quadrature;
pub mod reference;
pub mod rotation;

pub use error::{Error, Result};
pub use fields::{builtin_problem, FieldModel, ProblemSpec, SkewMatrix3, Vec3};
pub use integrators::{IntegratorConfig, Method, ParticleState};
