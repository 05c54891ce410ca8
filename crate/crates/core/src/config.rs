//! Problem definitions read from TOML files.
//!
//! ```toml
//! name = "tilted"
//! epsilon = 0.5
//! x0 = [0.0, 1.0, 0.1]
//! v0 = [0.09, 0.05, 0.2]
//! S = [0, 1, 0, -1, 0, 0, 0, 0, 0]
//!
//! [potential]
//! kind = "quadratic"
//! Q = [0.02, 0, 0, 0, 0.02, 0, 0, 0, 0.01]
//! q = [0, 0, 0]
//!
//! [field]
//! kind = "constant"
//! B = [0, 0, 1]
//! ```
//!
//! `potential.kind` is one of `quadratic`, `inverse_radius` (optional
//! `strength`, default 0.01), `none`, or `builtin:<problem>`. `field.kind` is
//! `constant` (with `B`, divided by `epsilon`) or `builtin:<problem>`.
//! `x0`, `v0` and `S` default to the built-in initial data and the planar
//! rotation generator.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fields::{
    builtin_field, builtin_initial_position, builtin_initial_velocity, Field, MagneticField,
    Mat3, Potential, ProblemSpec, QuadraticPotential, SkewMatrix3, Vec3,
};

const DEFAULT_INVERSE_RADIUS_STRENGTH: f64 = 0.01;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[serde(default = "default_name")]
    name: String,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    x0: Option<[f64; 3]>,
    v0: Option<[f64; 3]>,
    #[serde(rename = "S")]
    s: Option<[f64; 9]>,
    potential: RawPotential,
    field: RawField,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPotential {
    kind: String,
    #[serde(rename = "Q")]
    q_mat: Option<[f64; 9]>,
    q: Option<[f64; 3]>,
    strength: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    kind: String,
    #[serde(rename = "B")]
    b: Option<[f64; 3]>,
}

fn default_name() -> String {
    "custom".into()
}

fn default_epsilon() -> f64 {
    1.0
}

fn inconsistent(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn builtin_name(kind: &str) -> Option<&str> {
    kind.strip_prefix("builtin:")
}

fn row_major(m: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(m)
}

fn potential_from(raw: &RawPotential, epsilon: f64) -> Result<Potential> {
    let only = |allowed_q: bool, allowed_strength: bool| -> Result<()> {
        if !allowed_q && (raw.q_mat.is_some() || raw.q.is_some()) {
            return Err(inconsistent(format!(
                "potential kind `{}` takes no Q or q",
                raw.kind
            )));
        }
        if !allowed_strength && raw.strength.is_some() {
            return Err(inconsistent(format!(
                "potential kind `{}` takes no strength",
                raw.kind
            )));
        }
        Ok(())
    };
    match raw.kind.as_str() {
        "quadratic" => {
            only(true, false)?;
            let q_mat = raw
                .q_mat
                .ok_or_else(|| inconsistent("quadratic potential needs Q"))?;
            let q_vec = raw.q.map(Vec3::from).unwrap_or_else(Vec3::zeros);
            Ok(Potential::Quadratic(QuadraticPotential::new(
                row_major(&q_mat),
                q_vec,
            )?))
        }
        "inverse_radius" => {
            only(false, true)?;
            let strength = raw.strength.unwrap_or(DEFAULT_INVERSE_RADIUS_STRENGTH);
            if !strength.is_finite() {
                return Err(inconsistent("inverse_radius strength must be finite"));
            }
            Ok(Potential::InverseRadius { strength })
        }
        "none" => {
            only(false, false)?;
            Ok(Potential::zero())
        }
        kind => match builtin_name(kind) {
            Some(name) => {
                only(false, false)?;
                Ok(builtin_field(name, epsilon)?.potential)
            }
            None => Err(inconsistent(format!("unknown potential kind `{kind}`"))),
        },
    }
}

fn magnetic_from(raw: &RawField, epsilon: f64) -> Result<MagneticField> {
    match raw.kind.as_str() {
        "constant" => {
            let b = raw
                .b
                .ok_or_else(|| inconsistent("constant field needs B"))?;
            let b = Vec3::from(b) / epsilon;
            if b.iter().any(|c| !c.is_finite()) {
                return Err(inconsistent("B must be finite"));
            }
            Ok(MagneticField::Constant(b))
        }
        kind => match builtin_name(kind) {
            Some(name) => {
                if raw.b.is_some() {
                    return Err(inconsistent(format!("field kind `{kind}` takes no B")));
                }
                Ok(builtin_field(name, epsilon)?.magnetic)
            }
            None => Err(inconsistent(format!("unknown field kind `{kind}`"))),
        },
    }
}

/// Parses a problem definition from TOML text.
pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    let raw: RawProblem = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if !(raw.epsilon > 0.0 && raw.epsilon.is_finite()) {
        return Err(inconsistent(format!(
            "epsilon must be positive, got {}",
            raw.epsilon
        )));
    }
    let field = Field {
        potential: potential_from(&raw.potential, raw.epsilon)?,
        magnetic: magnetic_from(&raw.field, raw.epsilon)?,
    };
    let momentum_matrix = match raw.s {
        Some(s) => SkewMatrix3::new(row_major(&s))
            .map_err(|_| inconsistent("S must be skew-symmetric"))?,
        None => SkewMatrix3::planar_rotation(),
    };
    ProblemSpec::new(
        raw.name,
        Arc::new(field),
        raw.x0.map(Vec3::from).unwrap_or_else(builtin_initial_position),
        raw.v0.map(Vec3::from).unwrap_or_else(builtin_initial_velocity),
        raw.epsilon,
        momentum_matrix,
    )
}

/// Reads and parses a problem file.
pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_problem(&text)
}
