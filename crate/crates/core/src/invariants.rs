//! Energy, modified energy, momentum and magnetic moment, and their relative
//! drift along a trajectory.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{FieldModel, ProblemSpec, SkewMatrix3};
use crate::integrators::ParticleState;

/// Initial invariant values below this magnitude are not used as a
/// normalisation; the channel reports absolute drift instead.
pub const RELATIVE_GUARD: f64 = 1e-14;

/// Below this field strength the magnetic moment is undefined.
pub const MIN_FIELD_STRENGTH: f64 = 1e-12;

/// `H = ½|v|² + U(x)`.
pub fn energy<F: FieldModel + ?Sized>(s: &ParticleState, field: &F) -> Result<f64> {
    Ok(0.5 * s.v.norm_squared() + field.potential(&s.x)?)
}

/// `H_h = H − (h²/8)|∇U(x)|²`, conserved exactly by EXS-O2 when `U` is
/// quadratic.
pub fn modified_energy<F: FieldModel + ?Sized>(
    s: &ParticleState,
    field: &F,
    h: f64,
) -> Result<f64> {
    let grad = field.grad_potential(&s.x)?;
    Ok(energy(s, field)? - h * h / 8.0 * grad.norm_squared())
}

/// `M = (v + A(x))ᵀ S x`.
pub fn momentum<F: FieldModel + ?Sized>(s: &ParticleState, field: &F, sm: &SkewMatrix3) -> f64 {
    (s.v + field.vector_potential(&s.x)).dot(&sm.apply(&s.x))
}

/// `I = |v × B(x)|² / (2|B(x)|³)`, using the local field.
pub fn magnetic_moment<F: FieldModel + ?Sized>(s: &ParticleState, field: &F) -> Result<f64> {
    let b = field.magnetic(&s.x);
    let bn = b.norm();
    if bn < MIN_FIELD_STRENGTH {
        return Err(Error::DegenerateField([s.x.x, s.x.y, s.x.z]));
    }
    Ok(s.v.cross(&b).norm_squared() / (2.0 * bn * bn * bn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantValues {
    pub energy: f64,
    pub modified_energy: f64,
    pub momentum: f64,
    pub magnetic_moment: f64,
}

impl InvariantValues {
    pub fn evaluate(s: &ParticleState, problem: &ProblemSpec, h: f64) -> Result<Self> {
        let field = problem.field.as_ref();
        Ok(InvariantValues {
            energy: energy(s, field)?,
            modified_energy: modified_energy(s, field, h)?,
            momentum: momentum(s, field, &problem.momentum_matrix),
            magnetic_moment: magnetic_moment(s, field)?,
        })
    }

    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Energy => self.energy,
            Channel::ModifiedEnergy => self.modified_energy,
            Channel::Momentum => self.momentum,
            Channel::MagneticMoment => self.magnetic_moment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Channel {
    #[serde(rename = "H")]
    Energy,
    #[serde(rename = "Hh")]
    ModifiedEnergy,
    #[serde(rename = "M")]
    Momentum,
    #[serde(rename = "I")]
    MagneticMoment,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Energy,
        Channel::ModifiedEnergy,
        Channel::Momentum,
        Channel::MagneticMoment,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Energy => "H",
            Channel::ModifiedEnergy => "Hh",
            Channel::Momentum => "M",
            Channel::MagneticMoment => "I",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Channel::Energy => 0,
            Channel::ModifiedEnergy => 1,
            Channel::Momentum => 2,
            Channel::MagneticMoment => 3,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" | "energy" => Ok(Channel::Energy),
            "Hh" | "modified-energy" => Ok(Channel::ModifiedEnergy),
            "M" | "momentum" => Ok(Channel::Momentum),
            "I" | "magnetic-moment" => Ok(Channel::MagneticMoment),
            other => Err(Error::InvalidParameter(format!("unknown invariant channel `{other}`"))),
        }
    }
}

/// Normalised drift `|Q(s) − Q₀| / |Q₀|` against a reference value, with the
/// absolute-drift fallback for near-zero `Q₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftMeter {
    reference: InvariantValues,
    absolute: [bool; 4],
}

impl DriftMeter {
    pub fn new(reference: InvariantValues) -> Self {
        let absolute = Channel::ALL.map(|c| reference.get(c).abs() < RELATIVE_GUARD);
        DriftMeter { reference, absolute }
    }

    pub fn reference(&self) -> &InvariantValues {
        &self.reference
    }

    pub fn is_absolute(&self, channel: Channel) -> bool {
        self.absolute[channel.index()]
    }

    pub fn drift(&self, channel: Channel, value: f64) -> f64 {
        let q0 = self.reference.get(channel);
        let d = (value - q0).abs();
        if self.is_absolute(channel) {
            d
        } else {
            d / q0.abs()
        }
    }

    pub fn drifts(&self, values: &InvariantValues) -> [f64; 4] {
        Channel::ALL.map(|c| self.drift(c, values.get(c)))
    }
}

/// Relative invariant errors sampled along a trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DriftSeries {
    pub times: Vec<f64>,
    pub e_h: Vec<f64>,
    pub e_hh: Vec<f64>,
    pub e_m: Vec<f64>,
    pub e_i: Vec<f64>,
    /// Channels normalised absolutely because their initial value vanished.
    pub absolute_channels: Vec<Channel>,
}

impl DriftSeries {
    pub fn with_capacity(n: usize) -> Self {
        DriftSeries {
            times: Vec::with_capacity(n),
            e_h: Vec::with_capacity(n),
            e_hh: Vec::with_capacity(n),
            e_m: Vec::with_capacity(n),
            e_i: Vec::with_capacity(n),
            absolute_channels: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, drifts: [f64; 4]) {
        self.times.push(t);
        self.e_h.push(drifts[0]);
        self.e_hh.push(drifts[1]);
        self.e_m.push(drifts[2]);
        self.e_i.push(drifts[3]);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Energy => &self.e_h,
            Channel::ModifiedEnergy => &self.e_hh,
            Channel::Momentum => &self.e_m,
            Channel::MagneticMoment => &self.e_i,
        }
    }

    pub fn max(&self, channel: Channel) -> f64 {
        self.channel(channel).iter().copied().fold(0.0, f64::max)
    }

    /// Maximum over samples with `t ≤ t_max`.
    pub fn max_until(&self, channel: Channel, t_max: f64) -> f64 {
        self.times
            .iter()
            .zip(self.channel(channel))
            .take_while(|(t, _)| **t <= t_max)
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
    }

    pub fn row(&self, i: usize) -> [f64; 5] {
        [self.times[i], self.e_h[i], self.e_hh[i], self.e_m[i], self.e_i[i]]
    }
}

/// Relative errors of all four invariants against the first state of `traj`.
pub fn drift_series(traj: &[ParticleState], problem: &ProblemSpec, h: f64) -> Result<DriftSeries> {
    let mut out = DriftSeries::with_capacity(traj.len());
    let Some(first) = traj.first() else {
        return Ok(out);
    };
    let meter = DriftMeter::new(InvariantValues::evaluate(first, problem, h)?);
    out.absolute_channels = Channel::ALL
        .into_iter()
        .filter(|c| meter.is_absolute(*c))
        .collect();
    for s in traj {
        let values = InvariantValues::evaluate(s, problem, h)?;
        out.push(s.t, meter.drifts(&values));
    }
    Ok(out)
}
