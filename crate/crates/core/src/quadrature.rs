//! Gauss–Legendre rules mapped to the unit interval.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Largest node count served from the process-wide cache.
pub const MAX_CACHED_NODES: usize = 128;

static CACHE: [OnceLock<GaussLegendre>; MAX_CACHED_NODES + 1] =
    [const { OnceLock::new() }; MAX_CACHED_NODES + 1];

/// An `n`-point Gauss–Legendre rule on `[0, 1]`. Exact for polynomials of
/// degree `≤ 2n − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "Gauss-Legendre rule needs at least one node".into(),
            ));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        // Roots of P_n are symmetric about 0; solve for the positive half on
        // [-1, 1] with Newton's method, then map to [0, 1].
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() <= 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            // z is the i-th largest root.
            nodes[i] = 0.5 * (1.0 - z);
            nodes[n - 1 - i] = 0.5 * (1.0 + z);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Ok(GaussLegendre { nodes, weights })
    }

    /// A shared rule for `n ≤ MAX_CACHED_NODES`, computed once.
    pub fn cached(n: usize) -> Result<&'static GaussLegendre> {
        if n == 0 || n > MAX_CACHED_NODES {
            return Err(Error::InvalidParameter(format!(
                "quadrature node count must be in 1..={MAX_CACHED_NODES}, got {n}"
            )));
        }
        if let Some(rule) = CACHE[n].get() {
            return Ok(rule);
        }
        let rule = GaussLegendre::new(n)?;
        Ok(CACHE[n].get_or_init(|| rule))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}
