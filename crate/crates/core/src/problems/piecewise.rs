//! Twice-differentiable piecewise polynomial: quadratic near its minimum
//! `b/a`, a cubic blend on `A < z ≤ A + 1`, linear beyond, with
//! `z = |x − b/a|`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vector::ParamVector;

#[inline]
fn offset(x: f64, a: f64, b: f64) -> (f64, f64) {
    let d = x - b / a;
    (d.abs(), if d < 0.0 { -1.0 } else { 1.0 })
}

pub fn piecewise_value(x: f64, a: f64, b: f64, big_a: f64) -> f64 {
    let (z, _) = offset(x, a, b);
    if z <= big_a {
        0.5 * a * z * z
    } else if z <= big_a + 1.0 {
        let u = z - big_a;
        -a * u * u * u / 6.0 + 0.5 * a * u * u + a * big_a * z - 0.5 * a * big_a * big_a
    } else {
        (0.5 * a + a * big_a) * z - a / 6.0 - 0.5 * a * big_a * big_a - 0.5 * a * big_a
    }
}

pub fn piecewise_grad(x: f64, a: f64, b: f64, big_a: f64) -> f64 {
    let (z, sign) = offset(x, a, b);
    if z <= big_a {
        a * x - b
    } else if z <= big_a + 1.0 {
        let u = z - big_a;
        (-0.5 * a * u * u + a * z) * sign
    } else {
        (0.5 * a + a * big_a) * sign
    }
}

pub fn piecewise_hess(x: f64, a: f64, b: f64, big_a: f64) -> f64 {
    let (z, _) = offset(x, a, b);
    if z <= big_a {
        a
    } else if z <= big_a + 1.0 {
        a * (1.0 + big_a - z)
    } else {
        0.0
    }
}

/// Separable sum `Σ_d f(φ_d; a_d, b_d, A)` of piecewise functions sharing the
/// blend width `A`. The two-task counterexample uses `p = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTask {
    a: Vec<f64>,
    b: Vec<f64>,
    big_a: f64,
}

impl PiecewiseTask {
    pub fn new(a: Vec<f64>, b: Vec<f64>, big_a: f64) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidTask("piecewise task needs p >= 1".into()));
        }
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        if a.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidTask("curvatures must be positive".into()));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidTask("offsets must be finite".into()));
        }
        if !(big_a.is_finite() && big_a > 0.0) {
            return Err(Error::InvalidTask("blend width A must be positive".into()));
        }
        Ok(Self { a, b, big_a })
    }

    /// One-dimensional task `f(x; a, b, A)`.
    pub fn scalar(a: f64, b: f64, big_a: f64) -> Result<Self> {
        Self::new(alloc::vec![a], alloc::vec![b], big_a)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn big_a(&self) -> f64 {
        self.big_a
    }

    fn map<'s, F>(&'s self, phi: &'s ParamVector, f: F) -> impl Iterator<Item = f64> + 's
    where
        F: Fn(f64, f64, f64) -> f64 + 's,
    {
        phi.iter()
            .zip(self.a.iter().zip(&self.b))
            .map(move |(x, (a, b))| f(*x, *a, *b))
    }

    pub fn loss(&self, phi: &ParamVector) -> f64 {
        let big_a = self.big_a;
        self.map(phi, |x, a, b| piecewise_value(x, a, b, big_a)).sum()
    }

    pub fn grad(&self, phi: &ParamVector) -> Result<ParamVector> {
        let big_a = self.big_a;
        ParamVector::new(self.map(phi, |x, a, b| piecewise_grad(x, a, b, big_a)).collect())
    }

    pub fn hvp(&self, phi: &ParamVector, direction: &ParamVector) -> Result<ParamVector> {
        let big_a = self.big_a;
        ParamVector::new(
            self.map(phi, |x, a, b| piecewise_hess(x, a, b, big_a))
                .zip(direction.iter())
                .map(|(h, v)| h * v)
                .collect(),
        )
    }

    /// Smallest distance from any coordinate of `phi` to a branch breakpoint
    /// (`z = A` or `z = A + 1`).
    pub fn breakpoint_distance(&self, phi: &ParamVector) -> f64 {
        let big_a = self.big_a;
        self.map(phi, |x, a, b| {
            let z = (x - b / a).abs();
            (z - big_a).abs().min((z - big_a - 1.0).abs())
        })
        .fold(f64::INFINITY, f64::min)
    }
}
