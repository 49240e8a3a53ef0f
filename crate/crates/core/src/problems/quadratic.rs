use alloc::format;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::uniform01;
use crate::task::TaskDistribution;
use crate::vector::ParamVector;

/// Diagonal quadratic `Σ_d (a_d/2)(φ_d − b_d/a_d)²`, used as both inner and
/// outer loss.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl QuadraticTask {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidTask("quadratic task needs p >= 1".into()));
        }
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        if let Some(x) = a.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::InvalidTask(format!("curvature must be positive, got {x}")));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidTask("offsets must be finite".into()));
        }
        Ok(Self { a, b })
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

    /// Per-coordinate minimiser `b_d / a_d`.
    pub fn minimizer(&self) -> Result<ParamVector> {
        ParamVector::new(self.a.iter().zip(&self.b).map(|(a, b)| b / a).collect())
    }

    pub fn loss(&self, phi: &ParamVector) -> f64 {
        phi.iter()
            .zip(self.a.iter().zip(&self.b))
            .map(|(x, (a, b))| {
                let z = x - b / a;
                0.5 * a * z * z
            })
            .sum()
    }

    pub fn grad(&self, phi: &ParamVector) -> Result<ParamVector> {
        ParamVector::new(
            phi.iter()
                .zip(self.a.iter().zip(&self.b))
                .map(|(x, (a, b))| a * x - b)
                .collect(),
        )
    }

    pub fn hvp(&self, direction: &ParamVector) -> Result<ParamVector> {
        ParamVector::new(direction.iter().zip(&self.a).map(|(v, a)| a * v).collect())
    }
}

/// Random diagonal quadratics with `a_d ~ U[a_low, a_high)` and
/// `b_d ~ U[b_low, b_high)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSampler {
    pub dim: usize,
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
}

impl QuadraticSampler {
    pub fn new(dim: usize, a_range: (f64, f64), b_range: (f64, f64)) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if !(a_range.0 > 0.0 && a_range.0 <= a_range.1) || !(b_range.0 <= b_range.1) {
            return Err(Error::InvalidConfig("invalid quadratic sampling ranges".into()));
        }
        Ok(Self {
            dim,
            a_range,
            b_range,
        })
    }
}

impl TaskDistribution for QuadraticSampler {
    type Task = QuadraticTask;

    fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<QuadraticTask> {
        let draw = |rng: &mut R, (lo, hi): (f64, f64)| lo + (hi - lo) * uniform01(rng);
        let a = (0..self.dim).map(|_| draw(rng, self.a_range)).collect();
        let b = (0..self.dim).map(|_| draw(rng, self.b_range)).collect();
        QuadraticTask::new(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn validation() {
        assert!(QuadraticTask::new(vec![], vec![]).is_err());
        assert!(QuadraticTask::new(vec![0.0], vec![1.0]).is_err());
        assert!(QuadraticTask::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(QuadraticSampler::new(0, (0.1, 1.0), (0.0, 1.0)).is_err());
    }

    #[test]
    fn values() {
        let t = QuadraticTask::new(vec![2.0, 0.5], vec![4.0, -1.0]).unwrap();
        let phi = ParamVector::from_slice(&[3.0, 0.0]).unwrap();
        // 1·1² + 0.25·2²
        assert_eq!(t.loss(&phi), 2.0);
        assert_eq!(t.grad(&phi).unwrap().as_slice(), &[2.0, 1.0]);
        assert_eq!(t.hvp(&phi).unwrap().as_slice(), &[6.0, 0.0]);
        assert_eq!(t.minimizer().unwrap().as_slice(), &[2.0, -2.0]);
    }
}
