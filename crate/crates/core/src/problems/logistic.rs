//! Few-shot softmax regression: a linear map `W` (m × n, stored row-major in
//! φ) scored by categorical cross-entropy on the train split (inner loss)
//! and the test split (outer loss).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::math::{exp, ln};
use crate::rng::standard_normal;
use crate::task::TaskDistribution;
use crate::vector::ParamVector;

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| exp(z - max)).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

/// `log Σ_c exp(Z_c) − Zᵀ Y` for a one-hot `label`, computed as
/// `max + log Σ exp(Z_c − max) − Zᵀ Y`.
pub fn cce_loss(logits: &[f64], label: &[f64]) -> f64 {
    debug_assert_eq!(logits.len(), label.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + ln(logits.iter().map(|z| exp(z - max)).sum::<f64>());
    let target: f64 = logits.iter().zip(label).map(|(z, y)| z * y).sum();
    lse - target
}

#[derive(Debug, Clone, PartialEq)]
struct Split {
    inputs: Vec<Vec<f64>>,
    labels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotLogisticTask {
    n_inputs: usize,
    n_classes: usize,
    train: Split,
    test: Split,
}

fn validate_split(
    name: &str,
    inputs: &[Vec<f64>],
    labels: &[Vec<f64>],
    n: usize,
    m: usize,
) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::InvalidTask(format!("{name} split is empty")));
    }
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            found: labels.len(),
        });
    }
    for x in inputs {
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTask(format!("{name} inputs must be finite")));
        }
    }
    for y in labels {
        if y.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: y.len(),
            });
        }
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != m {
            return Err(Error::InvalidTask(format!("{name} label is not one-hot")));
        }
    }
    Ok(())
}

impl FewShotLogisticTask {
    pub fn new(
        train_inputs: Vec<Vec<f64>>,
        train_labels: Vec<Vec<f64>>,
        test_inputs: Vec<Vec<f64>>,
        test_labels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = train_inputs.first().map(Vec::len).unwrap_or(0);
        let m = train_labels.first().map(Vec::len).unwrap_or(0);
        if n == 0 || m == 0 {
            return Err(Error::InvalidTask("inputs and labels must be non-empty".into()));
        }
        validate_split("train", &train_inputs, &train_labels, n, m)?;
        validate_split("test", &test_inputs, &test_labels, n, m)?;
        Ok(Self {
            n_inputs: n,
            n_classes: m,
            train: Split {
                inputs: train_inputs,
                labels: train_labels,
            },
            test: Split {
                inputs: test_inputs,
                labels: test_labels,
            },
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// `p = m · n`.
    pub fn dim(&self) -> usize {
        self.n_inputs * self.n_classes
    }

    pub fn train_size(&self) -> usize {
        self.train.inputs.len()
    }

    pub fn test_size(&self) -> usize {
        self.test.inputs.len()
    }

    fn logits(&self, phi: &[f64], x: &[f64]) -> Vec<f64> {
        phi.chunks_exact(self.n_inputs)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    fn loss(&self, split: &Split, phi: &ParamVector) -> f64 {
        let total: f64 = split
            .inputs
            .iter()
            .zip(&split.labels)
            .map(|(x, y)| cce_loss(&self.logits(phi.as_slice(), x), y))
            .sum();
        total / split.inputs.len() as f64
    }

    fn grad(&self, split: &Split, phi: &ParamVector) -> Result<ParamVector> {
        let n = self.n_inputs;
        let mut g = vec![0.0; self.dim()];
        for (x, y) in split.inputs.iter().zip(&split.labels) {
            let s = softmax(&self.logits(phi.as_slice(), x));
            for (c, (sc, yc)) in s.iter().zip(y).enumerate() {
                let residual = sc - yc;
                for (gi, xi) in g[c * n..(c + 1) * n].iter_mut().zip(x) {
                    *gi += residual * xi;
                }
            }
        }
        let scale = 1.0 / split.inputs.len() as f64;
        ParamVector::new(g.into_iter().map(|v| v * scale).collect())
    }

    // Per example the logit Hessian is diag(s) − s sᵀ; composed with the
    // input outer product it acts on V as ((diag(s) − s sᵀ) V x) xᵀ.
    fn hvp(&self, split: &Split, phi: &ParamVector, direction: &ParamVector) -> Result<ParamVector> {
        let n = self.n_inputs;
        let mut h = vec![0.0; self.dim()];
        for x in &split.inputs {
            let s = softmax(&self.logits(phi.as_slice(), x));
            let dz = self.logits(direction.as_slice(), x);
            let mean_dz: f64 = s.iter().zip(&dz).map(|(a, b)| a * b).sum();
            for (c, (sc, dzc)) in s.iter().zip(&dz).enumerate() {
                let hc = sc * (dzc - mean_dz);
                for (hi, xi) in h[c * n..(c + 1) * n].iter_mut().zip(x) {
                    *hi += hc * xi;
                }
            }
        }
        let scale = 1.0 / split.inputs.len() as f64;
        ParamVector::new(h.into_iter().map(|v| v * scale).collect())
    }

    pub fn train_loss(&self, phi: &ParamVector) -> f64 {
        self.loss(&self.train, phi)
    }

    pub fn test_loss(&self, phi: &ParamVector) -> f64 {
        self.loss(&self.test, phi)
    }

    pub fn train_grad(&self, phi: &ParamVector) -> Result<ParamVector> {
        self.grad(&self.train, phi)
    }

    pub fn test_grad(&self, phi: &ParamVector) -> Result<ParamVector> {
        self.grad(&self.test, phi)
    }

    pub fn train_hvp(&self, phi: &ParamVector, direction: &ParamVector) -> Result<ParamVector> {
        self.hvp(&self.train, phi, direction)
    }

    /// Fraction of test examples whose arg-max logit is the labelled class.
    pub fn test_accuracy(&self, phi: &ParamVector) -> f64 {
        let hits = self
            .test
            .inputs
            .iter()
            .zip(&self.test.labels)
            .filter(|(x, y)| {
                let z = self.logits(phi.as_slice(), x);
                let pred = argmax(&z);
                y[pred] == 1.0
            })
            .count();
        hits as f64 / self.test_size() as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn one_hot(class: usize, m: usize) -> Vec<f64> {
    let mut y = vec![0.0; m];
    y[class] = 1.0;
    y
}

/// Synthetic K-shot m-way tasks: each task draws m class centres from
/// `N(0, center_scale² I)` and examples as centre plus `N(0, noise² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSampler {
    pub n_inputs: usize,
    pub n_classes: usize,
    pub shots: usize,
    pub test_shots: usize,
    pub center_scale: f64,
    pub noise: f64,
}

impl FewShotSampler {
    pub fn new(
        n_inputs: usize,
        n_classes: usize,
        shots: usize,
        test_shots: usize,
        center_scale: f64,
        noise: f64,
    ) -> Result<Self> {
        if n_inputs == 0 || n_classes == 0 || shots == 0 || test_shots == 0 {
            return Err(Error::InvalidConfig(
                "inputs, classes, shots and test shots must be at least 1".into(),
            ));
        }
        if !(center_scale.is_finite() && center_scale >= 0.0 && noise.is_finite() && noise >= 0.0) {
            return Err(Error::InvalidConfig("scales must be finite and non-negative".into()));
        }
        Ok(Self {
            n_inputs,
            n_classes,
            shots,
            test_shots,
            center_scale,
            noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_inputs * self.n_classes
    }
}

impl TaskDistribution for FewShotSampler {
    type Task = FewShotLogisticTask;

    fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<FewShotLogisticTask> {
        let n = self.n_inputs;
        let m = self.n_classes;
        let centers: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| self.center_scale * standard_normal(rng)).collect())
            .collect();
        let draw = |count: usize, rng: &mut R| {
            let mut xs = Vec::with_capacity(count * m);
            let mut ys = Vec::with_capacity(count * m);
            for (c, center) in centers.iter().enumerate() {
                for _ in 0..count {
                    xs.push(center.iter().map(|mu| mu + self.noise * standard_normal(rng)).collect());
                    ys.push(one_hot(c, m));
                }
            }
            (xs, ys)
        };
        let (train_x, train_y) = draw(self.shots, rng);
        let (test_x, test_y) = draw(self.test_shots, rng);
        FewShotLogisticTask::new(train_x, train_y, test_x, test_y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStreams;

    #[test]
    fn cce_examples() {
        assert!((cce_loss(&[0.0, 0.0], &[1.0, 0.0]) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(cce_loss(&[800.0, 0.0, 0.0], &[1.0, 0.0, 0.0]) < 1e-300);
        // log(e + e² + e³) − 3, mpmath
        let v = cce_loss(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0]);
        assert!((v - 0.407_605_964_444_380_3).abs() < 1e-14, "{v}");
        // overflow-safe
        assert!(cce_loss(&[1e4, -1e4], &[0.0, 1.0]).is_finite());
    }

    #[test]
    fn rejects_bad_labels() {
        let x = vec![vec![1.0, 2.0]];
        assert!(FewShotLogisticTask::new(x.clone(), vec![vec![1.0, 1.0]], x.clone(), vec![vec![0.0, 1.0]]).is_err());
        assert!(FewShotLogisticTask::new(x.clone(), vec![vec![0.5, 0.5]], x.clone(), vec![vec![0.0, 1.0]]).is_err());
        assert!(FewShotLogisticTask::new(x.clone(), vec![vec![1.0, 0.0]], vec![], vec![]).is_err());
        assert!(FewShotLogisticTask::new(x.clone(), vec![vec![1.0, 0.0]], vec![vec![1.0]], vec![vec![0.0, 1.0]]).is_err());
        assert!(FewShotLogisticTask::new(x.clone(), vec![vec![1.0, 0.0]], x, vec![vec![0.0, 1.0]]).is_ok());
    }

    #[test]
    fn zero_weights_gradient_is_mean_residual_outer_product() {
        let xs = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0], vec![2.0, 2.0]];
        let ys = vec![one_hot(0, 2), one_hot(1, 2), one_hot(0, 2), one_hot(1, 2)];
        let t = FewShotLogisticTask::new(xs.clone(), ys.clone(), xs.clone(), ys.clone()).unwrap();
        let g = t.train_grad(&ParamVector::zeros(4).unwrap()).unwrap();
        let mut expected = [0.0; 4];
        for (x, y) in xs.iter().zip(&ys) {
            for c in 0..2 {
                for i in 0..2 {
                    expected[c * 2 + i] += (0.5 - y[c]) * x[i] / 4.0;
                }
            }
        }
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let h = t.train_hvp(&ParamVector::from_slice(&[0.3, -0.2, 1.0, 0.1]).unwrap(), &ParamVector::zeros(4).unwrap()).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sampler_shapes() {
        let s = FewShotSampler::new(3, 4, 2, 1, 2.0, 0.5).unwrap();
        let t = s.sample(&mut SeedStreams::new(1).auxiliary(0)).unwrap();
        assert_eq!(t.dim(), 12);
        assert_eq!(t.train_size(), 8);
        assert_eq!(t.test_size(), 4);
        assert!(FewShotSampler::new(3, 0, 2, 1, 2.0, 0.5).is_err());
    }
}
