//! Independent checks: central finite differences, Monte-Carlo mean tests
//! and exact expectations over finite task lists.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimators::{estimate, ufo_grad_given, EstimatorKind};
use crate::math::sqrt;
use crate::problem::BilevelProblem;
use crate::rng::SeedStreams;
use crate::rollout::InnerLoopConfig;
use crate::task::PROBABILITY_TOLERANCE;
use crate::vector::ParamVector;

/// Central-difference step. Coordinate `d` uses `h_d = step·max(1, |x_d|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    step: f64,
}

impl FdConfig {
    pub fn new(step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {step}")));
        }
        Ok(Self { step })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Step for a coordinate of magnitude `x`.
    pub fn step_at(&self, x: f64) -> f64 {
        self.step * x.abs().max(1.0)
    }
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { step: 1e-5 }
    }
}

fn finite_eval(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::NonFinite { .. } | Error::NonFiniteState { .. }) => Err(Error::NonFiniteEvaluation),
        Err(e) => Err(e),
    }
}

fn finite_vec(r: Result<ParamVector>) -> Result<ParamVector> {
    match r {
        Ok(v) => Ok(v),
        Err(Error::NonFinite { .. } | Error::NonFiniteState { .. }) => Err(Error::NonFiniteEvaluation),
        Err(e) => Err(e),
    }
}

/// Central-difference gradient of `f` at `phi`.
pub fn fd_grad<F>(f: F, phi: &ParamVector, fd: FdConfig) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let mut x = phi.as_slice().to_vec();
    let mut out = Vec::with_capacity(x.len());
    for d in 0..x.len() {
        let x0 = x[d];
        let h = fd.step_at(x0);
        x[d] = x0 + h;
        let plus = finite_eval(f(&ParamVector::new(x.clone()).map_err(|_| Error::NonFiniteEvaluation)?))?;
        x[d] = x0 - h;
        let minus = finite_eval(f(&ParamVector::new(x.clone()).map_err(|_| Error::NonFiniteEvaluation)?))?;
        x[d] = x0;
        out.push((plus - minus) / (2.0 * h));
    }
    ParamVector::new(out).map_err(|_| Error::NonFiniteEvaluation)
}

/// Central difference of `grad` along `direction`:
/// `(∇f(φ + h b) − ∇f(φ − h b)) / 2h` with `h = step·max(1, max|φ_d|)`.
pub fn fd_hvp<G>(grad: G, phi: &ParamVector, direction: &ParamVector, fd: FdConfig) -> Result<ParamVector>
where
    G: Fn(&ParamVector) -> Result<ParamVector>,
{
    let h = fd.step_at(phi.max_abs());
    let plus = finite_vec(grad(&finite_vec(phi.axpy(h, direction))?))?;
    let minus = finite_vec(grad(&finite_vec(phi.axpy(-h, direction))?))?;
    finite_vec(plus.sub(&minus)?.scale(1.0 / (2.0 * h)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub mean: ParamVector,
    /// Per-coordinate standard error of the mean.
    pub stderr: Vec<f64>,
    /// `max_d |mean_d − reference_d| / stderr_d`, with `0/0 = 0`.
    pub max_abs_z: f64,
}

/// Draws `n ≥ 100` samples and compares their mean with `reference`.
pub fn mc_mean_test<S>(mut sampler: S, reference: &ParamVector, n: usize) -> Result<McReport>
where
    S: FnMut() -> Result<ParamVector>,
{
    if n < 100 {
        return Err(Error::InvalidConfig(format!("Monte-Carlo test needs n >= 100, got {n}")));
    }
    let p = reference.len();
    // Welford accumulators
    let mut mean = alloc::vec![0.0; p];
    let mut m2 = alloc::vec![0.0; p];
    for i in 1..=n {
        let x = sampler()?;
        if x.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: x.len() });
        }
        for d in 0..p {
            let delta = x[d] - mean[d];
            mean[d] += delta / i as f64;
            m2[d] += delta * (x[d] - mean[d]);
        }
    }
    let stderr: Vec<f64> = m2.iter().map(|s| sqrt(s / ((n - 1) as f64 * n as f64))).collect();
    let max_abs_z = (0..p)
        .map(|d| {
            let dev = (mean[d] - reference[d]).abs();
            if dev == 0.0 {
                0.0
            } else {
                dev / stderr[d]
            }
        })
        .fold(0.0, f64::max);
    Ok(McReport {
        mean: ParamVector::new(mean)?,
        stderr,
        max_abs_z,
    })
}

/// `Σ_t p_t · E_ξ[𝒢(θ, t, ξ)]` over an explicit task list. For UFO both
/// Bernoulli outcomes are enumerated with weights `1 − q` and `q`; the
/// other estimators are deterministic.
pub fn enumerate_expected_grad<P: BilevelProblem>(
    problem: &P,
    tasks: &[(P::Task, f64)],
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
    kind: EstimatorKind,
) -> Result<ParamVector> {
    if tasks.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let sum: f64 = tasks.iter().map(|(_, p)| p).sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE || tasks.iter().any(|(_, p)| !(*p >= 0.0)) {
        return Err(Error::ProbabilityMismatch { sum });
    }
    kind.validate()?;
    // deterministic estimators ignore the stream
    let mut unused = SeedStreams::new(0).auxiliary(0);
    let mut acc = ParamVector::zeros(theta.len())?;
    for (task, p) in tasks {
        match kind {
            EstimatorKind::Ufo { q } => {
                for (xi, w) in [(false, 1.0 - q), (true, q)] {
                    if w > 0.0 {
                        let g = ufo_grad_given(problem, task, theta, cfg, q, xi)?.gradient;
                        acc = acc.axpy(p * w, &g)?;
                    }
                }
            }
            _ => {
                let g = estimate(kind, problem, task, theta, cfg, &mut unused)?.gradient;
                acc = acc.axpy(*p, &g)?;
            }
        }
    }
    Ok(acc)
}
