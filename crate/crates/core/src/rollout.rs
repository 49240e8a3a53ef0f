//! Inner gradient-descent rollout `φ_j = φ_{j-1} − α ∇L_in(φ_{j-1})`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::problem::BilevelProblem;
use crate::vector::ParamVector;

/// Step size and length of the inner GD loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoopConfig {
    alpha: f64,
    r: usize,
}

impl InnerLoopConfig {
    /// `alpha` must be finite and non-negative (`0` gives the identity
    /// rollout); `r` must be at least 1.
    pub fn new(alpha: f64, r: usize) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "inner step size must be finite and non-negative, got {alpha}"
            )));
        }
        if r == 0 {
            return Err(Error::InvalidConfig("rollout length r must be at least 1".into()));
        }
        Ok(Self { alpha, r })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn r(&self) -> usize {
        self.r
    }
}

/// All states `[φ_0, …, φ_r]` of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    states: Vec<ParamVector>,
}

impl StateTrajectory {
    pub fn states(&self) -> &[ParamVector] {
        &self.states
    }

    pub fn initial(&self) -> &ParamVector {
        &self.states[0]
    }

    pub fn final_state(&self) -> &ParamVector {
        self.states.last().expect("trajectory holds at least φ_0")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_states(self) -> Vec<ParamVector> {
        self.states
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RolloutOutput {
    Trajectory(StateTrajectory),
    FinalOnly(ParamVector),
}

impl RolloutOutput {
    pub fn final_state(&self) -> &ParamVector {
        match self {
            RolloutOutput::Trajectory(t) => t.final_state(),
            RolloutOutput::FinalOnly(phi) => phi,
        }
    }

    pub fn into_final(self) -> ParamVector {
        match self {
            RolloutOutput::Trajectory(t) => t.states.into_iter().last().unwrap(),
            RolloutOutput::FinalOnly(phi) => phi,
        }
    }

    /// Number of states held by the output.
    pub fn cached_states(&self) -> usize {
        match self {
            RolloutOutput::Trajectory(t) => t.len(),
            RolloutOutput::FinalOnly(_) => 1,
        }
    }
}

/// Maps a non-finite failure while producing `φ_step` to
/// [`Error::NonFiniteState`].
pub(crate) fn at_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NonFiniteState { step },
        other => other,
    }
}

/// `φ − α g`, the one GD update shared by every rollout and estimator so
/// that recomputed states are bitwise identical to stored ones.
#[inline]
pub(crate) fn gd_update(phi: &ParamVector, alpha: f64, grad: &ParamVector, step: usize) -> Result<ParamVector> {
    phi.axpy(-alpha, grad).map_err(at_step(step))
}

pub(crate) fn check_theta<P: BilevelProblem>(problem: &P, task: &P::Task, theta: &ParamVector) -> Result<()> {
    let expected = problem.dim(task);
    if theta.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: theta.len(),
        });
    }
    Ok(())
}

/// Runs `cfg.r()` inner GD steps from `theta` on `task`.
///
/// With `keep_states` every iterate is returned; otherwise only `φ_r` is
/// kept. Finiteness is checked after every step.
pub fn rollout<P: BilevelProblem>(
    problem: &P,
    task: &P::Task,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
    keep_states: bool,
) -> Result<RolloutOutput> {
    check_theta(problem, task, theta)?;
    let alpha = cfg.alpha();
    if keep_states {
        let mut states = Vec::with_capacity(cfg.r() + 1);
        states.push(theta.clone());
        for j in 1..=cfg.r() {
            let phi = &states[j - 1];
            let g = problem.inner_grad(phi, task).map_err(at_step(j))?;
            let next = gd_update(phi, alpha, &g, j)?;
            states.push(next);
        }
        Ok(RolloutOutput::Trajectory(StateTrajectory { states }))
    } else {
        let mut phi = theta.clone();
        for j in 1..=cfg.r() {
            let g = problem.inner_grad(&phi, task).map_err(at_step(j))?;
            phi = gd_update(&phi, alpha, &g, j)?;
        }
        Ok(RolloutOutput::FinalOnly(phi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{AnalyticProblem, TaskSpec};
    use crate::problems::QuadraticTask;
    use alloc::vec;

    fn quad(a: f64, b: f64) -> TaskSpec {
        QuadraticTask::new(vec![a], vec![b]).unwrap().into()
    }

    #[test]
    fn config_validation() {
        assert!(InnerLoopConfig::new(0.1, 0).is_err());
        assert!(InnerLoopConfig::new(-0.1, 3).is_err());
        assert!(InnerLoopConfig::new(f64::NAN, 3).is_err());
        assert!(InnerLoopConfig::new(0.0, 1).is_ok());
    }

    #[test]
    fn quadratic_closed_form() {
        let cfg = InnerLoopConfig::new(0.1, 10).unwrap();
        let out = rollout(&AnalyticProblem, &quad(0.5, 0.0), &ParamVector::scalar(1.0).unwrap(), &cfg, false).unwrap();
        // (1 - 0.05)^10, mpmath
        let expected = 0.598_736_939_238_378_906_25;
        assert!((out.final_state()[0] - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn stationary_start_is_fixed() {
        let cfg = InnerLoopConfig::new(0.3, 1).unwrap();
        let theta = ParamVector::scalar(4.0).unwrap();
        let out = rollout(&AnalyticProblem, &quad(0.5, 2.0), &theta, &cfg, true).unwrap();
        assert_eq!(out.final_state(), &theta);
    }

    #[test]
    fn kept_and_discarded_states_agree() {
        let cfg = InnerLoopConfig::new(0.17, 13).unwrap();
        let theta = ParamVector::from_slice(&[3.0, -1.5]).unwrap();
        let task: TaskSpec = QuadraticTask::new(vec![0.7, 2.1], vec![0.3, -4.0]).unwrap().into();
        let kept = rollout(&AnalyticProblem, &task, &theta, &cfg, true).unwrap();
        let lean = rollout(&AnalyticProblem, &task, &theta, &cfg, false).unwrap();
        assert_eq!(kept.final_state(), lean.final_state());
        assert_eq!(kept.cached_states(), 14);
        assert_eq!(lean.cached_states(), 1);
        match kept {
            RolloutOutput::Trajectory(t) => assert_eq!(t.initial(), &theta),
            _ => unreachable!(),
        }
    }

    #[test]
    fn divergent_inner_gd_reports_first_bad_step() {
        // |1 - αa| = 1e150 per step overflows at the third step
        let cfg = InnerLoopConfig::new(1.0, 10).unwrap();
        let task = quad(1e150, 0.0);
        let err = rollout(&AnalyticProblem, &task, &ParamVector::scalar(1.0).unwrap(), &cfg, false).unwrap_err();
        assert_eq!(err, Error::NonFiniteState { step: 3 });
    }

    #[test]
    fn dimension_checked() {
        let cfg = InnerLoopConfig::new(0.1, 2).unwrap();
        let err = rollout(&AnalyticProblem, &quad(1.0, 0.0), &ParamVector::zeros(2).unwrap(), &cfg, false).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 1, found: 2 });
    }
}
