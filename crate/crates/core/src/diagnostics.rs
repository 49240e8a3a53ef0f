//! Closed-form bounds, exact meta-gradients over finite task lists,
//! convergence-rate checks and resource-law reports.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimators::{default_checkpoints, exact_grad_stored, EstimatorKind, GradientEstimate};
use crate::math::{pow, powi, sqrt};
use crate::outer::{StepSchedule, Trajectory};
use crate::problem::BilevelProblem;
use crate::rollout::InnerLoopConfig;
use crate::task::{FiniteDistribution, PROBABILITY_TOLERANCE};
use crate::vector::ParamVector;

/// Lipschitz constants: `L1` bounds the gradients, `L2` their variation and
/// `L3` the variation of the Hessians, uniformly over tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessBounds {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityConstants {
    pub bounds: SmoothnessBounds,
    pub alpha: f64,
    pub r: usize,
    pub q: f64,
    pub v: usize,
}

impl RegularityConstants {
    pub fn new(bounds: SmoothnessBounds, alpha: f64, r: usize, q: f64, v: usize) -> Result<Self> {
        let SmoothnessBounds { l1, l2, l3 } = bounds;
        if [l1, l2, l3].iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "smoothness constants must be positive, got ({l1}, {l2}, {l3})"
            )));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be non-negative, got {alpha}")));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidConfig(format!("q must lie in (0, 1], got {q}")));
        }
        if v == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(Self { bounds, alpha, r, q, v })
    }

    fn growth(&self) -> f64 {
        powi(1.0 + self.alpha * self.bounds.l2, self.r as u32)
    }
}

/// `∇M(θ)`: probability-weighted exact gradients over every task.
pub fn meta_grad_exact<P: BilevelProblem>(
    problem: &P,
    dist: &FiniteDistribution<P::Task>,
    theta: &ParamVector,
    cfg: &InnerLoopConfig,
) -> Result<ParamVector> {
    let sum: f64 = dist.iter().map(|(_, p)| p).sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::ProbabilityMismatch { sum });
    }
    let mut acc = ParamVector::zeros(theta.len())?;
    for (task, p) in dist.iter() {
        acc = acc.axpy(p, &exact_grad_stored(problem, task, theta, cfg)?.gradient)?;
    }
    Ok(acc)
}

/// Lipschitz constant of `∇M`:
/// `L2(1+αL2)^{2r} + (L1 L3 / L2)((1+αL2)^{2r} − 1)`.
pub fn lipschitz_bound(c: &RegularityConstants) -> f64 {
    let SmoothnessBounds { l1, l2, l3 } = c.bounds;
    let g2 = c.growth() * c.growth();
    l2 * g2 + (l1 * l3 / l2) * (g2 - 1.0)
}

fn ufo_factor(c: &RegularityConstants) -> f64 {
    1.0 + (c.growth() - 1.0) / c.q
}

/// Second-moment bound of the UFO estimator:
/// `(1 + q⁻¹((1+αL2)^r − 1))² L1²`.
pub fn grad_sq_bound(c: &RegularityConstants) -> f64 {
    let f = ufo_factor(c);
    f * f * c.bounds.l1 * c.bounds.l1
}

/// Constant of the non-convex SGD rate for batch size `v`.
pub fn sgd_constant(c: &RegularityConstants) -> f64 {
    let f = ufo_factor(c);
    let g = c.growth();
    let v = c.v as f64;
    (f * f + (v - 1.0) * g * g) * c.bounds.l1 * c.bounds.l1 / (2.0 * v) * lipschitz_bound(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    pub epsilon: f64,
    /// Records with `k ≤ head_fraction·K` form the head.
    pub head_fraction: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            head_fraction: 0.1,
        }
    }
}

/// Finite-horizon reading of the `o(k^{−1/2+ε})` rate for `min_u ‖∇M(θ_u)‖²`.
///
/// A rate claim can only be falsified at finite horizon; `consistent` means
/// it was not.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `m_k = min_{u<k} ‖∇M(θ_u)‖²`, `k = 1, …, K`.
    pub min_so_far: Vec<f64>,
    /// `m_k · k^{1/2−ε}`.
    pub scaled: Vec<f64>,
    pub head_max: f64,
    pub tail_max: f64,
    pub consistent: bool,
}

/// `exact_norms[u]` is `‖∇M(θ_u)‖` (or the root of its expectation over
/// replicate runs).
pub fn rate_check(traj: &Trajectory, exact_norms: &[f64], opts: RateOptions) -> Result<RateReport> {
    if traj.schedule != StepSchedule::InverseSqrt {
        return Err(Error::ScheduleMismatch);
    }
    rate_check_series(exact_norms, opts)
}

/// [`rate_check`] without the schedule check.
pub fn rate_check_series(exact_norms: &[f64], opts: RateOptions) -> Result<RateReport> {
    if exact_norms.len() < 2 {
        return Err(Error::InvalidConfig("rate check needs at least two norms".into()));
    }
    if !(opts.head_fraction > 0.0 && opts.head_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "head fraction must lie in (0, 1), got {}",
            opts.head_fraction
        )));
    }
    if exact_norms.iter().any(|n| !n.is_finite()) {
        return Err(Error::NonFiniteEvaluation);
    }
    let mut min_so_far = Vec::with_capacity(exact_norms.len());
    let mut m = f64::INFINITY;
    for n in exact_norms {
        m = m.min(n * n);
        min_so_far.push(m);
    }
    let scaled: Vec<f64> = min_so_far
        .iter()
        .enumerate()
        .map(|(i, m)| m * pow((i + 1) as f64, 0.5 - opts.epsilon))
        .collect();
    let split = ((scaled.len() as f64 * opts.head_fraction) as usize).clamp(1, scaled.len() - 1);
    let head_max = scaled[..split].iter().copied().fold(0.0, f64::max);
    let tail_max = scaled[split..].iter().copied().fold(0.0, f64::max);
    Ok(RateReport {
        consistent: tail_max <= head_max,
        min_so_far,
        scaled,
        head_max,
        tail_max,
    })
}

/// One named pass/fail check of a [`ResourceReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceReport {
    pub calls: usize,
    pub mean_inner_grad_evals: f64,
    pub mean_outer_grad_evals: f64,
    pub mean_hvp_evals: f64,
    pub max_peak_cached_states: usize,
    /// Fraction of UFO calls that took the correction.
    pub correction_frequency: Option<f64>,
    pub checks: Vec<ResourceCheck>,
}

impl ResourceReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Aggregates tallies of `estimates` (all produced by `kind` with `cfg`)
/// and checks them against the resource laws of each estimator.
///
/// A UFO call runs the first-order pass (`r` inner gradients) and, when
/// corrected, the full recomputing exact pass (`r(r+1)/2`), so its mean
/// cost is checked against `r + q·r(r+1)/2` within the same three-sigma
/// band as the correction frequency.
pub fn resource_report(
    estimates: &[GradientEstimate],
    kind: EstimatorKind,
    cfg: &InnerLoopConfig,
) -> Result<ResourceReport> {
    if estimates.is_empty() {
        return Err(Error::InvalidConfig("resource report needs at least one estimate".into()));
    }
    let n = estimates.len();
    let r = cfg.r();
    let mean = |f: fn(&GradientEstimate) -> usize| estimates.iter().map(f).sum::<usize>() as f64 / n as f64;
    let all = |f: &dyn Fn(&GradientEstimate) -> bool| estimates.iter().all(f);
    let max_peak = estimates.iter().map(|e| e.meta.peak_cached_states).max().unwrap_or(0);
    let mut checks = Vec::new();
    let mut push = |name, passed, detail: String| checks.push(ResourceCheck { name, passed, detail });

    let mut correction_frequency = None;
    match kind {
        EstimatorKind::Fo => {
            push("fo-no-hvp", all(&|e| e.meta.hvp_evals == 0), String::new());
            push("fo-peak-states", max_peak <= 3, format!("peak {max_peak}"));
            push("fo-inner-evals", all(&|e| e.meta.inner_grad_evals == r), format!("expected {r}"));
        }
        EstimatorKind::ExactStored => {
            push(
                "stored-peak-states",
                all(&|e| e.meta.peak_cached_states == r),
                format!("expected {r}, max {max_peak}"),
            );
            push("stored-inner-evals", all(&|e| e.meta.inner_grad_evals == r), format!("expected {r}"));
            push("stored-hvp-evals", all(&|e| e.meta.hvp_evals == r), format!("expected {r}"));
        }
        EstimatorKind::ExactRerun => {
            let expected = r + r * (r - 1) / 2;
            push("rerun-peak-states", max_peak <= 3, format!("peak {max_peak}"));
            push(
                "rerun-inner-evals",
                all(&|e| e.meta.inner_grad_evals == expected),
                format!("expected {expected}"),
            );
        }
        EstimatorKind::ExactCheckpointed { checkpoints } => {
            let c = checkpoints.unwrap_or_else(|| default_checkpoints(r));
            let expected = 2 * r - c;
            let peak_bound = c - 1 + r.div_ceil(c);
            push(
                "checkpointed-inner-evals",
                all(&|e| e.meta.inner_grad_evals == expected),
                format!("expected {expected}"),
            );
            push(
                "checkpointed-peak-states",
                max_peak <= peak_bound,
                format!("peak {max_peak}, bound {peak_bound}"),
            );
        }
        EstimatorKind::Ufo { q } => {
            let taken = estimates.iter().filter(|e| e.meta.correction_taken == Some(true)).count();
            let freq = taken as f64 / n as f64;
            correction_frequency = Some(freq);
            let band = 3.0 * sqrt(q * (1.0 - q) / n as f64);
            push(
                "ufo-correction-frequency",
                (freq - q).abs() <= band,
                format!("{freq} vs {q} ± {band}"),
            );
            let full = (r * (r + 1) / 2) as f64;
            let evals = mean(|e| e.meta.inner_grad_evals);
            let target = r as f64 + q * full;
            push(
                "ufo-mean-inner-evals",
                (evals - target).abs() <= band * full,
                format!("{evals} vs {target} ± {}", band * full),
            );
            push(
                "ufo-marks-outcome",
                all(&|e| e.meta.correction_taken.is_some()),
                String::new(),
            );
        }
    }

    Ok(ResourceReport {
        calls: n,
        mean_inner_grad_evals: mean(|e| e.meta.inner_grad_evals),
        mean_outer_grad_evals: mean(|e| e.meta.outer_grad_evals),
        mean_hvp_evals: mean(|e| e.meta.hvp_evals),
        max_peak_cached_states: max_peak,
        correction_frequency,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{AnalyticProblem, TaskSpec};
    use crate::problems::{CounterexampleSpec, QuadraticTask};
    use alloc::vec;

    fn unit(alpha: f64, r: usize, q: f64, v: usize) -> RegularityConstants {
        let b = SmoothnessBounds { l1: 1.0, l2: 1.0, l3: 1.0 };
        RegularityConstants::new(b, alpha, r, q, v).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    // mpmath values
    const LIPSCHITZ: f64 = 12.454_999_898_651_200_18;
    const GRAD_SQ: f64 = 286.876_352_114_560_009;
    const SGD: f64 = 1_786.522_468_256_135_466_1;

    #[test]
    fn bound_values() {
        let c = unit(0.1, 10, 0.1, 1);
        assert!(rel(lipschitz_bound(&c), LIPSCHITZ) < 1e-12);
        assert!(rel(grad_sq_bound(&c), GRAD_SQ) < 1e-12);
        assert!(rel(sgd_constant(&c), SGD) < 1e-12);
        assert_eq!(lipschitz_bound(&unit(0.0, 10, 0.5, 1)), 1.0);
        assert_eq!(grad_sq_bound(&unit(0.0, 10, 0.5, 1)), 1.0);
        let exact = unit(0.1, 10, 1.0, 1);
        let g2 = libm::pow(1.1, 20.0);
        assert!(rel(grad_sq_bound(&exact), g2) < 1e-12);
        assert!(rel(sgd_constant(&exact), 0.5 * g2 * lipschitz_bound(&exact)) < 1e-12);
        let no_l3 = RegularityConstants::new(SmoothnessBounds { l1: 1.0, l2: 1.0, l3: 1e-300 }, 0.1, 10, 1.0, 1).unwrap();
        assert!(rel(lipschitz_bound(&no_l3), g2) < 1e-12);
    }

    #[test]
    fn grad_sq_monotone_in_q() {
        let mut prev = f64::INFINITY;
        for i in 1..=20 {
            let b = grad_sq_bound(&unit(0.05, 7, i as f64 / 20.0, 1));
            assert!(b < prev && b >= 1.0);
            prev = b;
        }
    }

    #[test]
    fn constant_validation() {
        let b = SmoothnessBounds { l1: 1.0, l2: 0.0, l3: 1.0 };
        assert!(RegularityConstants::new(b, 0.1, 10, 0.5, 1).is_err());
        let b = SmoothnessBounds { l1: 1.0, l2: 1.0, l3: 1.0 };
        assert!(RegularityConstants::new(b, 0.1, 10, 0.0, 1).is_err());
        assert!(RegularityConstants::new(b, 0.1, 10, 0.5, 0).is_err());
    }

    #[test]
    fn counterexample_meta_gradient() {
        let spec = CounterexampleSpec::synthetic_default();
        let c = spec.constants();
        let dist = spec.distribution();
        let cfg = spec.inner_config();
        let at = |x: f64| meta_grad_exact(&AnalyticProblem, &dist, &ParamVector::scalar(x).unwrap(), &cfg).unwrap()[0];
        assert!(at(c.theta_star).abs() < 1e-9);
        assert!(rel(at(c.x_star).abs(), libm::sqrt(0.12)) < 1e-9);
        assert!(rel(at(1.0), c.a_hat - c.b_hat) < 1e-12);
    }

    #[test]
    fn singleton_quadratic_meta_gradient() {
        let (a, b, alpha, r, theta) = (0.8, 1.2, 0.1, 6, 4.0);
        let task: TaskSpec = QuadraticTask::new(vec![a], vec![b]).unwrap().into();
        let dist = FiniteDistribution::uniform(vec![task]).unwrap();
        let cfg = InnerLoopConfig::new(alpha, r).unwrap();
        let g = meta_grad_exact(&AnalyticProblem, &dist, &ParamVector::scalar(theta).unwrap(), &cfg).unwrap()[0];
        let expected = a * libm::pow(1.0 - alpha * a, 2.0 * r as f64) * (theta - b / a);
        assert!(rel(g, expected) < 1e-12);
    }

    #[test]
    fn rate_series() {
        let zeros = vec![0.0; 100];
        assert!(rate_check_series(&zeros, RateOptions::default()).unwrap().consistent);
        let plateau = vec![0.3; 1000];
        let rep = rate_check_series(&plateau, RateOptions::default()).unwrap();
        assert!(!rep.consistent);
        assert_eq!(rep.min_so_far[999], 0.09);
        let fast: Vec<f64> = (0..1000).map(|u| libm::pow(0.9, u as f64)).collect();
        assert!(rate_check_series(&fast, RateOptions::default()).unwrap().consistent);
        assert!(rate_check_series(&[1.0], RateOptions::default()).is_err());
    }

    #[test]
    fn empty_report_rejected() {
        let cfg = InnerLoopConfig::new(0.1, 3).unwrap();
        assert!(resource_report(&[], EstimatorKind::Fo, &cfg).is_err());
    }
}
