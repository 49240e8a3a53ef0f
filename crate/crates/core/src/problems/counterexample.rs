//! Two equiprobable piecewise tasks on which first-order BLO converges to a
//! point whose true meta-gradient has squared norm `2D`.

use alloc::format;
use alloc::vec;

use crate::diagnostics::SmoothnessBounds;
use crate::error::{Error, Result};
use crate::math::{powi, sqrt};
use crate::problem::TaskSpec;
use crate::problems::PiecewiseTask;
use crate::rollout::InnerLoopConfig;
use crate::task::FiniteDistribution;

fn check_curvatures(a1: f64, a2: f64, alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    for a in [a1, a2] {
        if !(a > 0.0 && alpha * a < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "curvature {a} must satisfy 0 < a < 1/alpha = {}",
                1.0 / alpha
            )));
        }
    }
    if a1 == a2 {
        return Err(Error::DegenerateProblem("a1 and a2 must differ".into()));
    }
    Ok(())
}

/// Offset of the second task that makes the gap `|â x* − b̂|` equal
/// `√(2D)` (with `b1 = 0`).
pub fn derive_b2(a1: f64, a2: f64, alpha: f64, r: usize, d: f64) -> Result<f64> {
    check_curvatures(a1, a2, alpha)?;
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidConfig(format!("D must be positive, got {d}")));
    }
    let r = r as u32;
    let c1 = 1.0 - alpha * a1;
    let c2 = 1.0 - alpha * a2;
    let ratio = (a1 * powi(c1, 2 * r) + a2 * powi(c2, 2 * r)) / (a1 * powi(c1, r) + a2 * powi(c2, r));
    let denom = (ratio * powi(c2, r) - powi(c2, 2 * r)).abs();
    if !(denom > 0.0) {
        return Err(Error::DegenerateProblem("b2 denominator vanishes".into()));
    }
    Ok(2.0 * sqrt(2.0 * d) / denom)
}

/// Parameters of the two-task counterexample. `b1` is fixed to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleSpec {
    pub a1: f64,
    pub a2: f64,
    pub b2: f64,
    pub big_a: f64,
    pub d: f64,
    pub alpha: f64,
    pub r: usize,
}

impl CounterexampleSpec {
    pub const B1: f64 = 0.0;

    /// Derives `b2` from `D`. `big_a` defaults to `|b2/a2 − b1/a1| + 1`.
    pub fn new(a1: f64, a2: f64, alpha: f64, r: usize, d: f64, big_a: Option<f64>) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidConfig("rollout length r must be at least 1".into()));
        }
        let b2 = derive_b2(a1, a2, alpha, r, d)?;
        let spread = (Self::B1 / a1 - b2 / a2).abs();
        let big_a = big_a.unwrap_or(spread + 1.0);
        if !(big_a.is_finite() && big_a > spread) {
            return Err(Error::InvalidConfig(format!(
                "A = {big_a} must exceed |b1/a1 - b2/a2| = {spread}"
            )));
        }
        Ok(Self {
            a1,
            a2,
            b2,
            big_a,
            d,
            alpha,
            r,
        })
    }

    /// The synthetic-experiment setting: `a1 = 0.5`, `a2 = 1.5`, `α = 0.1`,
    /// `r = 10`, `D = 0.06`.
    pub fn synthetic_default() -> Self {
        Self::new(0.5, 1.5, 0.1, 10, 0.06, None).expect("default parameters are valid")
    }

    pub fn b1(&self) -> f64 {
        Self::B1
    }

    pub fn inner_config(&self) -> InnerLoopConfig {
        InnerLoopConfig::new(self.alpha, self.r).expect("validated at construction")
    }

    pub fn tasks(&self) -> [PiecewiseTask; 2] {
        [
            PiecewiseTask::new(vec![self.a1], vec![Self::B1], self.big_a).expect("validated"),
            PiecewiseTask::new(vec![self.a2], vec![self.b2], self.big_a).expect("validated"),
        ]
    }

    /// Both tasks with probability ½.
    pub fn distribution(&self) -> FiniteDistribution<TaskSpec> {
        let [t1, t2] = self.tasks();
        FiniteDistribution::uniform(vec![t1.into(), t2.into()]).expect("two tasks")
    }

    pub fn constants(&self) -> CounterexampleConstants {
        counterexample_constants(self)
    }

    /// `L1 = max a_i(½ + A)`, `L2 = L3 = max a_i`.
    pub fn smoothness(&self) -> SmoothnessBounds {
        let a_max = self.a1.max(self.a2);
        SmoothnessBounds {
            l1: a_max * (0.5 + self.big_a),
            l2: a_max,
            l3: a_max,
        }
    }
}

/// Closed-form quantities of the counterexample restricted to the segment
/// `I` where both losses are quadratic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleConstants {
    /// Expected first-order gradient is `a_star·θ − b_star` on `I`.
    pub a_star: f64,
    pub b_star: f64,
    /// Fixed point of first-order dynamics.
    pub x_star: f64,
    /// True meta-gradient is `a_hat·θ − b_hat` on `I`.
    pub a_hat: f64,
    pub b_hat: f64,
    /// Stationary point of the meta-objective.
    pub theta_star: f64,
    /// `|a_hat·x_star − b_hat|`.
    pub gap: f64,
    pub interval: (f64, f64),
}

impl CounterexampleConstants {
    pub fn in_interval(&self, x: f64) -> bool {
        self.interval.0 <= x && x <= self.interval.1
    }
}

pub(crate) fn constants_from(
    (a1, b1): (f64, f64),
    (a2, b2): (f64, f64),
    alpha: f64,
    r: usize,
    big_a: f64,
) -> CounterexampleConstants {
    let r = r as u32;
    let c1 = powi(1.0 - alpha * a1, r);
    let c2 = powi(1.0 - alpha * a2, r);
    let a_star = 0.5 * (a1 * c1 + a2 * c2);
    let b_star = 0.5 * (b1 * c1 + b2 * c2);
    let a_hat = 0.5 * (a1 * c1 * c1 + a2 * c2 * c2);
    let b_hat = 0.5 * (b1 * c1 * c1 + b2 * c2 * c2);
    let x_star = b_star / a_star;
    CounterexampleConstants {
        a_star,
        b_star,
        x_star,
        a_hat,
        b_hat,
        theta_star: b_hat / a_hat,
        gap: (a_hat * x_star - b_hat).abs(),
        interval: (b2 / a2 - big_a, b1 / a1 + big_a),
    }
}

pub fn counterexample_constants(spec: &CounterexampleSpec) -> CounterexampleConstants {
    constants_from(
        (spec.a1, CounterexampleSpec::B1),
        (spec.a2, spec.b2),
        spec.alpha,
        spec.r,
        spec.big_a,
    )
}
