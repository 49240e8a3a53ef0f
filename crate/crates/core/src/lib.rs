//! Gradient estimators for bilevel optimization (BLO) through an unrolled
//! inner gradient-descent loop.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerics:
//!
//! * [`vector`], [`rollout`], [`problem`], [`task`], [`rng`]: parameter
//!   vectors, the inner GD rollout, the problem contract, task distributions
//!   and deterministic random substreams.
//! * [`problems`]: analytic problem families (diagonal quadratics, the
//!   two-task piecewise counterexample, toy softmax regression).
//! * [`estimators`]: first-order, exact (stored / recomputed / checkpointed)
//!   and unbiased first-order (UFO) gradient estimators.
//! * [`outer`]: outer mini-batch gradient descent with trajectory recording.
//! * [`oracle`]: finite-difference and Monte-Carlo reference checks.
//! * [`diagnostics`]: exact meta-gradients, closed-form bounds, rate and
//!   resource-law checks.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod oracle;
pub mod outer;
pub mod problem;
pub mod problems;
pub mod rng;
pub mod rollout;
pub mod task;
pub mod vector;

mod math;

pub use error::{Error, Result};
pub use estimators::{EstimateMeta, EstimatorKind, GradientEstimate};
pub use problem::{AnalyticProblem, BilevelProblem, SpecSampler, TaskSpec};
pub use rollout::{rollout, InnerLoopConfig, RolloutOutput, StateTrajectory};
pub use task::{FiniteDistribution, TaskDistribution};
pub use vector::ParamVector;
