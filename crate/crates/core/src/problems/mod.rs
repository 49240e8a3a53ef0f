//! Analytic problem families with closed-form gradients and
//! Hessian-vector products.

mod counterexample;
mod logistic;
mod piecewise;
mod quadratic;

pub use counterexample::{
    counterexample_constants, derive_b2, CounterexampleConstants, CounterexampleSpec,
};
pub use logistic::{cce_loss, softmax, FewShotLogisticTask, FewShotSampler};
pub use piecewise::{piecewise_grad, piecewise_hess, piecewise_value, PiecewiseTask};
pub use quadratic::{QuadraticSampler, QuadraticTask};
