//! The bilevel problem contract and the task type shared by the analytic
//! families.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::problems::{FewShotLogisticTask, PiecewiseTask, QuadraticTask};
use crate::task::TaskDistribution;
use crate::vector::ParamVector;

/// Inner/outer losses of a bilevel problem, their gradients and the inner
/// Hessian-vector product.
///
/// Implementations must be pure: equal arguments give bitwise-equal
/// results. `inner_hvp` must be linear and symmetric in its direction.
pub trait BilevelProblem {
    type Task;

    /// Parameter dimension `p` expected for `task`.
    fn dim(&self, task: &Self::Task) -> usize;

    fn inner_loss(&self, phi: &ParamVector, task: &Self::Task) -> Result<f64>;
    fn outer_loss(&self, phi: &ParamVector, task: &Self::Task) -> Result<f64>;
    fn inner_grad(&self, phi: &ParamVector, task: &Self::Task) -> Result<ParamVector>;
    fn outer_grad(&self, phi: &ParamVector, task: &Self::Task) -> Result<ParamVector>;

    /// Hessian of the inner loss at `phi` applied to `direction`.
    fn inner_hvp(
        &self,
        phi: &ParamVector,
        task: &Self::Task,
        direction: &ParamVector,
    ) -> Result<ParamVector>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskFamily {
    Quadratic,
    Counterexample,
    FewShotLogistic,
}

/// One task drawn from one of the analytic families.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    Quadratic(QuadraticTask),
    /// One of the two piecewise-polynomial counterexample tasks.
    Counterexample(PiecewiseTask),
    FewShotLogistic(FewShotLogisticTask),
}

impl TaskSpec {
    pub fn family(&self) -> TaskFamily {
        match self {
            TaskSpec::Quadratic(_) => TaskFamily::Quadratic,
            TaskSpec::Counterexample(_) => TaskFamily::Counterexample,
            TaskSpec::FewShotLogistic(_) => TaskFamily::FewShotLogistic,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TaskSpec::Quadratic(t) => t.dim(),
            TaskSpec::Counterexample(t) => t.dim(),
            TaskSpec::FewShotLogistic(t) => t.dim(),
        }
    }
}

impl From<QuadraticTask> for TaskSpec {
    fn from(t: QuadraticTask) -> Self {
        TaskSpec::Quadratic(t)
    }
}

impl From<PiecewiseTask> for TaskSpec {
    fn from(t: PiecewiseTask) -> Self {
        TaskSpec::Counterexample(t)
    }
}

impl From<FewShotLogisticTask> for TaskSpec {
    fn from(t: FewShotLogisticTask) -> Self {
        TaskSpec::FewShotLogistic(t)
    }
}

/// Adapts a family sampler so that it yields [`TaskSpec`]s for
/// [`AnalyticProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpecSampler<D>(pub D);

impl<D> TaskDistribution for SpecSampler<D>
where
    D: TaskDistribution,
    D::Task: Into<TaskSpec>,
{
    type Task = TaskSpec;

    fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<TaskSpec> {
        self.0.sample(rng).map(Into::into)
    }
}

/// Closed-form problem over [`TaskSpec`]; inner and outer losses coincide
/// for the quadratic and counterexample families, while the few-shot family
/// uses its train split inside and its test split outside.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalyticProblem;

fn check(phi: &ParamVector, task: &TaskSpec) -> Result<()> {
    if phi.len() != task.dim() {
        return Err(Error::DimensionMismatch {
            expected: task.dim(),
            found: phi.len(),
        });
    }
    Ok(())
}

impl BilevelProblem for AnalyticProblem {
    type Task = TaskSpec;

    fn dim(&self, task: &TaskSpec) -> usize {
        task.dim()
    }

    fn inner_loss(&self, phi: &ParamVector, task: &TaskSpec) -> Result<f64> {
        check(phi, task)?;
        Ok(match task {
            TaskSpec::Quadratic(t) => t.loss(phi),
            TaskSpec::Counterexample(t) => t.loss(phi),
            TaskSpec::FewShotLogistic(t) => t.train_loss(phi),
        })
    }

    fn outer_loss(&self, phi: &ParamVector, task: &TaskSpec) -> Result<f64> {
        check(phi, task)?;
        Ok(match task {
            TaskSpec::Quadratic(t) => t.loss(phi),
            TaskSpec::Counterexample(t) => t.loss(phi),
            TaskSpec::FewShotLogistic(t) => t.test_loss(phi),
        })
    }

    fn inner_grad(&self, phi: &ParamVector, task: &TaskSpec) -> Result<ParamVector> {
        check(phi, task)?;
        match task {
            TaskSpec::Quadratic(t) => t.grad(phi),
            TaskSpec::Counterexample(t) => t.grad(phi),
            TaskSpec::FewShotLogistic(t) => t.train_grad(phi),
        }
    }

    fn outer_grad(&self, phi: &ParamVector, task: &TaskSpec) -> Result<ParamVector> {
        check(phi, task)?;
        match task {
            TaskSpec::Quadratic(t) => t.grad(phi),
            TaskSpec::Counterexample(t) => t.grad(phi),
            TaskSpec::FewShotLogistic(t) => t.test_grad(phi),
        }
    }

    fn inner_hvp(
        &self,
        phi: &ParamVector,
        task: &TaskSpec,
        direction: &ParamVector,
    ) -> Result<ParamVector> {
        check(phi, task)?;
        check(direction, task)?;
        match task {
            TaskSpec::Quadratic(t) => t.hvp(direction),
            TaskSpec::Counterexample(t) => t.hvp(phi, direction),
            TaskSpec::FewShotLogistic(t) => t.train_hvp(phi, direction),
        }
    }
}
