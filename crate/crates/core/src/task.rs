//! Task distributions and i.i.d. task sampling.

use alloc::format;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::uniform01;

/// Tolerance on the total probability of a [`FiniteDistribution`].
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// A distribution over tasks that can be sampled from a caller-owned stream.
pub trait TaskDistribution {
    type Task;

    fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<Self::Task>;

    /// The explicit task list when the distribution is finite. Enables exact
    /// meta-gradient diagnostics.
    fn as_finite(&self) -> Option<&FiniteDistribution<Self::Task>> {
        None
    }
}

/// Finitely many tasks with explicit probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution<T> {
    entries: Vec<(T, f64)>,
}

impl<T> FiniteDistribution<T> {
    /// Probabilities must be non-negative and sum to one within
    /// [`PROBABILITY_TOLERANCE`].
    pub fn new(entries: Vec<(T, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        if let Some((_, p)) = entries.iter().find(|(_, p)| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidConfig(format!("invalid task probability {p}")));
        }
        let sum: f64 = entries.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::ProbabilityMismatch { sum });
        }
        Ok(Self { entries })
    }

    /// Equiprobable distribution over `tasks`.
    pub fn uniform(tasks: Vec<T>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let p = 1.0 / tasks.len() as f64;
        Self::new(tasks.into_iter().map(|t| (t, p)).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(T, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, f64)> {
        self.entries.iter().map(|(t, p)| (t, *p))
    }

    /// Index of the task selected by one uniform draw.
    pub fn sample_index<R: RngCore + ?Sized>(&self, rng: &mut R) -> usize {
        let u = uniform01(rng);
        let mut acc = 0.0;
        for (i, (_, p)) in self.entries.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding slack above the cumulative sum
        self.entries
            .iter()
            .rposition(|(_, p)| *p > 0.0)
            .unwrap_or(self.entries.len() - 1)
    }
}

impl<T: Clone> TaskDistribution for FiniteDistribution<T> {
    type Task = T;

    fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<T> {
        Ok(self.entries[self.sample_index(rng)].0.clone())
    }

    fn as_finite(&self) -> Option<&FiniteDistribution<T>> {
        Some(self)
    }
}

/// `count` i.i.d. draws from `dist`.
pub fn sample_tasks<D, R>(dist: &D, count: usize, rng: &mut R) -> Result<Vec<D::Task>>
where
    D: TaskDistribution,
    R: RngCore + ?Sized,
{
    if count == 0 {
        return Err(Error::InvalidConfig("task count must be at least 1".into()));
    }
    (0..count).map(|_| dist.sample(rng)).collect()
}
