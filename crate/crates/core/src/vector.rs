//! Dense parameter vectors with a finiteness invariant.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Index;

use crate::error::{Error, Result};
use crate::math;

/// A dense, non-empty vector of finite `f64` entries.
///
/// Every constructor and arithmetic method re-checks finiteness, so a
/// `ParamVector` can never hold NaN or infinity. The length is fixed once
/// constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(index) = entries.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(entries))
    }

    pub fn from_slice(entries: &[f64]) -> Result<Self> {
        Self::new(entries.to_vec())
    }

    /// One-dimensional vector.
    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![x])
    }

    /// Zero vector of dimension `p`; `p` must be at least 1.
    pub fn zeros(p: usize) -> Result<Self> {
        Self::new(vec![0.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.0.iter()
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    /// `self + c * other`, evaluated entrywise left to right.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Self::new(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| x + c * y)
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Self::new(self.0.iter().zip(&other.0).map(|(x, y)| x + y).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Self::new(self.0.iter().zip(&other.0).map(|(x, y)| x - y).collect())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|x| c * x).collect())
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(x, y)| x * y).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.norm_sq())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Entrywise clamp to `[-bound, bound]`.
    pub fn clip_entries(&self, bound: f64) -> Result<Self> {
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "clip bound must be positive and finite, got {bound}"
            )));
        }
        Ok(Self(
            self.0.iter().map(|x| bound.min((-bound).max(*x))).collect(),
        ))
    }

    /// Sum of `vectors` in slice order.
    pub fn sum<'a, I>(p: usize, vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut acc = Self::zeros(p)?;
        for v in vectors {
            acc = acc.add(v)?;
        }
        Ok(acc)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Free-function form of [`ParamVector::clip_entries`].
pub fn clip_entries(v: &ParamVector, bound: f64) -> Result<ParamVector> {
    v.clip_entries(bound)
}
