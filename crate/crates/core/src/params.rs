//! Flat parameter vectors and the arithmetic every algorithm step uses.

use std::ops::Index;

use crate::error::{Error, Result};

/// Tolerance on `Σ weights = 1` accepted by [`weighted_average`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A dense real parameter vector of fixed dimension.
///
/// Values are immutable once built; every operation allocates its result.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self(self.0.iter().map(|v| alpha * v).collect())
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        dot(self, other)
    }

    /// In-place `self += alpha * x`.
    pub(crate) fn axpy_in_place(&mut self, alpha: f64, x: &[f64]) {
        debug_assert_eq!(self.0.len(), x.len());
        for (y, xi) in self.0.iter_mut().zip(x) {
            *y += alpha * xi;
        }
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_dims(x: &ParamVector, y: &ParamVector) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    Ok(())
}

/// Returns `alpha * x + y`.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    check_dims(x, y)?;
    if !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "axpy scale must be finite, got {alpha}"
        )));
    }
    Ok(ParamVector(
        x.0.iter().zip(&y.0).map(|(a, b)| alpha * a + b).collect(),
    ))
}

pub fn dot(x: &ParamVector, y: &ParamVector) -> Result<f64> {
    check_dims(x, y)?;
    Ok(x.0.iter().zip(&y.0).map(|(a, b)| a * b).sum())
}

/// Checks that weights are nonnegative and sum to one within [`WEIGHT_SUM_TOL`].
pub fn validate_weights(weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::WeightSum { sum });
    }
    Ok(())
}

/// `Σ weights[k] · vectors[k]`. Weights are validated, never renormalized.
pub fn weighted_average(vectors: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let first = vectors
        .first()
        .ok_or(Error::Empty("weighted_average vectors"))?;
    if vectors.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            left: vectors.len(),
            right: weights.len(),
        });
    }
    validate_weights(weights)?;
    let mut acc = ParamVector::zeros(first.dim());
    for (v, &w) in vectors.iter().zip(weights) {
        check_dims(&acc, v)?;
        acc.axpy_in_place(w, &v.0);
    }
    Ok(acc)
}
