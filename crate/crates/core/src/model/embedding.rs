use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fixed-dimension real vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>", bound = "T: Scalar")]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    /// Builds a unit-length vector from `values`.
    pub fn normalized(values: Vec<T>) -> Result<Self> {
        l2_normalize(&Self::new(values)?)
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn expect_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: self.dim(),
            });
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for EmbeddingVector<T> {
    type Error = Error;

    fn try_from(values: Vec<T>) -> Result<Self> {
        Self::new(values)
    }
}

impl<T> From<EmbeddingVector<T>> for Vec<T> {
    fn from(v: EmbeddingVector<T>) -> Self {
        v.values
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn clamp_unit<T: Scalar>(v: T) -> T {
    v.max(-T::one()).min(T::one())
}

/// Cosine similarity `a·b / (|a||b|)`, clamped to [-1, 1].
pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    a.expect_dim(b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroNorm);
    }
    Ok(clamp_unit(dot(a.as_slice(), b.as_slice()) / (na * nb)))
}

pub fn l2_normalize<T: Scalar>(a: &EmbeddingVector<T>) -> Result<EmbeddingVector<T>> {
    let n = a.norm();
    if n == T::zero() {
        return Err(Error::ZeroNorm);
    }
    Ok(EmbeddingVector {
        values: a.values.iter().map(|&v| v / n).collect(),
    })
}

/// Normalizes `a` unless it is already unit length within 1e-6, in which case
/// it is returned unchanged so repeated ingestion is bit-stable.
pub(crate) fn ingest_unit<T: Scalar>(a: &EmbeddingVector<T>) -> Result<EmbeddingVector<T>> {
    let n = a.norm();
    if (n - T::one()).abs() <= T::of(1e-6) {
        Ok(a.clone())
    } else {
        l2_normalize(a)
    }
}
