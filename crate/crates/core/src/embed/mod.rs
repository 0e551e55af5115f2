//! Text embeddings and the exact dense vector index.

mod hashing;
mod http;
mod index;

pub use hashing::HashEmbedder;
pub use http::{HttpEmbedder, HttpEmbedderConfig};
pub use index::{build_index, DenseIndex, IndexEntry, IndexError, SearchHit, INDEX_MAGIC, INDEX_VERSION};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::HttpError;
use crate::num::Scalar;

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<S> {
    values: Vec<S>,
}

impl<S: Scalar> Embedding<S> {
    /// L2-normalizes `values`. The all-zero vector maps to the unit vector on axis 0.
    pub fn normalized(mut values: Vec<S>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = values
            .iter()
            .fold(S::zero(), |acc, &v| acc + v * v)
            .sqrt();
        if norm == S::zero() {
            values.iter_mut().for_each(|v| *v = S::zero());
            values[0] = S::one();
        } else {
            values.iter_mut().for_each(|v| *v = *v / norm);
        }
        Ok(Self { values })
    }

    /// Wraps values assumed to be unit-norm already (index decoding).
    pub(crate) fn from_raw(values: Vec<S>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn dot(&self, other: &[S]) -> S {
        dot(&self.values, other)
    }
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Identity of an embedder: name plus a hash of its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub name: String,
    pub params_hash: String,
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.name, self.params_hash)
    }
}

impl Fingerprint {
    pub fn parse(s: &str) -> Option<Self> {
        let (name, hash) = s.rsplit_once('#')?;
        Some(Self {
            name: name.to_string(),
            params_hash: hash.to_string(),
        })
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding has no components")]
    EmptyVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("server returned {got} vectors for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("invalid embedding response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Http(#[from] HttpError),
}

impl EmbedError {
    pub fn is_external(&self) -> bool {
        matches!(self, EmbedError::Http(_))
    }
}

/// Anything that turns text into unit vectors of a fixed dimension.
pub trait Embedder<S: Scalar>: Sync {
    fn fingerprint(&self) -> Fingerprint;

    /// One vector per input, same order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, EmbedError>;

    fn embed_one(&self, text: &str) -> Result<Embedding<S>, EmbedError> {
        let mut v = self.embed_batch(&[text])?;
        v.pop().ok_or(EmbedError::CountMismatch {
            expected: 1,
            got: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vector_maps_to_axis_zero() {
        let e = Embedding::<f64>::normalized(vec![0.0; 4]).unwrap();
        assert_eq!(e.values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalization_gives_unit_norm() {
        let e = Embedding::<f32>::normalized(vec![3.0, 4.0]).unwrap();
        let n: f32 = e.values().iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(Embedding::<f64>::normalized(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn fingerprint_display_parses_back() {
        let f = Fingerprint {
            name: "hash-bow".into(),
            params_hash: "abc".into(),
        };
        assert_eq!(Fingerprint::parse(&f.to_string()), Some(f));
    }
}
