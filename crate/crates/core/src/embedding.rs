//! Unit-norm embeddings and cosine similarity.

use crate::error::{Error, Result};

/// Relative tolerance on the L2 norm of anything treated as a unit vector.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// A unit-norm embedding vector.
///
/// The only ways to obtain one are [`normalize`] and [`Embedding::from_unit`], both of
/// which establish the unit-norm invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wrap values that are already unit-norm (within [`NORM_TOLERANCE`]).
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::NotUnitNorm { norm });
        }
        Ok(Embedding(values))
    }

    /// Wrap a row that is known to be unit norm, e.g. one read back from a store.
    pub(crate) fn from_unit_unchecked(values: Vec<f64>) -> Self {
        debug_assert!((l2_norm(&values) - 1.0).abs() <= NORM_TOLERANCE);
        Embedding(values)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Scale `raw` to unit L2 norm, preserving direction.
pub fn normalize(raw: &[f64]) -> Result<Embedding> {
    if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateEmbedding);
    }
    let max_abs = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    // Norm taken on a copy pre-scaled by the largest component so squaring cannot
    // overflow or underflow.
    let scaled: Vec<f64> = raw.iter().map(|v| v / max_abs).collect();
    let norm = max_abs * l2_norm(&scaled);
    Ok(Embedding(raw.iter().map(|v| v / norm).collect()))
}

/// Cosine similarity of two unit embeddings, clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

/// [`cosine`] on raw slices that the caller guarantees are unit norm.
pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(similarity(a, b))
}

/// Clamped inner product without a length check. Symmetric in its arguments bit for bit.
#[inline]
pub(crate) fn similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// Inner product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
