//! Flat model-parameter vectors, the segmentation scheme, and the
//! split/rebuild pair used to assemble mixed models from segments.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ids::WorkerId;
use crate::scalar::Scalar;

/// A model as a flat vector of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    values: Vec<T>,
}

impl<T: Scalar> Params<T> {
    /// Builds a parameter vector, rejecting empty or non-finite input.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(CoreError::InvalidConfig(
                "model dimension must be positive".into(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(i));
        }
        Ok(Params { values })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Euclidean distance to another vector of the same dimension.
    pub fn distance(&self, other: &Params<T>) -> T {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            .sqrt()
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|a| *a * *a).sum::<T>().sqrt()
    }
}

/// S contiguous half-open index ranges partitioning `[0, dim)`.
///
/// The canonical equal split: segment `l` has length `floor(dim/S)+1`
/// for `l < dim mod S`, else `floor(dim/S)`. All workers in a run share
/// the same scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationScheme {
    dim: usize,
    boundaries: Vec<Range<usize>>,
}

impl SegmentationScheme {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len()
    }

    pub fn range(&self, segment_index: usize) -> &Range<usize> {
        &self.boundaries[segment_index]
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.boundaries
    }

    pub fn segment_len(&self, segment_index: usize) -> usize {
        self.boundaries[segment_index].len()
    }
}

/// Builds the canonical equal-split scheme with the remainder spread
/// over the lowest-index segments.
pub fn make_scheme(dim: usize, num_segments: usize) -> Result<SegmentationScheme> {
    if num_segments == 0 {
        return Err(CoreError::InvalidScheme("S must be positive".into()));
    }
    if num_segments > dim {
        return Err(CoreError::InvalidScheme(format!(
            "S = {num_segments} exceeds dim = {dim}"
        )));
    }
    let base = dim / num_segments;
    let remainder = dim % num_segments;
    let mut boundaries = Vec::with_capacity(num_segments);
    let mut start = 0;
    for l in 0..num_segments {
        let len = if l < remainder { base + 1 } else { base };
        boundaries.push(start..start + len);
        start += len;
    }
    debug_assert_eq!(start, dim);
    Ok(SegmentationScheme { dim, boundaries })
}

/// One segment of a model, tagged with the worker that supplied it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment<T> {
    pub segment_index: usize,
    pub values: Vec<T>,
    pub provider: WorkerId,
}

/// Splits a model into segments per the scheme. Concatenating the
/// returned values in index order reproduces the model bit-identically.
pub fn split<T: Scalar>(
    model: &Params<T>,
    scheme: &SegmentationScheme,
    owner: WorkerId,
) -> Result<Vec<Segment<T>>> {
    if model.dim() != scheme.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: scheme.dim(),
            actual: model.dim(),
        });
    }
    Ok(scheme
        .ranges()
        .iter()
        .enumerate()
        .map(|(l, r)| Segment {
            segment_index: l,
            values: model.values()[r.clone()].to_vec(),
            provider: owner,
        })
        .collect())
}

/// Rebuilds a (possibly mixed) model from exactly one segment per index.
/// Segment order does not matter; providers may differ per segment.
pub fn rebuild<T: Scalar>(
    segments: &[Segment<T>],
    scheme: &SegmentationScheme,
) -> Result<Params<T>> {
    let s = scheme.num_segments();
    let mut seen = vec![false; s];
    let mut values = vec![T::zero(); scheme.dim()];
    for seg in segments {
        if seg.segment_index >= s {
            return Err(CoreError::MissingSegment(seg.segment_index));
        }
        if seen[seg.segment_index] {
            return Err(CoreError::DuplicateSegment(seg.segment_index));
        }
        let range = scheme.range(seg.segment_index).clone();
        if seg.values.len() != range.len() {
            return Err(CoreError::SegmentLength {
                segment: seg.segment_index,
                expected: range.len(),
                actual: seg.values.len(),
            });
        }
        values[range].copy_from_slice(&seg.values);
        seen[seg.segment_index] = true;
    }
    if let Some(l) = seen.iter().position(|s| !s) {
        return Err(CoreError::MissingSegment(l));
    }
    Params::new(values)
}
