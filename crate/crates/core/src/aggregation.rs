//! Segment-wise weighted aggregation of the local model with R mixed
//! models, plus the global weighted-mean oracle used by the FedAvg
//! baseline and by equivalence tests.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::ids::WorkerId;
use crate::params::{rebuild, Params, Segment, SegmentationScheme};
use crate::scalar::Scalar;

/// One provider of one segment: who, with what weight, and the values.
#[derive(Debug, Clone)]
pub struct SegmentProvider<'a, T> {
    pub worker: WorkerId,
    pub weight: u64,
    pub values: &'a [T],
}

/// Weighted mean of one segment over its providers.
///
/// Summation runs in ascending worker-id order so repeated runs are
/// bit-identical.
pub fn aggregate_segment<T: Scalar>(providers: &[SegmentProvider<'_, T>]) -> Result<Vec<T>> {
    if providers.is_empty() {
        return Err(CoreError::EmptyProviders);
    }
    let len = providers[0].values.len();
    let mut order: Vec<&SegmentProvider<'_, T>> = providers.iter().collect();
    order.sort_by_key(|p| p.worker);
    for w in order.windows(2) {
        if w[0].worker == w[1].worker {
            return Err(CoreError::DuplicateProvider {
                segment: 0,
                worker: w[0].worker,
            });
        }
    }
    let mut sum = vec![T::zero(); len];
    let mut total_weight = T::zero();
    for p in &order {
        if p.weight == 0 {
            return Err(CoreError::NonPositiveWeight(p.worker));
        }
        if p.values.len() != len {
            return Err(CoreError::SegmentLength {
                segment: 0,
                expected: len,
                actual: p.values.len(),
            });
        }
        let w = T::from_weight(p.weight);
        total_weight = total_weight + w;
        for (acc, v) in sum.iter_mut().zip(p.values) {
            *acc = *acc + w * *v;
        }
    }
    for acc in sum.iter_mut() {
        *acc = *acc / total_weight;
    }
    Ok(sum)
}

/// A model rebuilt from per-segment pulls; each segment remembers its
/// provider so aggregation can weight it by that worker's dataset size.
#[derive(Debug, Clone)]
pub struct MixedModel<T> {
    pub segments: Vec<Segment<T>>,
}

/// Aggregates one provider list per segment and rebuilds the result.
/// The local model, when it participates, is just another provider.
pub fn aggregate_per_segment<T: Scalar>(
    scheme: &SegmentationScheme,
    providers: &[Vec<SegmentProvider<'_, T>>],
) -> Result<Params<T>> {
    if providers.len() != scheme.num_segments() {
        return Err(CoreError::InvalidScheme(format!(
            "expected {} provider lists, got {}",
            scheme.num_segments(),
            providers.len()
        )));
    }
    let mut segments = Vec::with_capacity(providers.len());
    for (l, list) in providers.iter().enumerate() {
        let expected = scheme.segment_len(l);
        for p in list {
            if p.values.len() != expected {
                return Err(CoreError::SegmentLength {
                    segment: l,
                    expected,
                    actual: p.values.len(),
                });
            }
        }
        let values = aggregate_segment(list).map_err(|e| match e {
            CoreError::DuplicateProvider { worker, .. } => {
                CoreError::DuplicateProvider { segment: l, worker }
            }
            other => other,
        })?;
        segments.push(Segment {
            segment_index: l,
            values,
            provider: list[0].worker,
        });
    }
    rebuild(&segments, scheme)
}

/// Aggregates the local model with `mixed` replica models segment-wise
/// and rebuilds the result.
///
/// `weights` maps every provider (and the local worker) to its dataset
/// size. The same peer supplying the same segment twice is rejected.
pub fn aggregate_model<T: Scalar>(
    local: &Params<T>,
    local_worker: WorkerId,
    scheme: &SegmentationScheme,
    mixed: &[MixedModel<T>],
    weights: &BTreeMap<WorkerId, u64>,
) -> Result<Params<T>> {
    if local.dim() != scheme.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: scheme.dim(),
            actual: local.dim(),
        });
    }
    let s = scheme.num_segments();
    let mut providers: Vec<Vec<SegmentProvider<'_, T>>> = Vec::with_capacity(s);
    for l in 0..s {
        let range = scheme.range(l).clone();
        let mut list: Vec<SegmentProvider<'_, T>> = Vec::with_capacity(mixed.len() + 1);
        list.push(SegmentProvider {
            worker: local_worker,
            weight: weight_of(weights, local_worker)?,
            values: &local.values()[range.clone()],
        });
        for m in mixed {
            let seg = m
                .segments
                .iter()
                .find(|seg| seg.segment_index == l)
                .ok_or(CoreError::MissingSegment(l))?;
            list.push(SegmentProvider {
                worker: seg.provider,
                weight: weight_of(weights, seg.provider)?,
                values: &seg.values,
            });
        }
        providers.push(list);
    }
    aggregate_per_segment(scheme, &providers)
}

fn weight_of(weights: &BTreeMap<WorkerId, u64>, worker: WorkerId) -> Result<u64> {
    match weights.get(&worker) {
        Some(&w) if w > 0 => Ok(w),
        Some(_) => Err(CoreError::NonPositiveWeight(worker)),
        None => Err(CoreError::NonPositiveWeight(worker)),
    }
}

/// Coordinate-wise weighted mean over all workers. Reference
/// implementation of FedAvg aggregation; also the test oracle for the
/// full-coverage degradation case.
pub fn global_average_oracle<T: Scalar>(models: &[(u64, &Params<T>)]) -> Result<Params<T>> {
    if models.is_empty() {
        return Err(CoreError::EmptyProviders);
    }
    let dim = models[0].1.dim();
    let mut sum = vec![T::zero(); dim];
    let mut total = T::zero();
    for (weight, model) in models {
        if *weight == 0 {
            return Err(CoreError::NonPositiveWeight(WorkerId(0)));
        }
        if model.dim() != dim {
            return Err(CoreError::DimensionMismatch {
                expected: dim,
                actual: model.dim(),
            });
        }
        let w = T::from_weight(*weight);
        total = total + w;
        for (acc, v) in sum.iter_mut().zip(model.values()) {
            *acc = *acc + w * *v;
        }
    }
    for acc in sum.iter_mut() {
        *acc = *acc / total;
    }
    Params::new(sum)
}
