//! Local-update tasks (strongly convex quadratic, logistic regression),
//! divergence meters for the gradient and aggregation divergences, and
//! the convergence-bound evaluator.
//!
//! The quadratic task has a closed-form global optimum, which makes
//! every quantity of the convergence bound measurable; logistic
//! regression supplies accuracy-style curves on a shared validation set.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregation::global_average_oracle;
use crate::error::{CoreError, Result};
use crate::gossip::LocalTrainer;
use crate::ids::WorkerId;
use crate::params::Params;
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::ModelParams;

const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Learning rate.
    pub alpha: f64,
    pub batch_size: usize,
    /// Local SGD steps between aggregations.
    pub tau: u64,
}

/// Metrics of one model on a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suboptimality: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist_to_optimum: Option<f64>,
}

/// Per-worker strongly convex quadratic: F_i(w) = (w-c_i)' A_i (w-c_i) / 2
/// with eigenvalues of A_i inside [mu, l]. Full-batch gradients are exact.
pub struct QuadraticTask {
    dim: usize,
    pub mu: f64,
    pub l_smooth: f64,
    matrices: Vec<DMatrix<f64>>,
    centers: Vec<DVector<f64>>,
    weights: Vec<u64>,
    optimum: ModelParams,
    min_loss: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl QuadraticTask {
    pub fn generate(
        dim: usize,
        mu: f64,
        l_smooth: f64,
        center_spread: f64,
        weights: Vec<u64>,
        master_seed: u64,
    ) -> Result<Self> {
        if !(mu > 0.0 && l_smooth >= mu) {
            return Err(CoreError::InvalidConfig(format!(
                "need 0 < mu <= L, got mu={mu}, L={l_smooth}"
            )));
        }
        if weights.is_empty() || weights.iter().any(|&w| w == 0) {
            return Err(CoreError::InvalidConfig(
                "dataset sizes must be positive".into(),
            ));
        }
        let n = weights.len();
        let mut matrices = Vec::with_capacity(n);
        let mut centers = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = rng::derive(master_seed, Purpose::TaskGen, WorkerId(i as u32), 0);
            let gauss = DMatrix::from_fn(dim, dim, |_, _| normal(&mut rng));
            let q = gauss.qr().q();
            let eigs =
                DVector::from_fn(dim, |_, _| rng.gen_range(0.0..=1.0) * (l_smooth - mu) + mu);
            let a = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
            // symmetrize away QR round-off
            let a = (&a + a.transpose()) * 0.5;
            let c = DVector::from_fn(dim, |_, _| normal(&mut rng) * center_spread);
            matrices.push(a);
            centers.push(c);
        }
        // W* = (sum w_i A_i)^{-1} sum w_i A_i c_i
        let mut lhs = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for i in 0..n {
            let w = weights[i] as f64;
            lhs += &matrices[i] * w;
            rhs += &matrices[i] * &centers[i] * w;
        }
        let optimum = lhs
            .cholesky()
            .ok_or_else(|| CoreError::NumericFailure("global Hessian not SPD".into()))?
            .solve(&rhs);
        let optimum = Params::new(optimum.iter().copied().collect())?;
        let mut task = QuadraticTask {
            dim,
            mu,
            l_smooth,
            matrices,
            centers,
            weights,
            optimum: optimum.clone(),
            min_loss: 0.0,
        };
        task.min_loss = task.global_loss(optimum.values());
        Ok(task)
    }

    pub fn local_gradient(&self, worker: usize, w: &[f64]) -> Vec<f64> {
        let wv = DVector::from_column_slice(w);
        let g = &self.matrices[worker] * (wv - &self.centers[worker]);
        g.iter().copied().collect()
    }

    pub fn local_loss(&self, worker: usize, w: &[f64]) -> f64 {
        let d = DVector::from_column_slice(w) - &self.centers[worker];
        0.5 * (&self.matrices[worker] * &d).dot(&d)
    }

    pub fn global_loss(&self, w: &[f64]) -> f64 {
        let total: f64 = self.weights.iter().map(|&x| x as f64).sum();
        self.weights
            .iter()
            .enumerate()
            .map(|(i, &wi)| wi as f64 * self.local_loss(i, w))
            .sum::<f64>()
            / total
    }

    pub fn optimum(&self) -> &ModelParams {
        &self.optimum
    }

    pub fn min_loss(&self) -> f64 {
        self.min_loss
    }
}

/// Binary logistic regression on two synthetic Gaussian classes.
/// Training data are split among workers without overlap; the
/// validation set is shared by every worker. The last coordinate of the
/// model is the bias (inputs carry a constant 1).
pub struct LogisticTask {
    dim: usize,
    /// Per worker: (x with appended bias 1, label in {-1, +1}).
    data: Vec<Vec<(DVector<f64>, f64)>>,
    validation: Vec<(DVector<f64>, f64)>,
    weights: Vec<u64>,
}

impl LogisticTask {
    pub fn generate(
        features: usize,
        class_separation: f64,
        samples_per_worker: Vec<u64>,
        validation_samples: usize,
        master_seed: u64,
    ) -> Result<Self> {
        if samples_per_worker.is_empty() || samples_per_worker.iter().any(|&s| s == 0) {
            return Err(CoreError::InvalidConfig(
                "samples per worker must be positive".into(),
            ));
        }
        if validation_samples == 0 {
            return Err(CoreError::InvalidConfig(
                "validation set must be non-empty".into(),
            ));
        }
        let half = class_separation / 2.0 / (features as f64).sqrt();
        let sample = |rng: &mut ChaCha8Rng| {
            let label = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mut x = DVector::zeros(features + 1);
            for k in 0..features {
                x[k] = label * half + normal(rng);
            }
            x[features] = 1.0;
            (x, label)
        };
        let mut data = Vec::with_capacity(samples_per_worker.len());
        for (i, &count) in samples_per_worker.iter().enumerate() {
            let mut rng = rng::derive(master_seed, Purpose::TaskGen, WorkerId(i as u32), 0);
            data.push((0..count).map(|_| sample(&mut rng)).collect());
        }
        let mut vrng = rng::derive(master_seed, Purpose::TaskGen, rng::GLOBAL, 0);
        let validation = (0..validation_samples).map(|_| sample(&mut vrng)).collect();
        Ok(LogisticTask {
            dim: features + 1,
            data,
            validation,
            weights: samples_per_worker,
        })
    }

    fn grad_over<'a>(
        w: &[f64],
        samples: impl Iterator<Item = &'a (DVector<f64>, f64)>,
        count: f64,
    ) -> Vec<f64> {
        let wv = DVector::from_column_slice(w);
        let mut g = DVector::zeros(w.len());
        for (x, y) in samples {
            let z = -y * wv.dot(x);
            let sigma = 1.0 / (1.0 + (-z).exp());
            g += x * (-y * sigma);
        }
        (g / count).iter().copied().collect()
    }

    fn loss_over<'a>(
        w: &[f64],
        samples: impl Iterator<Item = &'a (DVector<f64>, f64)>,
        count: f64,
    ) -> f64 {
        let wv = DVector::from_column_slice(w);
        samples
            .map(|(x, y)| {
                let a = -y * wv.dot(x);
                // stable log(1 + exp(a))
                a.max(0.0) + (-(a.abs())).exp().ln_1p()
            })
            .sum::<f64>()
            / count
    }

    pub fn local_gradient(&self, worker: usize, w: &[f64]) -> Vec<f64> {
        let set = &self.data[worker];
        Self::grad_over(w, set.iter(), set.len() as f64)
    }

    pub fn minibatch_gradient(&self, worker: usize, w: &[f64], indices: &[usize]) -> Vec<f64> {
        let set = &self.data[worker];
        Self::grad_over(w, indices.iter().map(|&i| &set[i]), indices.len() as f64)
    }

    pub fn local_loss(&self, worker: usize, w: &[f64]) -> f64 {
        let set = &self.data[worker];
        Self::loss_over(w, set.iter(), set.len() as f64)
    }

    pub fn validation_loss(&self, w: &[f64]) -> f64 {
        Self::loss_over(w, self.validation.iter(), self.validation.len() as f64)
    }

    pub fn validation_accuracy(&self, w: &[f64]) -> f64 {
        let wv = DVector::from_column_slice(w);
        let correct = self
            .validation
            .iter()
            .filter(|(x, y)| wv.dot(x) * y > 0.0)
            .count();
        correct as f64 / self.validation.len() as f64
    }
}

/// A pluggable learning task.
pub enum Task {
    Quadratic(QuadraticTask),
    Logistic(LogisticTask),
}

impl Task {
    pub fn dim(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.dim,
            Task::Logistic(t) => t.dim,
        }
    }

    pub fn num_workers(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.weights.len(),
            Task::Logistic(t) => t.weights.len(),
        }
    }

    pub fn weights(&self) -> &[u64] {
        match self {
            Task::Quadratic(t) => &t.weights,
            Task::Logistic(t) => &t.weights,
        }
    }

    /// Full-batch local gradient of worker `i` at `w`.
    pub fn local_gradient(&self, worker: usize, w: &[f64]) -> Vec<f64> {
        match self {
            Task::Quadratic(t) => t.local_gradient(worker, w),
            Task::Logistic(t) => t.local_gradient(worker, w),
        }
    }

    /// |D|-weighted global gradient at `w`.
    pub fn global_gradient(&self, w: &[f64]) -> Vec<f64> {
        let weights = self.weights();
        let total: f64 = weights.iter().map(|&x| x as f64).sum();
        let mut g = vec![0.0; w.len()];
        for (i, &wi) in weights.iter().enumerate() {
            let gi = self.local_gradient(i, w);
            for (acc, v) in g.iter_mut().zip(gi) {
                *acc += wi as f64 / total * v;
            }
        }
        g
    }

    pub fn optimum(&self) -> Option<&ModelParams> {
        match self {
            Task::Quadratic(t) => Some(&t.optimum),
            Task::Logistic(_) => None,
        }
    }

    /// Deterministic metrics on the global objective / shared validation set.
    pub fn evaluate(&self, model: &ModelParams) -> Result<Metrics> {
        if model.dim() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                actual: model.dim(),
            });
        }
        Ok(match self {
            Task::Quadratic(t) => {
                let loss = t.global_loss(model.values());
                Metrics {
                    loss,
                    accuracy: None,
                    suboptimality: Some(loss - t.min_loss),
                    dist_to_optimum: Some(model.distance(&t.optimum)),
                }
            }
            Task::Logistic(t) => Metrics {
                loss: t.validation_loss(model.values()),
                accuracy: Some(t.validation_accuracy(model.values())),
                suboptimality: None,
                dist_to_optimum: None,
            },
        })
    }
}

struct MinibatchState {
    rng: ChaCha8Rng,
    perm: Vec<usize>,
    cursor: usize,
}

impl MinibatchState {
    fn new(master_seed: u64, worker: WorkerId, len: usize) -> Self {
        MinibatchState {
            rng: rng::derive(master_seed, Purpose::Minibatch, worker, 0),
            perm: (0..len).collect(),
            // force a shuffle before the first batch
            cursor: len,
        }
    }

    fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let take = batch_size.min(self.perm.len());
        if self.cursor + take > self.perm.len() {
            self.perm.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.perm[self.cursor..self.cursor + take].to_vec();
        self.cursor += take;
        batch
    }
}

/// Runs the per-round local updates: tau SGD steps per worker. The
/// quadratic task uses exact full-batch gradients; the logistic task
/// draws seeded minibatches with a reshuffle per epoch.
pub struct SgdTrainer<'a> {
    task: &'a Task,
    sgd: SgdConfig,
    master_seed: u64,
    minibatch: BTreeMap<WorkerId, MinibatchState>,
    /// When set, every point at which a local gradient is evaluated is
    /// recorded (for the empirical gradient-divergence meter).
    pub collect_iterates: bool,
    pub visited: Vec<Vec<f64>>,
}

impl<'a> SgdTrainer<'a> {
    pub fn new(task: &'a Task, sgd: SgdConfig, master_seed: u64) -> Self {
        SgdTrainer {
            task,
            sgd,
            master_seed,
            minibatch: BTreeMap::new(),
            collect_iterates: false,
            visited: Vec::new(),
        }
    }
}

impl LocalTrainer for SgdTrainer<'_> {
    fn update(&mut self, worker: WorkerId, model: &ModelParams, _round: u64) -> Result<ModelParams> {
        let i = worker.index();
        if i >= self.task.num_workers() {
            return Err(CoreError::InvalidConfig(format!(
                "no task data for worker {worker}"
            )));
        }
        let mut w = model.values().to_vec();
        for _ in 0..self.sgd.tau {
            if self.collect_iterates {
                self.visited.push(w.clone());
            }
            let grad = match self.task {
                Task::Quadratic(t) => t.local_gradient(i, &w),
                Task::Logistic(t) => {
                    let len = t.data[i].len();
                    let state = self
                        .minibatch
                        .entry(worker)
                        .or_insert_with(|| MinibatchState::new(self.master_seed, worker, len));
                    let batch = state.next_batch(self.sgd.batch_size);
                    t.minibatch_gradient(i, &w, &batch)
                }
            };
            let mut norm2 = 0.0;
            for (wk, g) in w.iter_mut().zip(grad) {
                *wk -= self.sgd.alpha * g;
                norm2 += *wk * *wk;
            }
            if !norm2.is_finite() || norm2.sqrt() > DIVERGENCE_LIMIT {
                return Err(CoreError::NumericFailure(format!(
                    "model norm exceeded {DIVERGENCE_LIMIT:e} on worker {worker}"
                )));
            }
        }
        Params::new(w)
    }
}

/// Empirical gradient divergence: max over workers and sample points of
/// the gap between the local and the |D|-weighted global gradient.
pub fn measure_delta(task: &Task, points: &[Vec<f64>]) -> f64 {
    let mut delta: f64 = 0.0;
    for p in points {
        let global = task.global_gradient(p);
        for i in 0..task.num_workers() {
            let local = task.local_gradient(i, p);
            let gap = local
                .iter()
                .zip(&global)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            delta = delta.max(gap);
        }
    }
    delta
}

/// One round's models for the aggregation-divergence meter.
pub struct RoundModels {
    /// Post-update models with weights; the inputs both aggregations see.
    pub post_update: Vec<(u64, ModelParams)>,
    /// Each worker's partial (segment-gossip) aggregation result.
    pub post_aggregation: Vec<ModelParams>,
}

/// Empirical aggregation divergence: max over rounds and workers of the
/// distance between the partial aggregate and the full weighted mean of
/// the same inputs.
pub fn measure_rho(rounds: &[RoundModels]) -> Result<f64> {
    let mut rho: f64 = 0.0;
    for round in rounds {
        let refs: Vec<(u64, &ModelParams)> =
            round.post_update.iter().map(|(w, m)| (*w, m)).collect();
        let oracle = global_average_oracle(&refs)?;
        for m in &round.post_aggregation {
            rho = rho.max(m.distance(&oracle));
        }
    }
    Ok(rho)
}

/// Parameters of the convergence-bound evaluator.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams<T> {
    pub mu: T,
    pub l_smooth: T,
    pub alpha: T,
    pub tau: u64,
    pub delta: T,
    pub rho: T,
    /// Initial distance to the optimum, ||W_0 - W*||.
    pub d0: T,
}

/// Upper bound on ||W_{t,i} - W*|| after `t` aggregation rounds:
///
/// theta^{t*tau} * d0 + (1 - theta^{t*tau}) * [rho/(1-theta^tau) + alpha*delta/(1-theta)]
///
/// with theta = 1 - alpha*mu. The exponent counts total SGD steps.
pub fn theorem1_bound<T: Scalar>(p: &BoundParams<T>, t: u64) -> Result<T> {
    let one = T::one();
    let zero = T::zero();
    if !(p.mu > zero && p.l_smooth >= p.mu) {
        return Err(CoreError::InvalidBound("need 0 < mu <= L".into()));
    }
    if !(p.alpha > zero && p.alpha <= one / p.l_smooth) {
        return Err(CoreError::InvalidBound("need 0 < alpha <= 1/L".into()));
    }
    if p.delta < zero || p.rho < zero || p.d0 < zero {
        return Err(CoreError::InvalidBound(
            "delta, rho, d0 must be non-negative".into(),
        ));
    }
    if p.tau == 0 {
        return Err(CoreError::InvalidBound("tau must be positive".into()));
    }
    let theta = one - p.alpha * p.mu;
    if theta <= zero || theta >= one {
        return Err(CoreError::InvalidBound(format!(
            "theta = 1 - alpha*mu = {theta} outside (0, 1)"
        )));
    }
    let theta_tau = theta.powf(T::from_weight(p.tau));
    let theta_ttau = theta.powf(T::from_weight(t) * T::from_weight(p.tau));
    let limit = p.rho / (one - theta_tau) + p.alpha * p.delta / (one - theta);
    Ok(theta_ttau * p.d0 + (one - theta_ttau) * limit)
}
