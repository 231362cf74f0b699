//! Baselines: naive full-model gossip (the S=1 special case of the
//! segmented engine) and centralized FedAvg.

use std::collections::BTreeMap;

use crate::aggregation::global_average_oracle;
use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::gossip::LocalTrainer;
use crate::ids::WorkerId;
use crate::ModelParams;

/// Naive gossip is segmented gossip with a single segment: each pull
/// fetches a whole model. Idempotent on already-naive configs.
pub fn make_naive_gossip_config(base: &RunConfig) -> RunConfig {
    let mut cfg = base.clone();
    cfg.segments = 1;
    cfg
}

/// Centralized FedAvg: every worker runs tau local steps, uploads to
/// the server, and the server broadcasts the dataset-size-weighted
/// average back to everyone.
pub struct FedAvgState {
    pub server: WorkerId,
    pub models: BTreeMap<WorkerId, ModelParams>,
    pub weights: BTreeMap<WorkerId, u64>,
    pub round: u64,
}

impl FedAvgState {
    pub fn new(
        server: WorkerId,
        initial_model: ModelParams,
        members: &[(WorkerId, u64)],
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(CoreError::EmptyProviders);
        }
        if !members.iter().any(|&(id, _)| id == server) {
            return Err(CoreError::InvalidConfig(format!(
                "server {server} is not a member"
            )));
        }
        let mut models = BTreeMap::new();
        let mut weights = BTreeMap::new();
        for &(id, weight) in members {
            if weight == 0 {
                return Err(CoreError::NonPositiveWeight(id));
            }
            models.insert(id, initial_model.clone());
            weights.insert(id, weight);
        }
        Ok(FedAvgState {
            server,
            models,
            weights,
            round: 0,
        })
    }
}

/// One synchronous FedAvg round; returns each worker's post-update
/// (pre-averaging) model for divergence diagnostics.
pub fn fedavg_round(
    state: &mut FedAvgState,
    trainer: &mut dyn LocalTrainer,
) -> Result<BTreeMap<WorkerId, ModelParams>> {
    let round = state.round;
    let mut post_update = BTreeMap::new();
    for (&id, model) in &state.models {
        post_update.insert(id, trainer.update(id, model, round)?);
    }
    let weighted: Vec<(u64, &ModelParams)> = post_update
        .iter()
        .map(|(id, m)| (state.weights[id], m))
        .collect();
    let global = global_average_oracle(&weighted)?;
    for model in state.models.values_mut() {
        *model = global.clone();
    }
    state.round += 1;
    Ok(post_update)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Mode, TaskConfig, CONFIG_VERSION};
    use crate::netsim::NetConfig;
    use crate::tasks::{SgdConfig, SgdTrainer, Task};

    fn quad_task(n: usize) -> Task {
        Task::Quadratic(
            crate::tasks::QuadraticTask::generate(4, 1.0, 4.0, 1.0, vec![100; n], 3).unwrap(),
        )
    }

    #[test]
    fn naive_config_sets_single_segment() {
        let base = RunConfig {
            version: CONFIG_VERSION,
            n: 4,
            dim: 8,
            segments: 4,
            replicas: 2,
            mode: Mode::Gossip,
            rounds: 3,
            seed: 0,
            sgd: SgdConfig {
                alpha: 0.1,
                batch_size: 8,
                tau: 2,
            },
            task: TaskConfig::Quadratic {
                mu: 1.0,
                l: 4.0,
                center_spread: 1.0,
            },
            dataset_sizes: None,
            net: NetConfig::default(),
            churn: vec![],
            target: None,
            record_models: true,
            server: None,
        };
        let naive = make_naive_gossip_config(&base);
        assert_eq!(naive.segments, 1);
        assert_eq!(make_naive_gossip_config(&naive), naive);
    }

    #[test]
    fn single_worker_fedavg_is_plain_sgd() {
        let task = quad_task(1);
        let sgd = SgdConfig {
            alpha: 0.05,
            batch_size: 8,
            tau: 3,
        };
        let w0 = ModelParams::zeros(4).unwrap();
        let mut state =
            FedAvgState::new(WorkerId(0), w0.clone(), &[(WorkerId(0), 100)]).unwrap();
        let mut trainer = SgdTrainer::new(&task, sgd, 3);
        fedavg_round(&mut state, &mut trainer).unwrap();

        let mut solo = SgdTrainer::new(&task, sgd, 3);
        let expect = solo.update(WorkerId(0), &w0, 0).unwrap();
        assert_eq!(state.models[&WorkerId(0)].values(), expect.values());
        assert_eq!(state.round, 1);
    }

    #[test]
    fn all_workers_share_model_after_round() {
        let task = quad_task(3);
        let sgd = SgdConfig {
            alpha: 0.05,
            batch_size: 8,
            tau: 2,
        };
        let members = [(WorkerId(0), 50), (WorkerId(1), 100), (WorkerId(2), 150)];
        let mut state = FedAvgState::new(WorkerId(1), ModelParams::zeros(4).unwrap(), &members).unwrap();
        let mut trainer = SgdTrainer::new(&task, sgd, 11);
        let post = fedavg_round(&mut state, &mut trainer).unwrap();
        assert_eq!(post.len(), 3);
        let first = state.models[&WorkerId(0)].values().to_vec();
        for m in state.models.values() {
            assert_eq!(m.values(), first.as_slice());
        }
        // Average sits strictly between the per-worker extremes.
        let weighted: Vec<(u64, &ModelParams)> =
            members.iter().map(|&(id, w)| (w, &post[&id])).collect();
        let oracle = global_average_oracle(&weighted).unwrap();
        assert_eq!(oracle.values(), first.as_slice());
    }

    #[test]
    fn rejects_foreign_server() {
        let err = FedAvgState::new(WorkerId(7), ModelParams::zeros(2).unwrap(), &[(WorkerId(0), 1)]);
        assert!(err.is_err());
    }
}
