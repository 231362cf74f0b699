//! The segmented-gossip worker state machine: pull planning, segment
//! exchange, segment-wise aggregation, and churn handling.
//!
//! Rounds are bulk-synchronous: every alive worker finishes its local
//! update and aggregation for round `t` before any worker begins round
//! `t+1`. Wall-clock skew between workers is modelled separately by
//! [`crate::netsim`].

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_per_segment, SegmentProvider};
use crate::error::{CoreError, Result};
use crate::ids::WorkerId;
use crate::params::SegmentationScheme;
use crate::rng::{self, Purpose};
use crate::ModelParams;

/// Local-update hook; implemented by the learning tasks.
pub trait LocalTrainer {
    fn update(&mut self, worker: WorkerId, model: &ModelParams, round: u64) -> Result<ModelParams>;
}

/// One pulling request: requester asks `target` for `(segment, replica)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullRequest {
    pub requester: WorkerId,
    pub target: WorkerId,
    pub segment_index: usize,
    pub replica_index: usize,
    pub round: u64,
}

/// The S x R requests one worker issues for one round.
#[derive(Debug, Clone, Default)]
pub struct PullPlan {
    pub requests: Vec<PullRequest>,
}

/// Plans the S x R pulls for one worker.
///
/// Targets are drawn by shuffling the peer pool and consuming it
/// without replacement, refilling with a fresh shuffle when exhausted.
/// Within one segment the R targets are forced distinct, and when
/// `S*R <= |peers|` all targets end up pairwise distinct.
pub fn plan_pulls(
    worker: WorkerId,
    alive_peers: &BTreeSet<WorkerId>,
    num_segments: usize,
    replicas: usize,
    round: u64,
    rng: &mut impl Rng,
) -> Result<PullPlan> {
    if replicas == 0 {
        return Ok(PullPlan::default());
    }
    if alive_peers.len() < replicas {
        return Err(CoreError::InsufficientPeers {
            needed: replicas,
            available: alive_peers.len(),
        });
    }
    let peers: Vec<WorkerId> = alive_peers.iter().copied().filter(|p| *p != worker).collect();
    if peers.len() < replicas {
        return Err(CoreError::InsufficientPeers {
            needed: replicas,
            available: peers.len(),
        });
    }
    let mut pool = peers.clone();
    pool.shuffle(rng);
    let mut providers: Vec<BTreeSet<WorkerId>> = vec![BTreeSet::new(); num_segments];
    let mut requests = Vec::with_capacity(num_segments * replicas);
    for replica_index in 0..replicas {
        for (segment_index, taken) in providers.iter_mut().enumerate() {
            let pos = loop {
                match pool.iter().rposition(|t| !taken.contains(t)) {
                    Some(pos) => break pos,
                    None => {
                        // Pool exhausted (or nothing eligible left in the
                        // remainder): refill behind the current remainder.
                        let mut fresh = peers.clone();
                        fresh.shuffle(rng);
                        pool.splice(0..0, fresh);
                    }
                }
            };
            let target = pool.remove(pos);
            taken.insert(target);
            requests.push(PullRequest {
                requester: worker,
                target,
                segment_index,
                replica_index,
                round,
            });
        }
    }
    Ok(PullPlan { requests })
}

/// Picks a replacement target for a failed request: uniform over alive
/// peers that are not already providing that segment this round.
/// Returns `None` when no eligible replacement exists; the round then
/// proceeds with fewer replicas for that segment.
pub fn handle_peer_failure(
    failed: &PullRequest,
    alive_peers: &BTreeSet<WorkerId>,
    current_providers: &BTreeSet<WorkerId>,
    rng: &mut impl Rng,
) -> Option<PullRequest> {
    let candidates: Vec<WorkerId> = alive_peers
        .iter()
        .copied()
        .filter(|p| {
            *p != failed.requester && *p != failed.target && !current_providers.contains(p)
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let target = candidates[rng.gen_range(0..candidates.len())];
    Some(PullRequest {
        target,
        ..failed.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Updating,
    AwaitingSegments,
    Aggregating,
    Offline,
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: WorkerId,
    pub model: ModelParams,
    /// Dataset size |D_i|, used as the aggregation weight.
    pub weight: u64,
    pub round: u64,
    pub phase: Phase,
    /// Peers this worker currently believes to be offline.
    pub offline_flags: BTreeSet<WorkerId>,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChurnKind {
    Join,
    GracefulLeave,
    Crash,
    Recover,
}

/// A scripted membership change, applied at the given round boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub kind: ChurnKind,
    pub worker: WorkerId,
    pub round: u64,
    /// Dataset size for joining workers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<u64>,
}

/// Provider of one (segment, replica) slot in a worker's round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderEntry {
    pub segment: usize,
    pub replica: usize,
    pub provider: WorkerId,
}

/// Per-worker result of one bulk-synchronous round.
#[derive(Debug, Clone)]
pub struct RoundWorkerOutcome {
    pub worker: WorkerId,
    pub providers: Vec<ProviderEntry>,
    pub warnings: Vec<String>,
    pub post_update: ModelParams,
    pub post_aggregation: ModelParams,
}

/// Result of a newcomer's segment-pulled bootstrap.
#[derive(Debug, Clone)]
pub struct JoinOutcome {
    pub worker: WorkerId,
    pub providers: Vec<ProviderEntry>,
    pub model: ModelParams,
}

/// The whole federation, advanced one bulk-synchronous round at a time.
pub struct Federation {
    scheme: SegmentationScheme,
    replicas: usize,
    master_seed: u64,
    pub workers: BTreeMap<WorkerId, WorkerState>,
    pub round: u64,
}

impl Federation {
    /// All workers start with identical initial parameters; the
    /// initializing coordinator plays no further role.
    pub fn new(
        scheme: SegmentationScheme,
        replicas: usize,
        master_seed: u64,
        initial_model: ModelParams,
        members: &[(WorkerId, u64)],
    ) -> Result<Self> {
        if initial_model.dim() != scheme.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: scheme.dim(),
                actual: initial_model.dim(),
            });
        }
        let mut workers = BTreeMap::new();
        for &(id, weight) in members {
            if weight == 0 {
                return Err(CoreError::NonPositiveWeight(id));
            }
            workers.insert(
                id,
                WorkerState {
                    id,
                    model: initial_model.clone(),
                    weight,
                    round: 0,
                    phase: Phase::Updating,
                    offline_flags: BTreeSet::new(),
                    alive: true,
                },
            );
        }
        Ok(Federation {
            scheme,
            replicas,
            master_seed,
            workers,
            round: 0,
        })
    }

    pub fn scheme(&self) -> &SegmentationScheme {
        &self.scheme
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn alive_ids(&self) -> BTreeSet<WorkerId> {
        self.workers
            .values()
            .filter(|w| w.alive)
            .map(|w| w.id)
            .collect()
    }

    fn weights(&self) -> BTreeMap<WorkerId, u64> {
        self.workers.values().map(|w| (w.id, w.weight)).collect()
    }

    /// Applies one scripted membership change. `Join` events must go
    /// through [`Federation::join_worker`] so the caller sees the
    /// bootstrap outcome.
    pub fn apply_churn(&mut self, event: &ChurnEvent) -> Result<Option<JoinOutcome>> {
        match event.kind {
            ChurnKind::Join => {
                let weight = event.weight.unwrap_or(1);
                self.join_worker(event.worker, weight).map(Some)
            }
            ChurnKind::GracefulLeave => {
                // A graceful leaver wipes its record; peers drop it from
                // their lists immediately.
                self.workers.remove(&event.worker);
                for w in self.workers.values_mut() {
                    w.offline_flags.remove(&event.worker);
                }
                Ok(None)
            }
            ChurnKind::Crash => {
                if let Some(w) = self.workers.get_mut(&event.worker) {
                    w.alive = false;
                    w.phase = Phase::Offline;
                }
                Ok(None)
            }
            ChurnKind::Recover => {
                if let Some(w) = self.workers.get_mut(&event.worker) {
                    w.alive = true;
                    w.phase = Phase::Updating;
                    w.round = self.round;
                }
                Ok(None)
            }
        }
    }

    /// Admits a newcomer: it pulls S x R segments from alive members,
    /// aggregates them without a local term, adopts the result, and
    /// enters Updating at the federation's current round.
    pub fn join_worker(&mut self, id: WorkerId, weight: u64) -> Result<JoinOutcome> {
        if weight == 0 {
            return Err(CoreError::NonPositiveWeight(id));
        }
        if self.workers.contains_key(&id) {
            return Err(CoreError::InvalidConfig(format!(
                "worker {id} already exists"
            )));
        }
        let alive = self.alive_ids();
        if alive.len() < self.replicas {
            return Err(CoreError::InsufficientPeers {
                needed: self.replicas,
                available: alive.len(),
            });
        }
        let mut rng = rng::derive(self.master_seed, Purpose::JoinPull, id, self.round);
        // A joiner always needs at least one provider per segment.
        let replicas = self.replicas.max(1);
        let plan = plan_pulls(
            id,
            &alive,
            self.scheme.num_segments(),
            replicas,
            self.round,
            &mut rng,
        )?;
        let weights = self.weights();
        let mut providers: Vec<Vec<SegmentProvider<'_, f64>>> =
            vec![Vec::new(); self.scheme.num_segments()];
        let mut entries = Vec::with_capacity(plan.requests.len());
        for req in &plan.requests {
            let range = self.scheme.range(req.segment_index).clone();
            let peer = &self.workers[&req.target];
            providers[req.segment_index].push(SegmentProvider {
                worker: req.target,
                weight: weights[&req.target],
                values: &peer.model.values()[range],
            });
            entries.push(ProviderEntry {
                segment: req.segment_index,
                replica: req.replica_index,
                provider: req.target,
            });
        }
        let model = aggregate_per_segment(&self.scheme, &providers)?;
        self.workers.insert(
            id,
            WorkerState {
                id,
                model: model.clone(),
                weight,
                round: self.round,
                phase: Phase::Updating,
                offline_flags: BTreeSet::new(),
                alive: true,
            },
        );
        Ok(JoinOutcome {
            worker: id,
            providers: entries,
            model,
        })
    }

    /// Runs one bulk-synchronous round for every alive worker: local
    /// update, segment exchange against peers' post-update models, and
    /// segment-wise aggregation.
    pub fn step_round(&mut self, trainer: &mut dyn LocalTrainer) -> Result<Vec<RoundWorkerOutcome>> {
        let round = self.round;
        let alive: Vec<WorkerId> = self.alive_ids().into_iter().collect();
        let truly_alive: BTreeSet<WorkerId> = alive.iter().copied().collect();

        // (1) Local update.
        let mut post_update: BTreeMap<WorkerId, ModelParams> = BTreeMap::new();
        for &id in &alive {
            let w = self.workers.get_mut(&id).unwrap();
            w.phase = Phase::Updating;
            let updated = trainer.update(id, &w.model, round)?;
            post_update.insert(id, updated);
        }

        let weights = self.weights();
        let known: BTreeSet<WorkerId> = self.workers.keys().copied().collect();

        // (2)+(3) Plan pulls and resolve them against peers' post-update
        // models; failed contacts are re-routed. (4) Aggregate.
        let mut outcomes = Vec::with_capacity(alive.len());
        let mut new_flags: BTreeMap<WorkerId, (Vec<WorkerId>, Vec<WorkerId>)> = BTreeMap::new();
        for &id in &alive {
            let state = &self.workers[&id];
            // The worker's view: everyone it knows about and does not
            // believe offline. Undetected crashes are still in here.
            let view: BTreeSet<WorkerId> = known
                .iter()
                .copied()
                .filter(|p| *p != id && !state.offline_flags.contains(p))
                .collect();
            let replicas = self.replicas.min(view.len());
            let mut plan_rng = rng::derive(self.master_seed, Purpose::PullPlan, id, round);
            let plan = plan_pulls(
                id,
                &view,
                self.scheme.num_segments(),
                replicas,
                round,
                &mut plan_rng,
            )?;

            let mut reroute_rng = rng::derive(self.master_seed, Purpose::Reroute, id, round);
            let mut resolved: Vec<PullRequest> = Vec::with_capacity(plan.requests.len());
            let mut warnings = Vec::new();
            let mut flagged = Vec::new();
            let mut cleared = Vec::new();
            // Targets that will certainly provide a segment (alive and
            // already planned) must be off-limits to re-routes, even
            // before their own request is resolved.
            let mut taken: Vec<BTreeSet<WorkerId>> =
                vec![BTreeSet::new(); self.scheme.num_segments()];
            for req in &plan.requests {
                if truly_alive.contains(&req.target) {
                    taken[req.segment_index].insert(req.target);
                }
            }
            for req in &plan.requests {
                let mut req = req.clone();
                loop {
                    if truly_alive.contains(&req.target) {
                        // Contact succeeded; a stale offline flag is
                        // cleared on reestablished communication.
                        if state.offline_flags.contains(&req.target) {
                            cleared.push(req.target);
                        }
                        taken[req.segment_index].insert(req.target);
                        resolved.push(req);
                        break;
                    }
                    flagged.push(req.target);
                    match handle_peer_failure(
                        &req,
                        &truly_alive,
                        &taken[req.segment_index],
                        &mut reroute_rng,
                    ) {
                        Some(replacement) => {
                            warnings.push(format!(
                                "request ({},{}) re-routed from {} to {}",
                                req.segment_index, req.replica_index, req.target,
                                replacement.target
                            ));
                            req = replacement;
                        }
                        None => {
                            warnings.push(format!(
                                "segment {} replica {}: no eligible replacement for {}, \
                                 proceeding with fewer replicas",
                                req.segment_index, req.replica_index, req.target
                            ));
                            break;
                        }
                    }
                }
            }

            // (4) Segment-wise aggregation with the local model included.
            let local = &post_update[&id];
            let mut providers: Vec<Vec<SegmentProvider<'_, f64>>> =
                Vec::with_capacity(self.scheme.num_segments());
            for l in 0..self.scheme.num_segments() {
                let range = self.scheme.range(l).clone();
                providers.push(vec![SegmentProvider {
                    worker: id,
                    weight: weights[&id],
                    values: &local.values()[range],
                }]);
            }
            let mut entries = Vec::with_capacity(resolved.len());
            for req in &resolved {
                let range = self.scheme.range(req.segment_index).clone();
                providers[req.segment_index].push(SegmentProvider {
                    worker: req.target,
                    weight: weights[&req.target],
                    values: &post_update[&req.target].values()[range],
                });
                entries.push(ProviderEntry {
                    segment: req.segment_index,
                    replica: req.replica_index,
                    provider: req.target,
                });
            }
            let aggregated = aggregate_per_segment(&self.scheme, &providers)?;
            new_flags.insert(id, (flagged, cleared));
            outcomes.push(RoundWorkerOutcome {
                worker: id,
                providers: entries,
                warnings,
                post_update: local.clone(),
                post_aggregation: aggregated,
            });
        }

        // Commit: models, offline flags, round counters.
        for outcome in &outcomes {
            let w = self.workers.get_mut(&outcome.worker).unwrap();
            w.model = outcome.post_aggregation.clone();
            w.round = round + 1;
            w.phase = Phase::Updating;
            let (flagged, cleared) = &new_flags[&outcome.worker];
            for f in flagged {
                w.offline_flags.insert(*f);
            }
            for c in cleared {
                w.offline_flags.remove(c);
            }
        }
        // Serving a pull is also a successful contact: the provider
        // learns the requester is back online.
        for outcome in &outcomes {
            for entry in &outcome.providers {
                if let Some(provider) = self.workers.get_mut(&entry.provider) {
                    provider.offline_flags.remove(&outcome.worker);
                }
            }
        }
        self.round = round + 1;
        Ok(outcomes)
    }
}
