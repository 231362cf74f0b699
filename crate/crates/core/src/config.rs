//! Run configuration: one structured JSON file, every knob named, with
//! the experiment defaults (S=10, R=2, tau=40, alpha=0.1, batch 128,
//! 10/100 Mbps) baked in.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::gossip::{ChurnEvent, ChurnKind};
use crate::ids::WorkerId;
use crate::netsim::NetConfig;
use crate::tasks::{LogisticTask, QuadraticTask, SgdConfig, Task};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Combo,
    Gossip,
    Fedavg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskConfig {
    Quadratic {
        #[serde(default = "default_mu")]
        mu: f64,
        #[serde(default = "default_l")]
        l: f64,
        #[serde(default = "default_spread")]
        center_spread: f64,
    },
    Logistic {
        features: usize,
        #[serde(default = "default_separation")]
        class_separation: f64,
        #[serde(default = "default_validation")]
        validation_samples: usize,
    },
}

fn default_mu() -> f64 {
    1.0
}
fn default_l() -> f64 {
    10.0
}
fn default_spread() -> f64 {
    1.0
}
fn default_separation() -> f64 {
    2.0
}
fn default_validation() -> usize {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMetric {
    Loss,
    Accuracy,
    Suboptimality,
}

/// Convergence goal: loss/suboptimality cross downward, accuracy upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub metric: TargetMetric,
    pub value: f64,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_segments() -> usize {
    10
}
fn default_replicas() -> usize {
    2
}
fn default_sgd() -> SgdConfig {
    SgdConfig {
        alpha: 0.1,
        batch_size: 128,
        tau: 40,
    }
}
fn default_weight() -> u64 {
    100
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Initial number of workers (ids 0..n-1).
    pub n: u32,
    pub dim: usize,
    /// S: model segments.
    #[serde(default = "default_segments")]
    pub segments: usize,
    /// R: mixed-model replicas pulled per round.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub mode: Mode,
    pub rounds: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sgd")]
    pub sgd: SgdConfig,
    pub task: TaskConfig,
    /// |D_i| per initial worker; uniform 100 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_sizes: Option<Vec<u64>>,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub churn: Vec<ChurnEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    /// Record full model vectors in the trace (needed by the
    /// divergence meters; heavy for large dims).
    #[serde(default = "default_true")]
    pub record_models: bool,
    /// FedAvg server; seeded random member when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<WorkerId>,
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CoreError::InvalidConfig(format!(
                "unknown config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        if self.n == 0 {
            return Err(CoreError::InvalidConfig("n must be positive".into()));
        }
        if self.dim == 0 {
            return Err(CoreError::InvalidConfig("dim must be positive".into()));
        }
        if self.segments == 0 || self.segments > self.dim {
            return Err(CoreError::InvalidConfig(format!(
                "segments must satisfy 1 <= S <= dim, got S={}, dim={}",
                self.segments, self.dim
            )));
        }
        match self.mode {
            Mode::Combo | Mode::Gossip => {
                if self.n > 1 && self.replicas > self.n as usize - 1 {
                    return Err(CoreError::InvalidConfig(format!(
                        "replicas must satisfy R <= n-1, got R={}, n={}",
                        self.replicas, self.n
                    )));
                }
                if self.n == 1 && self.replicas > 0 {
                    return Err(CoreError::InvalidConfig(
                        "a single-worker federation requires R=0".into(),
                    ));
                }
            }
            Mode::Fedavg => {
                if let Some(server) = self.server {
                    if server.index() >= self.n as usize {
                        return Err(CoreError::InvalidConfig(format!(
                            "server {server} is not an initial worker"
                        )));
                    }
                }
                if !self.churn.is_empty() {
                    return Err(CoreError::InvalidConfig(
                        "churn scripts are only supported for combo/gossip".into(),
                    ));
                }
            }
        }
        if self.sgd.alpha <= 0.0 || self.sgd.batch_size == 0 || self.sgd.tau == 0 {
            return Err(CoreError::InvalidConfig(
                "sgd parameters must be positive".into(),
            ));
        }
        if let TaskConfig::Quadratic { mu, l, .. } = self.task {
            if !(mu > 0.0 && l >= mu) {
                return Err(CoreError::InvalidConfig(
                    "quadratic task requires 0 < mu <= L".into(),
                ));
            }
        }
        if let TaskConfig::Logistic { features, .. } = self.task {
            if features + 1 != self.dim {
                return Err(CoreError::InvalidConfig(format!(
                    "logistic task: dim must be features+1 (bias), got dim={}, features={features}",
                    self.dim
                )));
            }
        }
        if let Some(sizes) = &self.dataset_sizes {
            if sizes.len() != self.n as usize {
                return Err(CoreError::InvalidConfig(format!(
                    "dataset_sizes must list all {} initial workers",
                    self.n
                )));
            }
            if sizes.iter().any(|&s| s == 0) {
                return Err(CoreError::InvalidConfig(
                    "dataset sizes must be positive".into(),
                ));
            }
        }
        self.net.validate()?;
        self.validate_churn()?;
        if let Some(t) = &self.target {
            if t.metric == TargetMetric::Accuracy
                && !matches!(self.task, TaskConfig::Logistic { .. })
            {
                return Err(CoreError::InvalidConfig(
                    "accuracy targets require the logistic task".into(),
                ));
            }
        }
        Ok(())
    }

    fn validate_churn(&self) -> Result<()> {
        let mut members: BTreeSet<WorkerId> = (0..self.n).map(WorkerId).collect();
        let mut last_round = 0;
        for ev in &self.churn {
            if ev.round < last_round {
                return Err(CoreError::InvalidConfig(
                    "churn events must be ordered by round".into(),
                ));
            }
            last_round = ev.round;
            if ev.round > self.rounds {
                return Err(CoreError::InvalidConfig(format!(
                    "churn event at round {} beyond the run's {} rounds",
                    ev.round, self.rounds
                )));
            }
            match ev.kind {
                ChurnKind::Join => {
                    if !members.insert(ev.worker) {
                        return Err(CoreError::InvalidConfig(format!(
                            "join of existing worker {}",
                            ev.worker
                        )));
                    }
                    if ev.weight == Some(0) {
                        return Err(CoreError::InvalidConfig(
                            "join weight must be positive".into(),
                        ));
                    }
                }
                ChurnKind::GracefulLeave | ChurnKind::Crash | ChurnKind::Recover => {
                    if !members.contains(&ev.worker) {
                        return Err(CoreError::InvalidConfig(format!(
                            "churn event references unknown worker {}",
                            ev.worker
                        )));
                    }
                    if ev.kind == ChurnKind::GracefulLeave {
                        members.remove(&ev.worker);
                    }
                }
            }
        }
        Ok(())
    }

    /// Ids of workers that join via the churn script.
    pub fn joiners(&self) -> Vec<&ChurnEvent> {
        self.churn
            .iter()
            .filter(|e| e.kind == ChurnKind::Join)
            .collect()
    }

    /// Dataset sizes for every worker the run can ever contain:
    /// the n initial workers followed by the joiners, indexed by id.
    pub fn worker_weights(&self) -> Result<Vec<u64>> {
        let mut weights: Vec<u64> = match &self.dataset_sizes {
            Some(sizes) => sizes.clone(),
            None => vec![default_weight(); self.n as usize],
        };
        for ev in self.joiners() {
            if ev.worker.index() != weights.len() {
                return Err(CoreError::InvalidConfig(format!(
                    "joiners must take consecutive ids starting at n; got {} (expected w{})",
                    ev.worker,
                    weights.len()
                )));
            }
            weights.push(ev.weight.unwrap_or_else(default_weight));
        }
        Ok(weights)
    }

    /// Instantiates the learning task for every possible worker.
    pub fn build_task(&self) -> Result<Task> {
        let weights = self.worker_weights()?;
        Ok(match self.task {
            TaskConfig::Quadratic {
                mu,
                l,
                center_spread,
            } => Task::Quadratic(QuadraticTask::generate(
                self.dim,
                mu,
                l,
                center_spread,
                weights,
                self.seed,
            )?),
            TaskConfig::Logistic {
                features,
                class_separation,
                validation_samples,
            } => Task::Logistic(LogisticTask::generate(
                features,
                class_separation,
                weights,
                validation_samples,
                self.seed,
            )?),
        })
    }
}
