//! The executor is the only side-effect boundary of provisioning. Every
//! call is recorded so a launch can be replayed exactly.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::catalog::ImageDescriptor;
use crate::inventory::{NodeId, NodeRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecAction {
    Create,
    Start,
    Stop,
}

/// One executor log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecRecord {
    pub action: ExecAction,
    pub node: NodeId,
    pub container: String,
    /// Virtual ms at which the action was issued.
    pub timestamp: u64,
    /// Virtual ms at which it completed, or `None` if it failed.
    pub completed: Option<u64>,
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("{action:?} failed for container {container} on {node}: {reason}")]
    Failed { action: ExecAction, node: NodeId, container: String, reason: String },
    #[error("replay diverged at record {index}: {detail}")]
    ReplayDiverged { index: usize, detail: String },
    #[error("container runtime backend is not available in this build")]
    Unsupported,
}

/// Performs container actions on a node over its management endpoint.
/// Returns the virtual completion time.
pub trait Executor: Send {
    fn execute(
        &mut self,
        action: ExecAction,
        node: &NodeRecord,
        container: &str,
        image: &ImageDescriptor,
        at: u64,
    ) -> Result<u64, ExecError>;

    fn log(&self) -> &[ExecRecord];
}

pub fn log_to_json_lines(log: &[ExecRecord]) -> String {
    log.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

pub fn log_from_json_lines(text: &str) -> Result<Vec<ExecRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// In-process executor with seeded action latencies and optional fault
/// injection.
#[derive(Debug)]
pub struct SimExecutor {
    rng: ChaCha8Rng,
    faults: BTreeSet<(NodeId, ExecAction)>,
    log: Vec<ExecRecord>,
}

impl SimExecutor {
    pub fn new(seed: u64) -> Self {
        SimExecutor { rng: ChaCha8Rng::seed_from_u64(seed), faults: BTreeSet::new(), log: Vec::new() }
    }

    /// Make every `action` on `node` fail.
    pub fn fail_on(mut self, node: impl Into<NodeId>, action: ExecAction) -> Self {
        self.faults.insert((node.into(), action));
        self
    }

    fn latency(&mut self, action: ExecAction) -> u64 {
        match action {
            ExecAction::Create => self.rng.random_range(50..=200),
            ExecAction::Start => self.rng.random_range(100..=400),
            ExecAction::Stop => self.rng.random_range(20..=80),
        }
    }
}

impl Executor for SimExecutor {
    fn execute(
        &mut self,
        action: ExecAction,
        node: &NodeRecord,
        container: &str,
        _image: &ImageDescriptor,
        at: u64,
    ) -> Result<u64, ExecError> {
        let took = self.latency(action);
        let failed = self.faults.contains(&(node.node_id.clone(), action));
        let completed = (!failed).then_some(at + took);
        self.log.push(ExecRecord {
            action,
            node: node.node_id.clone(),
            container: container.to_string(),
            timestamp: at,
            completed,
            endpoint: node.mgmt_endpoint.clone(),
            error: failed.then(|| "injected fault".to_string()),
        });
        completed.ok_or_else(|| ExecError::Failed {
            action,
            node: node.node_id.clone(),
            container: container.to_string(),
            reason: "injected fault".into(),
        })
    }

    fn log(&self) -> &[ExecRecord] {
        &self.log
    }
}

/// Re-issues the outcomes of a recorded log, checking that the same calls
/// are made in the same order.
#[derive(Debug)]
pub struct ReplayExecutor {
    script: VecDeque<ExecRecord>,
    consumed: usize,
    log: Vec<ExecRecord>,
}

impl ReplayExecutor {
    pub fn new(records: Vec<ExecRecord>) -> Self {
        ReplayExecutor { script: records.into(), consumed: 0, log: Vec::new() }
    }
}

impl Executor for ReplayExecutor {
    fn execute(
        &mut self,
        action: ExecAction,
        node: &NodeRecord,
        container: &str,
        _image: &ImageDescriptor,
        at: u64,
    ) -> Result<u64, ExecError> {
        let index = self.consumed;
        let rec = self.script.pop_front().ok_or_else(|| ExecError::ReplayDiverged { index, detail: "log exhausted".into() })?;
        if rec.action != action || rec.node != node.node_id || rec.container != container || rec.timestamp != at {
            return Err(ExecError::ReplayDiverged {
                index,
                detail: format!("expected {:?} {} {} @{}, got {:?} {} {} @{}", rec.action, rec.node, rec.container, rec.timestamp, action, node.node_id, container, at),
            });
        }
        self.consumed += 1;
        self.log.push(rec.clone());
        rec.completed.ok_or_else(|| ExecError::Failed {
            action,
            node: node.node_id.clone(),
            container: container.to_string(),
            reason: rec.error.clone().unwrap_or_else(|| "failed in recorded run".into()),
        })
    }

    fn log(&self) -> &[ExecRecord] {
        &self.log
    }
}

/// Placeholder for a real container-runtime backend (e.g. a Docker or
/// containerd client reached over the node's management endpoint). Every
/// call fails with [`ExecError::Unsupported`].
#[derive(Debug, Default)]
pub struct ContainerRuntimeExecutor {
    log: Vec<ExecRecord>,
}

impl Executor for ContainerRuntimeExecutor {
    fn execute(&mut self, _: ExecAction, _: &NodeRecord, _: &str, _: &ImageDescriptor, _: u64) -> Result<u64, ExecError> {
        Err(ExecError::Unsupported)
    }

    fn log(&self) -> &[ExecRecord] {
        &self.log
    }
}
