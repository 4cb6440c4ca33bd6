//! Container-mode provisioning: turns an Active lease plus per-node image
//! choices into an experiment session with running logical processes.

mod catalog;
mod executor;

pub use catalog::{sha256_hex, ImageCatalog, ImageDescriptor, RoleTag, BUILTIN_CATALOG};
pub use executor::{
    log_from_json_lines, log_to_json_lines, ContainerRuntimeExecutor, ExecAction, ExecError, ExecRecord, Executor,
    ReplayExecutor, SimExecutor,
};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{Inventory, NodeId, NodeRole};
use crate::lease::{Lease, LeaseId, LeaseState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProvisionError {
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("image {0} content does not match its digest")]
    DigestMismatch(String),
    #[error("image catalog: {0}")]
    Catalog(String),
    #[error("lease {0} is {1:?}, not Active")]
    LeaseNotActive(LeaseId, LeaseState),
    #[error("lease {0} already has live session {1}")]
    SessionExists(LeaseId, SessionId),
    #[error("no image assigned to leased node {0}")]
    AssignmentIncomplete(NodeId),
    #[error("node {0} is not part of the lease")]
    NodeNotInLease(NodeId),
    #[error("image {image} ({role:?}) cannot run on {node} ({node_role:?})")]
    RoleMismatch { node: NodeId, node_role: NodeRole, image: String, role: RoleTag },
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session {0} is already stopped")]
    AlreadyStopped(SessionId),
    #[error("session {0} is not launching")]
    NotLaunching(SessionId),
    #[error("launch of session {session} failed: {source}")]
    LaunchFailed { session: SessionId, source: ExecError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContainerState {
    Pending,
    Starting,
    Running,
    Stopped,
    Failed,
}

impl ContainerState {
    fn can_become(self, next: ContainerState) -> bool {
        use ContainerState::*;
        matches!((self, next), (Pending, Starting) | (Starting, Running | Failed) | (Running, Stopped | Failed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcessRole {
    #[serde(rename = "gNB")]
    Gnb,
    #[serde(rename = "near-RT-RIC")]
    NearRtRic,
    #[serde(rename = "xApp-host")]
    XAppHost,
    #[serde(rename = "nrUE")]
    NrUe,
    #[serde(rename = "custom")]
    Custom,
}

impl RoleTag {
    pub fn process_roles(self) -> &'static [ProcessRole] {
        match self {
            RoleTag::GnbRic => &[ProcessRole::Gnb, ProcessRole::NearRtRic, ProcessRole::XAppHost],
            RoleTag::Nrue => &[ProcessRole::NrUe],
            RoleTag::Custom => &[ProcessRole::Custom],
        }
    }

    fn fits(self, node_role: NodeRole) -> bool {
        match node_role {
            NodeRole::BaseStation => matches!(self, RoleTag::GnbRic | RoleTag::Custom),
            NodeRole::FixedUe | NodeRole::MobileUe => matches!(self, RoleTag::Nrue | RoleTag::Custom),
            NodeRole::SandboxHost => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessHandle {
    pub role: ProcessRole,
    pub pid: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerInstance {
    pub container_id: String,
    pub node_id: NodeId,
    pub image: ImageDescriptor,
    pub state: ContainerState,
    /// Non-empty only while Running.
    pub processes: Vec<ProcessHandle>,
    pub running_since: Option<u64>,
}

impl ContainerInstance {
    fn set_state(&mut self, next: ContainerState) {
        debug_assert!(self.state.can_become(next), "{:?} -> {next:?}", self.state);
        self.state = next;
        if next != ContainerState::Running {
            self.processes.clear();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Launching,
    Running,
    Failed,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSession {
    pub session_id: SessionId,
    pub lease_id: LeaseId,
    /// In launch order: base stations first, then UEs, then anything else.
    pub containers: Vec<ContainerInstance>,
    pub state: SessionState,
    pub created_at: u64,
    pub running_since: Option<u64>,
    pub ended_at: Option<u64>,
    pub cause: Option<String>,
    /// Virtual time at which the next executor action is issued.
    cursor: u64,
    /// Index of the container currently being launched and whether its
    /// create step is done.
    launch_pos: (usize, bool),
}

impl ExperimentSession {
    pub fn is_terminal(&self) -> bool {
        matches!(self.state, SessionState::Stopped) || (self.state == SessionState::Failed && self.ended_at.is_some())
    }

    /// Virtual time the session's last executor action completed.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn processes(&self) -> impl Iterator<Item = (&NodeId, &ProcessHandle)> {
        self.containers.iter().flat_map(|c| c.processes.iter().map(move |p| (&c.node_id, p)))
    }

    pub fn container_for(&self, node: &NodeId) -> Option<&ContainerInstance> {
        self.containers.iter().find(|c| &c.node_id == node)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerStatus {
    pub container_id: String,
    pub node_id: NodeId,
    pub image: String,
    pub state: ContainerState,
    pub processes: Vec<ProcessRole>,
    pub uptime_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: SessionId,
    pub lease_id: LeaseId,
    pub state: SessionState,
    pub containers: Vec<ContainerStatus>,
    pub uptime_ms: u64,
    pub cause: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaunchProgress {
    InProgress,
    Done(SessionState),
}

pub struct Provisioner {
    executor: Box<dyn Executor>,
    sessions: BTreeMap<SessionId, ExperimentSession>,
    next_id: u64,
    next_pid: u32,
}

impl fmt::Debug for Provisioner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provisioner").field("sessions", &self.sessions.len()).finish()
    }
}

fn launch_rank(role: NodeRole) -> u8 {
    match role {
        NodeRole::BaseStation => 0,
        NodeRole::FixedUe | NodeRole::MobileUe => 1,
        NodeRole::SandboxHost => 2,
    }
}

impl Provisioner {
    pub fn new(executor: Box<dyn Executor>) -> Self {
        Provisioner { executor, sessions: BTreeMap::new(), next_id: 1, next_pid: 1000 }
    }

    pub fn executor_log(&self) -> &[ExecRecord] {
        self.executor.log()
    }

    pub fn session(&self, id: SessionId) -> Option<&ExperimentSession> {
        self.sessions.get(&id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ExperimentSession> {
        self.sessions.values()
    }

    /// The non-terminal session holding `lease`, if any.
    pub fn live_session_for(&self, lease: LeaseId) -> Option<SessionId> {
        self.sessions.values().find(|s| s.lease_id == lease && !s.is_terminal()).map(|s| s.session_id)
    }

    /// Check preconditions and create a session with every container
    /// Pending. Nothing touches the executor yet.
    pub fn begin_launch(
        &mut self,
        lease: &Lease,
        assignments: &BTreeMap<NodeId, String>,
        inv: &Inventory,
        catalog: &ImageCatalog,
        now: u64,
    ) -> Result<SessionId, ProvisionError> {
        if lease.state != LeaseState::Active {
            return Err(ProvisionError::LeaseNotActive(lease.lease_id, lease.state));
        }
        if let Some(existing) = self.live_session_for(lease.lease_id) {
            return Err(ProvisionError::SessionExists(lease.lease_id, existing));
        }
        if let Some(extra) = assignments.keys().find(|n| !lease.request.node_ids.contains(*n)) {
            return Err(ProvisionError::NodeNotInLease(extra.clone()));
        }
        let mut planned = Vec::new();
        for node_id in &lease.request.node_ids {
            let name = assignments.get(node_id).ok_or_else(|| ProvisionError::AssignmentIncomplete(node_id.clone()))?;
            let node = inv.node(node_id).ok_or_else(|| ProvisionError::NodeNotInLease(node_id.clone()))?;
            let image = catalog.resolve(name)?;
            catalog.verify(&image)?;
            if !image.role_tag.fits(node.role) {
                return Err(ProvisionError::RoleMismatch {
                    node: node_id.clone(),
                    node_role: node.role,
                    image: image.name,
                    role: image.role_tag,
                });
            }
            planned.push((launch_rank(node.role), node_id.clone(), image));
        }
        planned.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        let session_id = SessionId(self.next_id);
        self.next_id += 1;
        let containers = planned
            .into_iter()
            .enumerate()
            .map(|(i, (_, node_id, image))| ContainerInstance {
                container_id: format!("s{}-c{}-{}", session_id.0, i, node_id),
                node_id,
                image,
                state: ContainerState::Pending,
                processes: Vec::new(),
                running_since: None,
            })
            .collect();
        self.sessions.insert(
            session_id,
            ExperimentSession {
                session_id,
                lease_id: lease.lease_id,
                containers,
                state: SessionState::Launching,
                created_at: now,
                running_since: None,
                ended_at: None,
                cause: None,
                cursor: now,
                launch_pos: (0, false),
            },
        );
        Ok(session_id)
    }

    /// Perform the next executor action of a launching session. On any
    /// failure every already-running container is stopped, newest first,
    /// and the session ends Failed.
    pub fn poll_launch(&mut self, id: SessionId, inv: &Inventory) -> Result<LaunchProgress, ProvisionError> {
        let session = self.sessions.get_mut(&id).ok_or(ProvisionError::UnknownSession(id))?;
        if session.state != SessionState::Launching {
            return Err(ProvisionError::NotLaunching(id));
        }
        let (idx, created) = session.launch_pos;
        let container = &mut session.containers[idx];
        let node = inv.node(&container.node_id).ok_or_else(|| ProvisionError::NodeNotInLease(container.node_id.clone()))?;
        let action = if created { ExecAction::Start } else { ExecAction::Create };
        let result = self.executor.execute(action, node, &container.container_id, &container.image, session.cursor);
        match result {
            Ok(done) => {
                session.cursor = done;
                if !created {
                    container.set_state(ContainerState::Starting);
                    session.launch_pos = (idx, true);
                } else {
                    container.set_state(ContainerState::Running);
                    container.running_since = Some(done);
                    for role in container.image.role_tag.process_roles() {
                        container.processes.push(ProcessHandle { role: *role, pid: self.next_pid });
                        self.next_pid += 1;
                    }
                    session.launch_pos = (idx + 1, false);
                    if idx + 1 == session.containers.len() {
                        session.state = SessionState::Running;
                        session.running_since = Some(done);
                        return Ok(LaunchProgress::Done(SessionState::Running));
                    }
                }
                Ok(LaunchProgress::InProgress)
            }
            Err(e) => {
                if created {
                    container.set_state(ContainerState::Failed);
                }
                session.cause = Some(e.to_string());
                session.state = SessionState::Failed;
                self.rollback(id, inv);
                Err(ProvisionError::LaunchFailed { session: id, source: e })
            }
        }
    }

    fn rollback(&mut self, id: SessionId, inv: &Inventory) {
        let session = self.sessions.get_mut(&id).expect("session exists");
        for container in session.containers.iter_mut().rev() {
            if container.state != ContainerState::Running {
                continue;
            }
            let Some(node) = inv.node(&container.node_id) else { continue };
            match self.executor.execute(ExecAction::Stop, node, &container.container_id, &container.image, session.cursor) {
                Ok(done) => {
                    session.cursor = done;
                    container.set_state(ContainerState::Stopped);
                }
                Err(_) => container.set_state(ContainerState::Failed),
            }
        }
    }

    /// Run a launch to completion.
    pub fn launch_session(
        &mut self,
        lease: &Lease,
        assignments: &BTreeMap<NodeId, String>,
        inv: &Inventory,
        catalog: &ImageCatalog,
        now: u64,
    ) -> Result<ExperimentSession, ProvisionError> {
        let id = self.begin_launch(lease, assignments, inv, catalog, now)?;
        while self.poll_launch(id, inv)? == LaunchProgress::InProgress {}
        Ok(self.sessions[&id].clone())
    }

    /// Stop every running container in reverse launch order. A Failed
    /// session is cleaned up the same way.
    pub fn stop_session(&mut self, id: SessionId, inv: &Inventory, now: u64, cause: &str) -> Result<ExperimentSession, ProvisionError> {
        let session = self.sessions.get_mut(&id).ok_or(ProvisionError::UnknownSession(id))?;
        if session.is_terminal() {
            return Err(ProvisionError::AlreadyStopped(id));
        }
        session.cursor = session.cursor.max(now);
        let failed = session.state == SessionState::Failed;
        self.rollback(id, inv);
        let session = self.sessions.get_mut(&id).expect("session exists");
        session.ended_at = Some(now);
        if !failed {
            session.state = SessionState::Stopped;
            session.cause = Some(cause.to_string());
        }
        Ok(session.clone())
    }

    pub fn session_status(&self, id: SessionId, now: u64) -> Result<SessionStatus, ProvisionError> {
        let s = self.sessions.get(&id).ok_or(ProvisionError::UnknownSession(id))?;
        let uptime = |since: Option<u64>, running: bool| match (since, running) {
            (Some(t), true) => now.saturating_sub(t),
            _ => 0,
        };
        Ok(SessionStatus {
            session_id: s.session_id,
            lease_id: s.lease_id,
            state: s.state,
            containers: s
                .containers
                .iter()
                .map(|c| ContainerStatus {
                    container_id: c.container_id.clone(),
                    node_id: c.node_id.clone(),
                    image: c.image.name.clone(),
                    state: c.state,
                    processes: c.processes.iter().map(|p| p.role).collect(),
                    uptime_ms: uptime(c.running_since, c.state == ContainerState::Running),
                })
                .collect(),
            uptime_ms: uptime(s.running_since, s.state == SessionState::Running),
            cause: s.cause.clone(),
        })
    }
}
