//! Typed session events and the append-only log they live in.

use std::sync::Mutex;

use guide_core::gateway::HazardVerdict;
use guide_core::map::{Heading, NodeId};
use guide_core::planner::Route;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    User,
    Guide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStage {
    /// Observation did not match the expected place.
    Detected,
    Relocalized,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated {
        session: String,
        map: String,
        node: NodeId,
        heading: Heading,
    },
    ChatMessage {
        role: ChatRole,
        text: String,
    },
    RoutePlanned {
        route: Route,
    },
    RouteChanged {
        route: Route,
        reason: String,
    },
    /// True pose of the simulated robot.
    PoseUpdate {
        node: NodeId,
        heading: Heading,
    },
    HazardPrompt {
        prompt_id: u64,
        from: Option<NodeId>,
        to: Option<NodeId>,
        verdict: HazardVerdict,
        alternative: Option<Route>,
    },
    Arrival {
        node: NodeId,
        similarity: f64,
    },
    Recovery {
        stage: RecoveryStage,
        node: Option<NodeId>,
        similarity: Option<f64>,
    },
    SessionResult {
        success: bool,
        reason: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionCreated { .. } => "session_created",
            EventKind::ChatMessage { .. } => "chat_message",
            EventKind::RoutePlanned { .. } => "route_planned",
            EventKind::RouteChanged { .. } => "route_changed",
            EventKind::PoseUpdate { .. } => "pose_update",
            EventKind::HazardPrompt { .. } => "hazard_prompt",
            EventKind::Arrival { .. } => "arrival",
            EventKind::Recovery { .. } => "recovery",
            EventKind::SessionResult { .. } => "session_result",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    /// Starts at 1 and increases by one per event.
    pub seq: u64,
    /// Simulated clock in seconds.
    pub clock: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

struct LogInner {
    events: Vec<SessionEvent>,
    closed: bool,
}

/// Append-only event log with a change signal for streaming readers.
pub struct EventLog {
    inner: Mutex<LogInner>,
    tx: watch::Sender<u64>,
}

impl Default for EventLog {
    fn default() -> Self {
        EventLog {
            inner: Mutex::new(LogInner {
                events: Vec::new(),
                closed: false,
            }),
            tx: watch::channel(0).0,
        }
    }
}

impl EventLog {
    pub fn append(&self, clock: f64, kind: EventKind) -> u64 {
        let mut inner = self.inner.lock().expect("event log poisoned");
        let seq = inner.events.len() as u64 + 1;
        inner.events.push(SessionEvent { seq, clock, kind });
        drop(inner);
        self.tx.send_replace(seq);
        seq
    }

    /// Events with `seq > after`, and whether the log is closed.
    pub fn after(&self, after: u64) -> (Vec<SessionEvent>, bool) {
        let inner = self.inner.lock().expect("event log poisoned");
        let start = (after as usize).min(inner.events.len());
        (inner.events[start..].to_vec(), inner.closed)
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().expect("event log poisoned").events.len() as u64
    }

    pub fn close(&self) {
        self.inner.lock().expect("event log poisoned").closed = true;
        self.tx.send_modify(|_| {});
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().expect("event log poisoned").closed
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.tx.subscribe()
    }
}
