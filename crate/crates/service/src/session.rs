//! One navigation session: an agent, its simulated world and the event log
//! clients read from.

use std::sync::Arc;

use axum::http::StatusCode;
use guide_core::agent::{Agent, AgentDeps, AgentEvent, AgentNote, AgentOutput, Phase, SessionPrefs};
use guide_core::gateway::{Ablations, Decision, Gateway};
use guide_core::map::{Heading, NodeId, TopoMap};
use guide_core::planner::Route;
use guide_core::scenario::{Driver, EntryBody, HazardReply, SimEntry};
use guide_core::simulator::{FaultSpec, Pose, SimWorld, WorldObject};
use guide_core::vector_store::VectorStore;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::events::{ChatRole, EventKind, EventLog, RecoveryStage};

/// A map the service can open sessions on.
#[derive(Debug, Clone)]
pub struct MapEntry {
    pub map: TopoMap,
    pub store: Arc<VectorStore>,
}

/// Body of `POST /api/v1/sessions`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub map: String,
    /// Defaults to the first node (by id) facing along its first edge.
    #[serde(default)]
    pub start: Option<Pose>,
    #[serde(default)]
    pub prefs: Option<SessionPrefs>,
    #[serde(default)]
    pub objects: Vec<WorldObject>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// World noise seed.
    #[serde(default)]
    pub seed: u64,
}

/// State snapshot returned by `GET /api/v1/sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub map: String,
    pub phase: Phase,
    pub pose: Pose,
    pub believed_node: NodeId,
    pub route: Option<Route>,
    pub leg_index: usize,
    pub pending_prompt: Option<u64>,
    pub prefs: SessionPrefs,
    pub last_seq: u64,
    pub closed: bool,
}

pub struct Session {
    id: String,
    map_id: String,
    driver: Driver,
    log: Arc<EventLog>,
    cursor: usize,
    heading: Heading,
    flagged: Option<(NodeId, NodeId)>,
    ended: bool,
}

fn default_start(map: &TopoMap) -> Option<Pose> {
    let node = map.nodes().next()?.id.clone();
    let heading = map
        .edges()
        .find(|e| e.from == node)
        .map_or(Heading::EAST, |e| e.direction);
    Some(Pose { node, heading })
}

impl Session {
    pub fn create(
        id: String,
        entry: &MapEntry,
        req: CreateSession,
        gateway: Box<dyn Gateway>,
        max_events: usize,
    ) -> Result<Self, ApiError> {
        let start = match req.start {
            Some(p) => p,
            None => default_start(&entry.map).ok_or_else(|| ApiError::invalid("map has no nodes"))?,
        };
        let agent = Agent::new(
            AgentDeps {
                map: entry.map.clone(),
                env_store: entry.store.clone(),
                gateway,
                prefs: req.prefs.unwrap_or_default(),
                ablations: Ablations::default(),
            },
            start.node.clone(),
            start.heading,
        )
        .map_err(|e| ApiError::invalid(e.to_string()))?;
        let world = SimWorld::new(entry.map.clone(), start.clone(), req.objects, req.faults, req.seed)
            .map_err(|e| ApiError::invalid(e.to_string()))?;
        let log = Arc::new(EventLog::default());
        log.append(
            0.0,
            EventKind::SessionCreated {
                session: id.clone(),
                map: req.map.clone(),
                node: start.node,
                heading: start.heading,
            },
        );
        Ok(Session {
            id,
            map_id: req.map,
            driver: Driver::new(agent, world, HazardReply::Ask, max_events),
            log,
            cursor: 0,
            heading: start.heading,
            flagged: None,
            ended: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    fn ensure_open(&self) -> Result<(), ApiError> {
        if self.log.is_closed() {
            return Err(ApiError::new(
                StatusCode::GONE,
                "session_expired",
                "the session has expired",
            ));
        }
        if let Some(why) = self.driver.stopped() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "session_ended",
                format!("the simulation stopped: {why}"),
            ));
        }
        Ok(())
    }

    /// Feed a user utterance; returns the last event sequence number.
    pub fn query(&mut self, text: &str) -> Result<u64, ApiError> {
        if text.trim().is_empty() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "empty_utterance",
                "the utterance is empty",
            ));
        }
        self.ensure_open()?;
        self.driver.push(AgentEvent::UserUtterance { text: text.to_string() });
        self.driver.run();
        self.sync();
        Ok(self.log.last_seq())
    }

    pub fn decide(&mut self, prompt_id: u64, choice: Decision) -> Result<u64, ApiError> {
        self.ensure_open()?;
        if self.driver.agent().state().pending_prompt != Some(prompt_id) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "stale_prompt",
                format!("prompt {prompt_id} is not awaiting a decision"),
            ));
        }
        self.driver.push(AgentEvent::UserDecision { prompt_id, choice });
        self.driver.run();
        self.sync();
        Ok(self.log.last_seq())
    }

    /// Close the session for inactivity.
    pub fn expire(&mut self) {
        if self.log.is_closed() {
            return;
        }
        if !self.ended {
            self.ended = true;
            self.log.append(
                self.driver.world().clock(),
                EventKind::SessionResult {
                    success: false,
                    reason: "expired".into(),
                },
            );
        }
        self.log.close();
    }

    pub fn view(&self) -> SessionView {
        let st = self.driver.agent().state();
        SessionView {
            id: self.id.clone(),
            map: self.map_id.clone(),
            phase: st.phase,
            pose: self.driver.world().pose().clone(),
            believed_node: st.believed_node.clone(),
            route: st.route.clone(),
            leg_index: st.leg_index,
            pending_prompt: st.pending_prompt,
            prefs: self.driver.agent().prefs().clone(),
            last_seq: self.log.last_seq(),
            closed: self.log.is_closed(),
        }
    }

    /// Translate new transcript entries into client events.
    fn sync(&mut self) {
        let entries = self.driver.transcript()[self.cursor..].to_vec();
        self.cursor += entries.len();
        for e in entries {
            if let Some(kind) = self.translate(e.body) {
                if matches!(kind, EventKind::SessionResult { .. }) {
                    self.ended = true;
                }
                self.log.append(e.clock, kind);
            }
        }
        if let (Some(why), false) = (self.driver.stopped(), self.ended) {
            self.ended = true;
            let reason = why.to_string();
            self.log.append(
                self.driver.world().clock(),
                EventKind::SessionResult { success: false, reason },
            );
        }
    }

    fn translate(&mut self, body: EntryBody) -> Option<EventKind> {
        let kind = match body {
            EntryBody::Event(AgentEvent::UserUtterance { text }) => EventKind::ChatMessage {
                role: ChatRole::User,
                text,
            },
            EntryBody::Output(AgentOutput::Say { text }) => EventKind::ChatMessage {
                role: ChatRole::Guide,
                text,
            },
            EntryBody::Output(AgentOutput::HazardPrompt {
                prompt_id,
                verdict,
                alternative,
            }) => {
                let (from, to) = self.flagged.clone().unzip();
                EventKind::HazardPrompt {
                    prompt_id,
                    from,
                    to,
                    verdict,
                    alternative,
                }
            }
            EntryBody::Output(AgentOutput::SessionResult { success, reason }) if !self.ended => {
                EventKind::SessionResult { success, reason }
            }
            EntryBody::Note(AgentNote::RoutePlanned { route }) => EventKind::RoutePlanned { route },
            EntryBody::Note(AgentNote::RouteChanged { route, reason }) => EventKind::RouteChanged { route, reason },
            EntryBody::Note(AgentNote::Verified { node, similarity }) => EventKind::Arrival { node, similarity },
            EntryBody::Note(AgentNote::LocalizationError { expected, similarity }) => EventKind::Recovery {
                stage: RecoveryStage::Detected,
                node: Some(expected),
                similarity: Some(similarity),
            },
            EntryBody::Note(AgentNote::Relocalized { node, similarity, .. }) => EventKind::Recovery {
                stage: RecoveryStage::Relocalized,
                node: Some(node),
                similarity: Some(similarity),
            },
            EntryBody::Note(AgentNote::RecoveryFailed { similarity }) => EventKind::Recovery {
                stage: RecoveryStage::Failed,
                node: None,
                similarity,
            },
            EntryBody::Note(AgentNote::HazardFlagged { from, to, hazardous }) => {
                self.flagged = hazardous.then_some((from, to));
                return None;
            }
            EntryBody::Sim(SimEntry::Turned { node, heading }) => {
                self.heading = heading;
                EventKind::PoseUpdate { node, heading }
            }
            EntryBody::Sim(SimEntry::Moved { to, .. }) => EventKind::PoseUpdate {
                node: to,
                heading: self.heading,
            },
            EntryBody::Sim(SimEntry::Kidnapped { pose }) => {
                self.heading = pose.heading;
                EventKind::PoseUpdate {
                    node: pose.node,
                    heading: pose.heading,
                }
            }
            _ => return None,
        };
        Some(kind)
    }
}
