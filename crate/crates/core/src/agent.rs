//! Session controller.
//!
//! The agent is an event-driven state machine. Each inbound [`AgentEvent`]
//! yields zero or more [`AgentOutput`]s in a fixed order, and given the same
//! state, event and dependencies the result is always the same.
//!
//! | phase              | event                       | next phase                         | outputs                                  |
//! |--------------------|-----------------------------|------------------------------------|------------------------------------------|
//! | idle               | utterance: navigate         | traversing (or idle on error)      | Say(route), MoveCommand                  |
//! | idle               | utterance: other            | idle                               | Say                                      |
//! | traversing         | ArrivalReport               | verifying                          | QueryImages(navigational)                |
//! | traversing         | Observation (hazardous)     | awaiting_decision                  | Say(warning), HazardPrompt               |
//! | traversing         | Observation (clear)         | traversing                         | none                                     |
//! | verifying          | Observation (match ≥ τ)     | traversing / completed             | MoveCommand or Say + SessionResult       |
//! | verifying          | Observation (match < τ)     | traversing / failed (via recovery) | Say(warning), QueryImages(environment).. |
//! | awaiting_decision  | UserDecision / yes / no     | traversing (or awaiting)           | Say, MoveCommand                         |
//! | awaiting_decision  | Observation (hazardous)     | awaiting_decision (queued)         | none                                     |
//! | completed / failed | any                         | unchanged                          | Say(status)                              |
//!
//! Any other pairing is answered with a `Say` and leaves the state alone.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    compose_user_message, Ablations, AgentCommand, Decision, Gateway, GatewayReply, HazardVerdict, Intent,
    MessageEvent, SpeedDelta, Verbosity,
};
use crate::map::{Heading, NodeId, TopoMap};
use crate::planner::{k_alternative_routes, plan_route, relative_turn, PlanConstraints, PlanError, Route, TurnCommand};
use crate::vector_store::{cosine_similarity, Embedding, EmbeddingRecord, RecordMeta, StoreKind, VectorStore};

pub const DEFAULT_ARRIVAL_THRESHOLD: f64 = 0.85;
pub const DEFAULT_RELOC_THRESHOLD: f64 = 0.80;
pub const SPEED_UP_FACTOR: f64 = 1.25;
pub const SLOW_DOWN_FACTOR: f64 = 0.8;
pub const MIN_SPEED_MPS: f64 = 0.3;
pub const MAX_SPEED_MPS: f64 = 2.0;
/// Relocalizations allowed per session before giving up.
pub const MAX_RECOVERY_ATTEMPTS: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("start node `{0}` is not on the map")]
    UnknownStart(NodeId),
    #[error("invalid preferences: {0}")]
    InvalidPrefs(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionPrefs {
    pub avoid_tags: BTreeSet<String>,
    pub speed_mps: f64,
    pub verbosity: Verbosity,
    pub arrival_threshold: f64,
    pub reloc_threshold: f64,
}

impl Default for SessionPrefs {
    fn default() -> Self {
        SessionPrefs {
            avoid_tags: BTreeSet::new(),
            speed_mps: 1.0,
            verbosity: Verbosity::Brief,
            arrival_threshold: DEFAULT_ARRIVAL_THRESHOLD,
            reloc_threshold: DEFAULT_RELOC_THRESHOLD,
        }
    }
}

impl SessionPrefs {
    pub fn validate(&self) -> Result<(), AgentError> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.arrival_threshold) || !open(self.reloc_threshold) {
            return Err(AgentError::InvalidPrefs("thresholds must lie in (0, 1)".into()));
        }
        if !(self.speed_mps > 0.0 && self.speed_mps.is_finite()) {
            return Err(AgentError::InvalidPrefs("speed must be positive".into()));
        }
        Ok(())
    }

    pub fn constraints(&self) -> PlanConstraints {
        PlanConstraints {
            avoid_tags: self.avoid_tags.clone(),
            ..PlanConstraints::default()
        }
    }
}

/// Pure preference update. Non-preference intents return `prefs` unchanged.
pub fn apply_preference(prefs: &SessionPrefs, intent: &Intent) -> SessionPrefs {
    let mut p = prefs.clone();
    match intent {
        Intent::SetAvoidTag { tag } => {
            p.avoid_tags.insert(tag.clone());
        }
        Intent::ClearAvoidTag { tag } => {
            p.avoid_tags.remove(tag);
        }
        Intent::SetSpeed { speed_mps } => p.speed_mps = speed_mps.clamp(MIN_SPEED_MPS, MAX_SPEED_MPS),
        Intent::AdjustSpeed { delta } => {
            let factor = match delta {
                SpeedDelta::Faster => SPEED_UP_FACTOR,
                SpeedDelta::Slower => SLOW_DOWN_FACTOR,
            };
            p.speed_mps = (p.speed_mps * factor).clamp(MIN_SPEED_MPS, MAX_SPEED_MPS);
        }
        Intent::SetVerbosity { verbosity } => p.verbosity = *verbosity,
        _ => {}
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Planning,
    Traversing,
    Verifying,
    AwaitingDecision,
    Recovering,
    Completed,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Completed | Phase::Failed)
    }

    pub fn has_route(self) -> bool {
        matches!(self, Phase::Traversing | Phase::Verifying | Phase::AwaitingDecision)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("phase serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub phase: Phase,
    pub route: Option<Route>,
    pub leg_index: usize,
    pub goal: Option<NodeId>,
    pub believed_node: NodeId,
    pub believed_heading: Heading,
    pub pending_prompt: Option<u64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AgentEvent {
    UserUtterance {
        text: String,
    },
    ArrivalReport {
        odometry_distance: f64,
    },
    Observation {
        embedding: Embedding,
        object_labels: Vec<String>,
    },
    UserDecision {
        prompt_id: u64,
        choice: Decision,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "output", rename_all = "snake_case")]
pub enum AgentOutput {
    Say {
        text: String,
    },
    MoveCommand {
        turn: TurnCommand,
        distance: f64,
        speed_mps: f64,
    },
    /// `node`/`orientation` name the expected place; both are `None` when the
    /// current observation itself is the probe.
    QueryImages {
        store: StoreKind,
        node: Option<NodeId>,
        orientation: Option<Heading>,
    },
    HazardPrompt {
        prompt_id: u64,
        verdict: HazardVerdict,
        alternative: Option<Route>,
    },
    SessionResult {
        success: bool,
        reason: String,
    },
}

/// Outcome of comparing an observation with the expected place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verification {
    Arrived { similarity: f64 },
    Mismatch { similarity: f64 },
}

impl Verification {
    pub fn similarity(self) -> f64 {
        match self {
            Verification::Arrived { similarity } | Verification::Mismatch { similarity } => similarity,
        }
    }
}

/// Arrived iff `cosine(expected, observation) >= threshold`. A missing
/// expected record is a mismatch with similarity −1.
pub fn verify_arrival(expected: Option<&EmbeddingRecord>, observation: &Embedding, threshold: f64) -> Verification {
    let similarity = expected
        .and_then(|r| cosine_similarity(&r.embedding, observation).ok())
        .unwrap_or(-1.0);
    if similarity >= threshold {
        Verification::Arrived { similarity }
    } else {
        Verification::Mismatch { similarity }
    }
}

/// Notable things that happened while handling the last event, for harnesses
/// and the session service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum AgentNote {
    RoutePlanned {
        route: Route,
    },
    RouteChanged {
        route: Route,
        reason: String,
    },
    Verified {
        node: NodeId,
        similarity: f64,
    },
    LocalizationError {
        expected: NodeId,
        similarity: f64,
    },
    Relocalized {
        node: NodeId,
        heading: Heading,
        similarity: f64,
    },
    RecoveryFailed {
        similarity: Option<f64>,
    },
    HazardFlagged {
        from: NodeId,
        to: NodeId,
        hazardous: bool,
    },
    PreferencesChanged {
        prefs: SessionPrefs,
    },
}

#[derive(Debug, Clone)]
struct PendingHazard {
    prompt_id: u64,
    edge: (NodeId, NodeId),
    alternative: Option<Route>,
}

/// Everything an agent needs besides its own state.
pub struct AgentDeps {
    pub map: TopoMap,
    pub env_store: Arc<VectorStore>,
    pub gateway: Box<dyn Gateway>,
    pub prefs: SessionPrefs,
    pub ablations: Ablations,
}

pub struct Agent {
    state: AgentState,
    prefs: SessionPrefs,
    /// Session copy of the map; carries the blocked-edge overlay.
    map: TopoMap,
    env_store: Arc<VectorStore>,
    nav_store: VectorStore,
    gateway: Box<dyn Gateway>,
    ablations: Ablations,
    next_prompt_id: u64,
    pending_hazard: Option<PendingHazard>,
    queued_hazards: VecDeque<(HazardVerdict, (NodeId, NodeId))>,
    acknowledged: HashSet<(NodeId, NodeId)>,
    replan_pending: bool,
    recovery_attempts: u32,
    notes: Vec<AgentNote>,
}

type Outputs = Vec<AgentOutput>;

fn say(text: impl Into<String>) -> AgentOutput {
    AgentOutput::Say { text: text.into() }
}

impl Agent {
    pub fn new(deps: AgentDeps, start: NodeId, heading: Heading) -> Result<Self, AgentError> {
        if !deps.map.contains(&start) {
            return Err(AgentError::UnknownStart(start));
        }
        deps.prefs.validate()?;
        Ok(Agent {
            state: AgentState {
                phase: Phase::Idle,
                route: None,
                leg_index: 0,
                goal: None,
                believed_node: start,
                believed_heading: heading,
                pending_prompt: None,
                failure: None,
            },
            prefs: deps.prefs,
            map: deps.map,
            env_store: deps.env_store,
            nav_store: VectorStore::new(StoreKind::Navigational),
            gateway: deps.gateway,
            ablations: deps.ablations,
            next_prompt_id: 1,
            pending_hazard: None,
            queued_hazards: VecDeque::new(),
            acknowledged: HashSet::new(),
            replan_pending: false,
            recovery_attempts: 0,
            notes: Vec::new(),
        })
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn prefs(&self) -> &SessionPrefs {
        &self.prefs
    }

    pub fn map(&self) -> &TopoMap {
        &self.map
    }

    pub fn nav_store(&self) -> &VectorStore {
        &self.nav_store
    }

    pub fn recovery_attempts(&self) -> u32 {
        self.recovery_attempts
    }

    /// Notes produced by the most recent [`Agent::handle_event`] call.
    pub fn take_notes(&mut self) -> Vec<AgentNote> {
        std::mem::take(&mut self.notes)
    }

    /// The leg whose MoveCommand is outstanding (or about to be issued).
    pub fn current_leg(&self) -> Option<&crate::planner::RouteLeg> {
        self.state.route.as_ref()?.legs.get(self.state.leg_index)
    }

    fn msg(&self, event: MessageEvent) -> AgentOutput {
        say(compose_user_message(&event, self.prefs.verbosity))
    }

    pub fn handle_event(&mut self, event: AgentEvent) -> Outputs {
        self.notes.clear();
        let phase = self.state.phase;
        if phase.is_terminal() {
            return vec![say(self.status_text())];
        }
        match (phase, event) {
            (_, AgentEvent::UserUtterance { text }) => self.on_utterance(&text),
            (_, AgentEvent::UserDecision { prompt_id, choice }) => self.on_decision(prompt_id, choice),
            (Phase::Traversing, AgentEvent::ArrivalReport { .. }) => self.on_arrival(),
            (Phase::Traversing, AgentEvent::Observation { object_labels, .. }) => self.on_look(&object_labels),
            (Phase::Verifying, AgentEvent::Observation { embedding, .. }) => self.on_verify(&embedding),
            (Phase::AwaitingDecision, AgentEvent::Observation { object_labels, .. }) => {
                self.queue_hazard(&object_labels);
                Vec::new()
            }
            (phase, AgentEvent::ArrivalReport { .. }) => {
                vec![say(format!("Unexpected arrival report while {phase}; ignoring it."))]
            }
            (phase, AgentEvent::Observation { .. }) => {
                vec![say(format!("No observation is needed while {phase}."))]
            }
        }
    }

    fn status_text(&self) -> String {
        let s = &self.state;
        let here = self
            .map
            .node(&s.believed_node)
            .map_or(s.believed_node.to_string(), |n| n.display_name().to_string());
        match (s.phase, &s.route) {
            (Phase::Completed, _) => format!("The trip is complete. We are at {here}."),
            (Phase::Failed, _) => format!(
                "Navigation stopped: {}.",
                s.failure.as_deref().unwrap_or("unknown failure")
            ),
            (_, Some(r)) => format!(
                "We are near {here}, heading to {}; leg {} of {}.",
                r.goal_name,
                (s.leg_index + 1).min(r.len()),
                r.len()
            ),
            _ => format!("We are at {here}. Where would you like to go?"),
        }
    }

    fn on_utterance(&mut self, text: &str) -> Outputs {
        if text.trim().is_empty() {
            return vec![self.msg(MessageEvent::NotUnderstood)];
        }
        let reply = self.gateway.interpret_query(text, &self.map);
        match reply {
            GatewayReply::Intent(intent) => self.on_intent(intent),
            GatewayReply::Command(cmd) => self.on_command(cmd),
        }
    }

    fn on_command(&mut self, cmd: AgentCommand) -> Outputs {
        match cmd {
            AgentCommand::SendUserMessage { text } => vec![say(text)],
            AgentCommand::QueryImages {
                store,
                node,
                orientation,
            } => vec![AgentOutput::QueryImages {
                store,
                node: Some(node),
                orientation: Some(orientation),
            }],
            AgentCommand::IssueMove { .. } => {
                vec![say(
                    "I only move along a planned route. Tell me where you would like to go.",
                )]
            }
        }
    }

    fn on_intent(&mut self, intent: Intent) -> Outputs {
        match intent {
            Intent::NavigateTo { place, node } => match node {
                None => vec![self.msg(MessageEvent::UnknownPlace { place })],
                Some(goal) => self.navigate(goal),
            },
            Intent::HazardDecision { decision } => match self.state.pending_prompt {
                Some(id) => self.on_decision(id, decision),
                None => vec![say("There is no hazard warning waiting for an answer.")],
            },
            Intent::AskStatus => vec![say(self.status_text())],
            Intent::Unknown => vec![self.msg(MessageEvent::NotUnderstood)],
            pref => {
                let updated = apply_preference(&self.prefs, &pref);
                let tags_changed = updated.avoid_tags != self.prefs.avoid_tags;
                self.prefs = updated;
                self.notes.push(AgentNote::PreferencesChanged {
                    prefs: self.prefs.clone(),
                });
                if tags_changed && self.state.phase.has_route() {
                    self.replan_pending = true;
                }
                vec![self.msg(MessageEvent::PreferenceUpdated {
                    summary: self.pref_summary(&pref),
                })]
            }
        }
    }

    fn pref_summary(&self, intent: &Intent) -> String {
        match intent {
            Intent::SetAvoidTag { tag } => format!("avoiding {}", tag.replace('_', " ")),
            Intent::ClearAvoidTag { tag } => format!("no longer avoiding {}", tag.replace('_', " ")),
            Intent::SetSpeed { .. } | Intent::AdjustSpeed { .. } => {
                format!("walking speed {} m/s", self.prefs.speed_mps)
            }
            Intent::SetVerbosity { verbosity } => match verbosity {
                Verbosity::Brief => "brief instructions".into(),
                Verbosity::Detailed => "detailed instructions".into(),
            },
            _ => "unchanged".into(),
        }
    }

    fn navigate(&mut self, goal: NodeId) -> Outputs {
        if self.state.phase != Phase::Idle {
            // mid-route: switch destination at the next verified stop
            self.state.goal = Some(goal.clone());
            self.replan_pending = true;
            let name = self
                .map
                .node(&goal)
                .map_or(goal.to_string(), |n| n.display_name().to_string());
            return vec![say(format!(
                "New destination {name}; I will update the route at the next stop."
            ))];
        }
        self.state.phase = Phase::Planning;
        self.state.goal = Some(goal.clone());
        let planned = if self.ablations.no_planner {
            self.infer_route_without_planner(&goal)
        } else {
            plan_route(
                &self.map,
                &self.state.believed_node,
                &goal,
                self.state.believed_heading,
                &self.prefs.constraints(),
            )
            .map_err(|e| self.unreachable_message(e))
        };
        match planned {
            Err(out) => {
                if self.ablations.no_planner {
                    return self.fail("route inference failed", out);
                }
                self.state.phase = Phase::Idle;
                self.state.goal = None;
                out
            }
            Ok(route) if route.is_empty() => {
                let arrived = self.msg(MessageEvent::RoutePlanned { route });
                self.complete(vec![arrived])
            }
            Ok(route) => {
                self.notes.push(AgentNote::RoutePlanned { route: route.clone() });
                let mut out = vec![self.msg(MessageEvent::RoutePlanned { route: route.clone() })];
                self.adopt_route(route);
                out.push(self.move_for_current_leg());
                out
            }
        }
    }

    fn infer_route_without_planner(&mut self, goal: &NodeId) -> Result<Route, Outputs> {
        let text = self.map.serialize();
        let start = self.state.believed_node.clone();
        let path = self.gateway.infer_route(&text, &start, goal);
        let route = path
            .filter(|p| p.first() == Some(&start) && p.last() == Some(goal))
            .and_then(|p| Route::from_path(&self.map, &p, self.state.believed_heading));
        route.ok_or_else(|| vec![say("I could not work out a route from the map.")])
    }

    fn unreachable_message(&self, err: PlanError) -> Outputs {
        let name = |id: &NodeId| {
            self.map
                .node(id)
                .map_or(id.to_string(), |n| n.display_name().to_string())
        };
        let event = match err {
            PlanError::UnreachableUnderConstraints { goal, .. } => MessageEvent::Unreachable {
                goal: name(&goal),
                due_to_constraints: true,
            },
            PlanError::Unreachable { goal, .. } => MessageEvent::Unreachable {
                goal: name(&goal),
                due_to_constraints: false,
            },
            other => MessageEvent::Status {
                text: other.to_string(),
            },
        };
        vec![self.msg(event)]
    }

    /// Install `route`, rebuild the navigational store, and enter traversing.
    fn adopt_route(&mut self, route: Route) {
        self.nav_store.clear().expect("navigational store allows deletion");
        let places = std::iter::once((route.start.clone(), route.initial_heading))
            .chain(route.legs.iter().map(|l| (l.to.clone(), l.absolute_direction)));
        for (i, (node, heading)) in places.enumerate() {
            if let Some(rec) = self.env_store.find_place(&node, heading) {
                let record = EmbeddingRecord {
                    id: format!("nav-{i:03}-{node}-{heading}"),
                    embedding: rec.embedding.clone(),
                    meta: RecordMeta {
                        node: node.clone(),
                        orientation: heading,
                        kind: StoreKind::Navigational,
                        source: rec.meta.source.clone(),
                    },
                };
                self.nav_store.insert(record).expect("fresh ids and unit vectors");
            }
        }
        let map_name = self.map.name.clone().unwrap_or_default();
        self.gateway.set_route_context(&map_name, &route.description);
        self.state.route = Some(route);
        self.state.leg_index = 0;
        self.state.phase = Phase::Traversing;
        self.replan_pending = false;
    }

    /// MoveCommand for the current leg, turning from the believed heading.
    fn move_for_current_leg(&mut self) -> AgentOutput {
        let leg = self.current_leg().expect("current leg exists").clone();
        let turn = relative_turn(self.state.believed_heading, leg.absolute_direction);
        self.state.believed_heading = leg.absolute_direction;
        AgentOutput::MoveCommand {
            turn,
            distance: leg.distance,
            speed_mps: self.prefs.speed_mps,
        }
    }

    fn on_arrival(&mut self) -> Outputs {
        let leg = self.current_leg().expect("traversing has a leg").clone();
        self.state.believed_node = leg.to.clone();
        self.state.believed_heading = leg.absolute_direction;
        self.state.phase = Phase::Verifying;
        vec![AgentOutput::QueryImages {
            store: StoreKind::Navigational,
            node: Some(leg.to),
            orientation: Some(leg.absolute_direction),
        }]
    }

    fn on_verify(&mut self, observation: &Embedding) -> Outputs {
        let expected = self
            .nav_store
            .find_place(&self.state.believed_node, self.state.believed_heading);
        let v = verify_arrival(expected, observation, self.prefs.arrival_threshold);
        match v {
            Verification::Arrived { similarity } => {
                self.notes.push(AgentNote::Verified {
                    node: self.state.believed_node.clone(),
                    similarity,
                });
                self.advance()
            }
            Verification::Mismatch { similarity } => {
                let mut out = self.detect_localization_error(similarity);
                out.extend(self.recover_localization(observation));
                out
            }
        }
    }

    /// Record a failed arrival check and switch to recovering.
    fn detect_localization_error(&mut self, similarity: f64) -> Outputs {
        let expected = self.state.believed_node.clone();
        self.notes.push(AgentNote::LocalizationError {
            expected: expected.clone(),
            similarity,
        });
        self.state.phase = Phase::Recovering;
        let name = self
            .map
            .node(&expected)
            .map_or(expected.to_string(), |n| n.display_name().to_string());
        vec![self.msg(MessageEvent::LocalizationWarning {
            expected: name,
            similarity,
        })]
    }

    /// Relocalize against the environment store and replan to the goal.
    fn recover_localization(&mut self, observation: &Embedding) -> Outputs {
        self.recovery_attempts += 1;
        let mut out = vec![AgentOutput::QueryImages {
            store: StoreKind::Environment,
            node: None,
            orientation: None,
        }];
        if self.recovery_attempts > MAX_RECOVERY_ATTEMPTS {
            self.notes.push(AgentNote::RecoveryFailed { similarity: None });
            out.push(self.msg(MessageEvent::LocalizationLost));
            return self.fail("localization lost", out);
        }
        let top = self
            .env_store
            .query_top_k(observation, 1)
            .ok()
            .and_then(|mut v| v.pop());
        let Some(top) = top.filter(|t| t.similarity >= self.prefs.reloc_threshold) else {
            self.notes.push(AgentNote::RecoveryFailed {
                similarity: self
                    .env_store
                    .query_top_k(observation, 1)
                    .ok()
                    .and_then(|v| v.first().map(|r| r.similarity)),
            });
            out.push(self.msg(MessageEvent::LocalizationLost));
            return self.fail("localization lost", out);
        };
        let node = top.record.meta.node.clone();
        let heading = top.record.meta.orientation;
        self.state.believed_node = node.clone();
        self.state.believed_heading = heading;
        self.notes.push(AgentNote::Relocalized {
            node: node.clone(),
            heading,
            similarity: top.similarity,
        });
        let name = self
            .map
            .node(&node)
            .map_or(node.to_string(), |n| n.display_name().to_string());
        out.push(self.msg(MessageEvent::Relocalized {
            name,
            heading: heading.degrees(),
        }));
        out.extend(self.replan("relocalized"));
        out
    }

    /// Replan from the believed pose to the goal and continue.
    fn replan(&mut self, reason: &str) -> Outputs {
        let goal = self.state.goal.clone().expect("a trip has a goal");
        let planned = plan_route(
            &self.map,
            &self.state.believed_node,
            &goal,
            self.state.believed_heading,
            &self.prefs.constraints(),
        );
        match planned {
            Ok(route) if route.is_empty() => {
                let name = route.goal_name.clone();
                self.complete(vec![self.msg(MessageEvent::Arrival { name })])
            }
            Ok(route) => {
                self.notes.push(AgentNote::RouteChanged {
                    route: route.clone(),
                    reason: reason.to_string(),
                });
                let mut out = vec![self.msg(MessageEvent::RouteChanged {
                    route: route.clone(),
                    reason: reason.to_string(),
                })];
                self.adopt_route(route);
                out.push(self.move_for_current_leg());
                out
            }
            Err(e) => {
                let out = self.unreachable_message(e);
                self.fail("no route to the destination", out)
            }
        }
    }

    fn advance(&mut self) -> Outputs {
        self.state.leg_index += 1;
        let route_len = self.state.route.as_ref().map_or(0, Route::len);
        let at_goal = self.state.goal.as_ref() == Some(&self.state.believed_node);
        if self.replan_pending && !at_goal {
            self.replan_pending = false;
            return self.replan("preferences changed");
        }
        if self.state.leg_index >= route_len || at_goal {
            let name = self
                .map
                .node(&self.state.believed_node)
                .map_or(self.state.believed_node.to_string(), |n| n.display_name().to_string());
            return self.complete(vec![self.msg(MessageEvent::Arrival { name })]);
        }
        self.state.phase = Phase::Traversing;
        vec![self.move_for_current_leg()]
    }

    fn complete(&mut self, mut out: Outputs) -> Outputs {
        self.state.phase = Phase::Completed;
        if let Some(r) = &self.state.route {
            self.state.leg_index = r.len();
        }
        self.state.pending_prompt = None;
        out.push(AgentOutput::SessionResult {
            success: true,
            reason: "arrived".into(),
        });
        out
    }

    fn fail(&mut self, reason: &str, mut out: Outputs) -> Outputs {
        self.state.phase = Phase::Failed;
        self.state.failure = Some(reason.to_string());
        self.state.route = None;
        self.state.leg_index = 0;
        self.state.pending_prompt = None;
        out.push(AgentOutput::SessionResult {
            success: false,
            reason: reason.to_string(),
        });
        out
    }

    fn current_edge(&self) -> Option<(NodeId, NodeId)> {
        self.current_leg().map(|l| (l.from.clone(), l.to.clone()))
    }

    fn classify(&mut self, labels: &[String]) -> Option<HazardVerdict> {
        let edge = self.current_edge()?;
        if labels.is_empty() || self.acknowledged.contains(&edge) {
            return None;
        }
        let context = format!("about to walk from {} to {}", edge.0, edge.1);
        let verdict = self.gateway.classify_hazard(labels, &context).ok()?;
        self.notes.push(AgentNote::HazardFlagged {
            from: edge.0,
            to: edge.1,
            hazardous: verdict.hazardous,
        });
        verdict.hazardous.then_some(verdict)
    }

    /// Look ahead before walking the current leg.
    fn on_look(&mut self, labels: &[String]) -> Outputs {
        match self.classify(labels) {
            Some(verdict) => self.handle_hazard(verdict),
            None => Vec::new(),
        }
    }

    fn queue_hazard(&mut self, labels: &[String]) {
        if let Some(v) = self.classify(labels) {
            let edge = self.current_edge().expect("classified on a leg");
            self.queued_hazards.push_back((v, edge));
        }
    }

    /// Block the leg's edge, look for a way around, and ask the user.
    fn handle_hazard(&mut self, verdict: HazardVerdict) -> Outputs {
        let edge = self.current_edge().expect("hazard on a leg");
        self.map
            .set_edge_blocked(&edge.0, &edge.1, true)
            .expect("route edges exist");
        let goal = self.state.goal.clone().expect("a trip has a goal");
        let constraints = self.prefs.constraints();
        let alternative = k_alternative_routes(
            &self.map,
            &self.state.believed_node,
            &goal,
            self.state.believed_heading,
            constraints.max_routes,
            &constraints,
        )
        .ok()
        .and_then(|mut v| (!v.is_empty()).then(|| v.remove(0)));
        let prompt_id = self.next_prompt_id;
        self.next_prompt_id += 1;
        self.pending_hazard = Some(PendingHazard {
            prompt_id,
            edge,
            alternative: alternative.clone(),
        });
        self.state.pending_prompt = Some(prompt_id);
        self.state.phase = Phase::AwaitingDecision;
        vec![
            self.msg(MessageEvent::Hazard {
                verdict: verdict.clone(),
                alternative: alternative.clone(),
            }),
            AgentOutput::HazardPrompt {
                prompt_id,
                verdict,
                alternative,
            },
        ]
    }

    fn on_decision(&mut self, prompt_id: u64, choice: Decision) -> Outputs {
        let Some(pending) = self.pending_hazard.clone().filter(|p| p.prompt_id == prompt_id) else {
            return vec![say(format!("Hazard prompt {prompt_id} is not open."))];
        };
        let mut out = Vec::new();
        match choice {
            Decision::Proceed => {
                let (a, b) = &pending.edge;
                self.map.set_edge_blocked(a, b, false).expect("edge exists");
                self.acknowledged.insert(pending.edge.clone());
                out.push(self.msg(MessageEvent::HazardCleared));
                self.state.phase = Phase::Traversing;
            }
            Decision::Reroute => match pending.alternative {
                None => {
                    out.push(self.msg(MessageEvent::RerouteUnavailable));
                    return out;
                }
                Some(alt) => {
                    self.notes.push(AgentNote::RouteChanged {
                        route: alt.clone(),
                        reason: "avoiding hazard".into(),
                    });
                    out.push(self.msg(MessageEvent::RouteChanged {
                        route: alt.clone(),
                        reason: "avoiding hazard".into(),
                    }));
                    self.adopt_route(alt);
                }
            },
        }
        self.pending_hazard = None;
        self.state.pending_prompt = None;

        // A hazard seen while waiting matters only if it is on the leg we
        // are about to walk.
        let current = self.current_edge();
        let queued = std::mem::take(&mut self.queued_hazards);
        if let Some((verdict, _)) = queued
            .into_iter()
            .find(|(_, e)| Some(e) == current.as_ref() && !self.acknowledged.contains(e))
        {
            out.extend(self.handle_hazard(verdict));
            return out;
        }
        out.push(self.move_for_current_leg());
        out
    }
}
