//! Couples one agent to one simulated world.
//!
//! The driver feeds agent outputs to the world and world reports back to
//! the agent until nothing is left to do. Before every move it turns the
//! robot and takes a look ahead; visible objects reach the agent as an
//! observation, and the move is held if the agent answers with a hazard
//! prompt.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentEvent, AgentNote, AgentOutput, Phase};
use crate::gateway::Decision;
use crate::map::{Heading, NodeId};
use crate::simulator::{MoveOutcome, Pose, SimWorld};
use crate::vector_store::StoreKind;

/// How the driver answers hazard prompts on the user's behalf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardReply {
    #[default]
    Reroute,
    Proceed,
    /// Leave the prompt open for a real user.
    Ask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sim", rename_all = "snake_case")]
pub enum SimEntry {
    Turned {
        node: NodeId,
        heading: Heading,
    },
    Moved {
        from: NodeId,
        to: NodeId,
        distance: f64,
        duration_s: f64,
        odometer: f64,
    },
    Kidnapped {
        pose: Pose,
    },
    BlockedMove {
        node: NodeId,
        heading: Heading,
    },
    Looked {
        node: NodeId,
        heading: Heading,
        labels: Vec<String>,
        hazard_ground_truth: Option<bool>,
    },
    Stopped {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", content = "body", rename_all = "snake_case")]
pub enum EntryBody {
    Event(AgentEvent),
    Output(AgentOutput),
    Note(AgentNote),
    Sim(SimEntry),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    /// Virtual clock in seconds.
    pub clock: f64,
    #[serde(flatten)]
    pub body: EntryBody,
}

pub struct Driver {
    agent: Agent,
    world: SimWorld,
    on_hazard: HazardReply,
    inbox: VecDeque<AgentEvent>,
    transcript: Vec<TranscriptEntry>,
    events_handled: usize,
    max_events: usize,
    stopped: Option<String>,
    result: Option<(bool, String)>,
}

impl Driver {
    pub fn new(agent: Agent, world: SimWorld, on_hazard: HazardReply, max_events: usize) -> Self {
        Driver {
            agent,
            world,
            on_hazard,
            inbox: VecDeque::new(),
            transcript: Vec::new(),
            events_handled: 0,
            max_events,
            stopped: None,
            result: None,
        }
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn events_handled(&self) -> usize {
        self.events_handled
    }

    /// First SessionResult the agent emitted.
    pub fn result(&self) -> Option<&(bool, String)> {
        self.result.as_ref()
    }

    /// Why the driver gave up, if it did (blocked move, event limit).
    pub fn stopped(&self) -> Option<&str> {
        self.stopped.as_deref()
    }

    pub fn is_idle(&self) -> bool {
        self.inbox.is_empty()
    }

    pub fn push(&mut self, event: AgentEvent) {
        self.inbox.push_back(event);
    }

    /// Process queued events until the inbox is empty.
    pub fn run(&mut self) {
        self.run_until(usize::MAX);
    }

    /// Process queued events while fewer than `limit` events were handled.
    pub fn run_until(&mut self, limit: usize) {
        while self.events_handled < limit && self.stopped.is_none() {
            let Some(ev) = self.inbox.pop_front() else { break };
            let rerouted = match &ev {
                AgentEvent::UserDecision {
                    prompt_id,
                    choice: Decision::Reroute,
                } if self.on_hazard != HazardReply::Ask => Some(*prompt_id),
                _ => None,
            };
            self.deliver(ev);
            // no way around: the simulated user walks on
            if let Some(prompt_id) = rerouted.filter(|id| self.agent.state().pending_prompt == Some(*id)) {
                self.inbox.push_back(AgentEvent::UserDecision {
                    prompt_id,
                    choice: Decision::Proceed,
                });
            }
        }
    }

    fn log(&mut self, body: EntryBody) {
        self.transcript.push(TranscriptEntry {
            seq: self.transcript.len() as u64,
            clock: self.world.clock(),
            body,
        });
    }

    fn stop(&mut self, reason: String) {
        self.log(EntryBody::Sim(SimEntry::Stopped { reason: reason.clone() }));
        self.inbox.clear();
        self.stopped = Some(reason);
    }

    fn deliver(&mut self, event: AgentEvent) -> Vec<AgentOutput> {
        if self.events_handled >= self.max_events {
            self.stop(format!("event limit {} reached", self.max_events));
            return Vec::new();
        }
        self.events_handled += 1;
        self.log(EntryBody::Event(event.clone()));
        let outputs = self.agent.handle_event(event);
        for note in self.agent.take_notes() {
            self.log(EntryBody::Note(note));
        }
        for out in &outputs {
            self.log(EntryBody::Output(out.clone()));
        }
        for out in &outputs {
            if self.stopped.is_some() {
                break;
            }
            self.perform(out);
        }
        outputs
    }

    fn perform(&mut self, out: &AgentOutput) {
        match out {
            AgentOutput::Say { .. } => {}
            AgentOutput::MoveCommand { turn, speed_mps, .. } => {
                self.world.turn(*turn);
                let pose = self.world.pose().clone();
                self.log(EntryBody::Sim(SimEntry::Turned {
                    node: pose.node.clone(),
                    heading: pose.heading,
                }));
                let look = self.world.observe();
                if !look.object_labels.is_empty() {
                    self.log(EntryBody::Sim(SimEntry::Looked {
                        node: pose.node,
                        heading: pose.heading,
                        labels: look.object_labels.clone(),
                        hazard_ground_truth: self.world.hazard_ahead(),
                    }));
                    let replies = self.deliver(AgentEvent::Observation {
                        embedding: look.embedding,
                        object_labels: look.object_labels,
                    });
                    let held = replies.iter().any(|o| matches!(o, AgentOutput::HazardPrompt { .. }));
                    if held || self.stopped.is_some() || self.agent.state().phase != Phase::Traversing {
                        return;
                    }
                }
                match self.world.advance(*speed_mps) {
                    MoveOutcome::Arrived(report) => {
                        self.log(EntryBody::Sim(SimEntry::Moved {
                            from: report.from,
                            to: report.to,
                            distance: report.distance,
                            duration_s: report.duration_s,
                            odometer: report.odometer,
                        }));
                        if let Some(pose) = report.kidnapped_to {
                            self.log(EntryBody::Sim(SimEntry::Kidnapped { pose }));
                        }
                        self.inbox.push_back(AgentEvent::ArrivalReport {
                            odometry_distance: report.distance,
                        });
                    }
                    MoveOutcome::Blocked { node, heading } => {
                        self.log(EntryBody::Sim(SimEntry::BlockedMove {
                            node: node.clone(),
                            heading,
                        }));
                        self.stop(format!("no edge leaves {node} at heading {heading}"));
                    }
                }
            }
            AgentOutput::QueryImages {
                store: StoreKind::Navigational,
                ..
            } => {
                let obs = self.world.observe();
                self.inbox.push_back(AgentEvent::Observation {
                    embedding: obs.embedding,
                    object_labels: Vec::new(),
                });
            }
            AgentOutput::QueryImages { .. } => {}
            AgentOutput::HazardPrompt { prompt_id, .. } => {
                let choice = match self.on_hazard {
                    HazardReply::Reroute => Decision::Reroute,
                    HazardReply::Proceed => Decision::Proceed,
                    HazardReply::Ask => return,
                };
                self.inbox.push_back(AgentEvent::UserDecision {
                    prompt_id: *prompt_id,
                    choice,
                });
            }
            AgentOutput::SessionResult { success, reason } => {
                if self.result.is_none() {
                    self.result = Some((*success, reason.clone()));
                }
            }
        }
    }
}
