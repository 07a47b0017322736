//! Language front end of the agent.
//!
//! A [`Gateway`] turns user utterances into [`Intent`]s and object labels
//! into [`HazardVerdict`]s. [`MockGateway`] does this with fixed rules so
//! sessions are reproducible offline; [`RemoteGateway`] delegates to a
//! chat-completion endpoint and validates whatever tool call comes back.

mod messages;
mod mock;
mod prompt;
mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{Heading, NodeId, TopoMap};
use crate::planner::TurnCommand;
use crate::vector_store::StoreKind;

pub use messages::{compose_user_message, MessageEvent};
pub use mock::{resolve_place, Confusion, MockGateway, HAZARD_RULES};
pub use prompt::{
    build_bundle, render_system_prompt, tool_schemas, tool_schemas_json, ChatMessage, PromptBundle, Role,
    SYSTEM_PROMPT_VERSION,
};
pub use remote::{
    convert_tool_call, tool_call_response, RemoteConfig, RemoteGateway, RemoteReply, ToolCallError, ENV_API_KEY,
    ENV_MODEL, ENV_URL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("hazard classification needs at least one label")]
    NoLabels,
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("endpoint rejected the request: HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("remote gateway is not configured: {0}")]
    NotConfigured(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedDelta {
    Faster,
    Slower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Proceed,
    Reroute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verbosity {
    #[default]
    Brief,
    Detailed,
}

/// What the user asked for. Each variant carries exactly the fields its
/// kind needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intent {
    /// `node` is the resolved destination; `place` is the text the user gave.
    NavigateTo {
        place: String,
        node: Option<NodeId>,
    },
    SetAvoidTag {
        tag: String,
    },
    ClearAvoidTag {
        tag: String,
    },
    SetSpeed {
        speed_mps: f64,
    },
    AdjustSpeed {
        delta: SpeedDelta,
    },
    SetVerbosity {
        verbosity: Verbosity,
    },
    HazardDecision {
        decision: Decision,
    },
    AskStatus,
    Unknown,
}

impl Intent {
    pub fn is_preference(&self) -> bool {
        matches!(
            self,
            Intent::SetAvoidTag { .. }
                | Intent::ClearAvoidTag { .. }
                | Intent::SetSpeed { .. }
                | Intent::AdjustSpeed { .. }
                | Intent::SetVerbosity { .. }
        )
    }
}

/// Direct commands a remote model may issue through tool calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum AgentCommand {
    SendUserMessage {
        text: String,
    },
    QueryImages {
        store: StoreKind,
        node: NodeId,
        orientation: Heading,
    },
    IssueMove {
        turn: TurnCommand,
        distance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GatewayReply {
    Intent(Intent),
    Command(AgentCommand),
}

impl From<Intent> for GatewayReply {
    fn from(value: Intent) -> Self {
        GatewayReply::Intent(value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardVerdict {
    pub hazardous: bool,
    pub reason: String,
    pub confidence: f64,
}

/// Per-session switches that change what the gateway is shown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablations {
    #[serde(default)]
    pub no_system_prompt: bool,
    #[serde(default)]
    pub no_planner: bool,
}

pub trait Gateway: Send {
    fn name(&self) -> &'static str;

    fn interpret_query(&mut self, utterance: &str, map: &TopoMap) -> GatewayReply;

    fn classify_hazard(&mut self, labels: &[String], context: &str) -> Result<HazardVerdict, GatewayError>;

    /// Route the agent is currently following, for gateways that keep a
    /// prompt context. `text` is empty while no route is active.
    fn set_route_context(&mut self, _map_name: &str, _text: &str) {}

    /// Route inference from the raw map text, used when the planner is
    /// ablated. `None` means the gateway could not produce a route.
    fn infer_route(&mut self, _map_text: &str, _start: &NodeId, _goal: &NodeId) -> Option<Vec<NodeId>> {
        None
    }
}
