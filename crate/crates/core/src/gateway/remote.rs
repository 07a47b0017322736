//! Chat-completion client.
//!
//! Requests carry a `messages` array and the declared `tools`; the first
//! choice's message holds either plain `content` or `tool_calls`. Tool call
//! arguments are validated against the declared schemas before anything
//! reaches the agent.

use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::mock::{resolve_place, MockGateway};
use super::prompt::{build_bundle, tool_schemas, ChatMessage, PromptBundle, Role};
use super::{
    Ablations, AgentCommand, Decision, Gateway, GatewayError, GatewayReply, HazardVerdict, Intent, SpeedDelta,
    Verbosity,
};
use crate::map::{Heading, NodeId, TopoMap};
use crate::planner::TurnCommand;
use crate::vector_store::StoreKind;

pub const ENV_URL: &str = "GUIDE_LLM_URL";
pub const ENV_MODEL: &str = "GUIDE_LLM_MODEL";
pub const ENV_API_KEY: &str = "GUIDE_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub initial_backoff: Duration,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        let url = std::env::var(ENV_URL).map_err(|_| GatewayError::NotConfigured(format!("{ENV_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        let mut cfg = RemoteConfig::new(url, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok();
        Ok(cfg)
    }
}

/// The model's answer: text or one tool call.
#[derive(Debug, Clone, PartialEq)]
pub enum RemoteReply {
    Message(String),
    ToolCall { name: String, arguments: Value },
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    tools: &'a Value,
    tool_choice: &'static str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Option<Vec<WireToolCall>>,
}

#[derive(Deserialize)]
struct WireToolCall {
    function: WireFunction,
}

#[derive(Deserialize)]
struct WireFunction {
    name: String,
    arguments: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolCallError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{tool}`: {message}")]
    InvalidArguments { tool: String, message: String },
}

fn schema_of(name: &str) -> Option<Value> {
    tool_schemas()
        .as_array()?
        .iter()
        .find(|t| t["function"]["name"] == name)
        .map(|t| t["function"]["parameters"].clone())
}

fn validate(tool: &str, schema: &Value, args: &Value) -> Result<(), ToolCallError> {
    let bad = |message: String| ToolCallError::InvalidArguments {
        tool: tool.to_string(),
        message,
    };
    let obj = args
        .as_object()
        .ok_or_else(|| bad("arguments must be an object".into()))?;
    let props = schema["properties"].as_object().cloned().unwrap_or_default();
    for req in schema["required"].as_array().into_iter().flatten() {
        let key = req.as_str().unwrap_or_default();
        if !obj.contains_key(key) {
            return Err(bad(format!("missing `{key}`")));
        }
    }
    for (key, value) in obj {
        let spec = props.get(key).ok_or_else(|| bad(format!("unexpected field `{key}`")))?;
        let ok_type = match spec["type"].as_str() {
            Some("string") => value.is_string(),
            Some("integer") => value.is_i64() || value.is_u64(),
            Some("number") => value.is_number(),
            _ => true,
        };
        if !ok_type {
            return Err(bad(format!("`{key}` has the wrong type")));
        }
        if let Some(allowed) = spec["enum"].as_array() {
            if !allowed.contains(value) {
                return Err(bad(format!("`{key}` = {value} is not an allowed value")));
            }
        }
        if let Some(min) = spec["exclusiveMinimum"].as_f64() {
            if value.as_f64().is_none_or(|v| v <= min) {
                return Err(bad(format!("`{key}` must exceed {min}")));
            }
        }
    }
    Ok(())
}

/// Validate a tool call and map it to exactly one intent or command.
pub fn convert_tool_call(name: &str, arguments: &Value, map: &TopoMap) -> Result<GatewayReply, ToolCallError> {
    let schema = schema_of(name).ok_or_else(|| ToolCallError::UnknownTool(name.to_string()))?;
    validate(name, &schema, arguments)?;
    let s = |k: &str| arguments[k].as_str().unwrap_or_default().to_string();
    let bad = |message: &str| ToolCallError::InvalidArguments {
        tool: name.to_string(),
        message: message.to_string(),
    };
    let reply = match name {
        "plan_route" => {
            let place = s("destination");
            let node = resolve_place(&place, map);
            GatewayReply::Intent(Intent::NavigateTo { place, node })
        }
        "query_images" => {
            let store = if s("store") == "environment" {
                StoreKind::Environment
            } else {
                StoreKind::Navigational
            };
            let node = NodeId::new(s("node")).map_err(|_| bad("invalid node id"))?;
            if !map.contains(&node) {
                return Err(bad("node is not on the map"));
            }
            let orientation = arguments["orientation"]
                .as_i64()
                .and_then(Heading::from_degrees)
                .ok_or_else(|| bad("invalid orientation"))?;
            GatewayReply::Command(AgentCommand::QueryImages {
                store,
                node,
                orientation,
            })
        }
        "send_user_message" => GatewayReply::Command(AgentCommand::SendUserMessage { text: s("text") }),
        "issue_move" => {
            let turn = match s("turn").as_str() {
                "straight" => TurnCommand::Straight,
                "left" => TurnCommand::Left,
                "right" => TurnCommand::Right,
                _ => TurnCommand::TurnAround,
            };
            let distance = arguments["distance"].as_f64().unwrap_or_default();
            GatewayReply::Command(AgentCommand::IssueMove { turn, distance })
        }
        "set_preference" => {
            let need_tag = || {
                let t = s("tag");
                if crate::map::is_token(&t) {
                    Ok(t.to_lowercase())
                } else {
                    Err(bad("`tag` is required and must be a token"))
                }
            };
            let intent = match s("preference").as_str() {
                "avoid_tag" => Intent::SetAvoidTag { tag: need_tag()? },
                "clear_avoid_tag" => Intent::ClearAvoidTag { tag: need_tag()? },
                "speed" => Intent::SetSpeed {
                    speed_mps: arguments["speed_mps"]
                        .as_f64()
                        .ok_or_else(|| bad("`speed_mps` is required"))?,
                },
                "faster" => Intent::AdjustSpeed {
                    delta: SpeedDelta::Faster,
                },
                "slower" => Intent::AdjustSpeed {
                    delta: SpeedDelta::Slower,
                },
                _ => Intent::SetVerbosity {
                    verbosity: match arguments["verbosity"].as_str() {
                        Some("brief") => Verbosity::Brief,
                        Some("detailed") => Verbosity::Detailed,
                        _ => return Err(bad("`verbosity` is required")),
                    },
                },
            };
            GatewayReply::Intent(intent)
        }
        "hazard_decision" => GatewayReply::Intent(Intent::HazardDecision {
            decision: if s("decision") == "proceed" {
                Decision::Proceed
            } else {
                Decision::Reroute
            },
        }),
        other => return Err(ToolCallError::UnknownTool(other.to_string())),
    };
    Ok(reply)
}

/// Gateway backed by a chat-completion endpoint.
pub struct RemoteGateway {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    ablations: Ablations,
    map_name: String,
    route_text: String,
    history: Vec<ChatMessage>,
    diagnostics: Vec<String>,
}

impl RemoteGateway {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::NotConfigured(e.to_string()))?;
        Ok(RemoteGateway {
            config,
            client,
            ablations: Ablations::default(),
            map_name: String::new(),
            route_text: String::new(),
            history: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    pub fn with_ablations(mut self, ablations: Ablations) -> Self {
        self.ablations = ablations;
        self
    }

    /// Route text (or, with the planner ablated, the map text) placed in the
    /// system prompt.
    pub fn set_route_context(&mut self, map_name: &str, text: &str) {
        self.map_name = map_name.to_string();
        self.route_text = text.to_string();
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    fn diagnose(&mut self, message: String) {
        warn!("remote gateway: {message}");
        self.diagnostics.push(message);
    }

    /// One completion round trip, retried with exponential backoff on
    /// connection errors, timeouts, 429 and 5xx.
    pub fn remote_complete(&self, bundle: &PromptBundle) -> Result<RemoteReply, GatewayError> {
        let body = WireRequest {
            model: &self.config.model,
            messages: &bundle.conversation,
            tools: &bundle.tools,
            tool_choice: "auto",
        };
        let mut backoff = self.config.initial_backoff;
        let mut last_error = String::new();
        let attempts = self.config.max_attempts.max(1);
        for attempt in 1..=attempts {
            let mut req = self.client.post(&self.config.url).json(&body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let text = resp.text().map_err(|e| GatewayError::Malformed(e.to_string()))?;
                        return parse_response(&text);
                    }
                    let transient = status.is_server_error() || status.as_u16() == 429;
                    let body = resp.text().unwrap_or_default();
                    if !transient {
                        return Err(GatewayError::Rejected {
                            status: status.as_u16(),
                            body,
                        });
                    }
                    last_error = format!("HTTP {status}");
                }
                Err(e) => last_error = e.to_string(),
            }
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(GatewayError::Network {
            attempts,
            message: last_error,
        })
    }

    fn bundle(&self, user: &str) -> PromptBundle {
        build_bundle(
            !self.ablations.no_system_prompt,
            &self.map_name,
            &self.route_text,
            &self.history,
            user,
        )
    }
}

fn parse_response(text: &str) -> Result<RemoteReply, GatewayError> {
    let resp: WireResponse = serde_json::from_str(text).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    let msg = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Malformed("no choices".into()))?
        .message;
    if let Some(call) = msg.tool_calls.and_then(|c| c.into_iter().next()) {
        let arguments =
            serde_json::from_str(&call.function.arguments).unwrap_or(Value::String(call.function.arguments));
        return Ok(RemoteReply::ToolCall {
            name: call.function.name,
            arguments,
        });
    }
    Ok(RemoteReply::Message(msg.content.unwrap_or_default()))
}

impl Gateway for RemoteGateway {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn interpret_query(&mut self, utterance: &str, map: &TopoMap) -> GatewayReply {
        let bundle = self.bundle(utterance);
        self.history.push(ChatMessage::new(Role::User, utterance));
        match self.remote_complete(&bundle) {
            Ok(RemoteReply::ToolCall { name, arguments }) => {
                self.history.push(ChatMessage::new(
                    Role::Assistant,
                    format!("[tool call {name} {arguments}]"),
                ));
                match convert_tool_call(&name, &arguments, map) {
                    Ok(reply) => reply,
                    Err(e) => {
                        self.diagnose(e.to_string());
                        Intent::Unknown.into()
                    }
                }
            }
            Ok(RemoteReply::Message(text)) => {
                self.history.push(ChatMessage::new(Role::Assistant, text.clone()));
                GatewayReply::Command(AgentCommand::SendUserMessage { text })
            }
            Err(e) => {
                self.diagnose(e.to_string());
                Intent::Unknown.into()
            }
        }
    }

    fn classify_hazard(&mut self, labels: &[String], context: &str) -> Result<HazardVerdict, GatewayError> {
        if labels.is_empty() {
            return Err(GatewayError::NoLabels);
        }
        let question = format!(
            "Objects ahead on the path: {}. Context: {context}. Answer only with JSON \
             {{\"hazardous\": bool, \"reason\": string, \"confidence\": number}}.",
            labels.join(", ")
        );
        let bundle = self.bundle(&question);
        let parsed = match self.remote_complete(&bundle)? {
            RemoteReply::Message(text) => serde_json::from_str::<HazardVerdict>(text.trim()).ok(),
            RemoteReply::ToolCall { .. } => None,
        };
        match parsed {
            Some(mut v) if v.confidence.is_finite() => {
                v.confidence = v.confidence.clamp(0.0, 1.0);
                if v.hazardous && v.reason.trim().is_empty() {
                    v.reason = format!("possible hazard ({})", labels.join(", "));
                }
                Ok(v)
            }
            _ => {
                self.diagnose("unparseable hazard verdict; using rule table".into());
                MockGateway::rule_verdict(labels)
            }
        }
    }

    fn set_route_context(&mut self, map_name: &str, text: &str) {
        RemoteGateway::set_route_context(self, map_name, text);
    }

    fn infer_route(&mut self, map_text: &str, start: &NodeId, goal: &NodeId) -> Option<Vec<NodeId>> {
        let question = format!(
            "Map:\n{map_text}\nList the node ids of a route from {start} to {goal}, comma separated, nothing else."
        );
        let bundle = self.bundle(&question);
        match self.remote_complete(&bundle) {
            Ok(RemoteReply::Message(text)) => text
                .split(',')
                .map(|s| NodeId::new(s.trim()).ok())
                .collect::<Option<Vec<_>>>(),
            Ok(_) => None,
            Err(e) => {
                self.diagnose(e.to_string());
                None
            }
        }
    }
}

/// Chat-completion response body carrying one tool call. Used by test
/// doubles and examples.
pub fn tool_call_response(name: &str, arguments: &Value) -> Value {
    json!({
        "choices": [{
            "index": 0,
            "message": {
                "role": "assistant",
                "content": null,
                "tool_calls": [{
                    "id": "call_0",
                    "type": "function",
                    "function": { "name": name, "arguments": arguments.to_string() }
                }]
            },
            "finish_reason": "tool_calls"
        }]
    })
}
