use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Version of the shipped system prompt template.
pub const SYSTEM_PROMPT_VERSION: &str = "guide-system-v1";

const SYSTEM_TEMPLATE: &str = include_str!("../../prompts/system_v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

/// Everything sent to the model for one completion. The first message is
/// always the system message.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub conversation: Vec<ChatMessage>,
    pub tools: Value,
}

impl PromptBundle {
    pub fn system_prompt(&self) -> &str {
        &self.conversation[0].content
    }
}

pub fn render_system_prompt(map_name: &str, route_text: &str) -> String {
    SYSTEM_TEMPLATE
        .replace("{{version}}", SYSTEM_PROMPT_VERSION)
        .replace("{{map_name}}", map_name)
        .replace("{{route_text}}", route_text)
        .replace("{{tool_schemas}}", &tool_schemas_json())
}

/// Assemble a bundle. With `include_system_prompt == false` the system
/// message is present but empty.
pub fn build_bundle(
    include_system_prompt: bool,
    map_name: &str,
    route_text: &str,
    history: &[ChatMessage],
    user: &str,
) -> PromptBundle {
    let system = if include_system_prompt {
        render_system_prompt(map_name, route_text)
    } else {
        String::new()
    };
    let mut conversation = vec![ChatMessage::new(Role::System, system)];
    conversation.extend(history.iter().filter(|m| m.role != Role::System).cloned());
    conversation.push(ChatMessage::new(Role::User, user));
    PromptBundle {
        conversation,
        tools: tool_schemas(),
    }
}

/// Declared tools in chat-completion `tools` form.
pub fn tool_schemas() -> Value {
    let function = |name: &str, description: &str, parameters: Value| {
        json!({
            "type": "function",
            "function": { "name": name, "description": description, "parameters": parameters }
        })
    };
    json!([
        function(
            "plan_route",
            "Plan a route from the current position to a destination named by the user.",
            json!({
                "type": "object",
                "properties": { "destination": { "type": "string" } },
                "required": ["destination"]
            })
        ),
        function(
            "query_images",
            "Retrieve the stored image embedding for a node and orientation.",
            json!({
                "type": "object",
                "properties": {
                    "store": { "type": "string", "enum": ["environment", "navigational"] },
                    "node": { "type": "string" },
                    "orientation": { "type": "integer", "enum": [0, 90, 180, 270] }
                },
                "required": ["store", "node", "orientation"]
            })
        ),
        function(
            "send_user_message",
            "Say something to the user.",
            json!({
                "type": "object",
                "properties": { "text": { "type": "string" } },
                "required": ["text"]
            })
        ),
        function(
            "issue_move",
            "Turn and walk one straight leg.",
            json!({
                "type": "object",
                "properties": {
                    "turn": { "type": "string", "enum": ["straight", "left", "right", "turn_around"] },
                    "distance": { "type": "number", "exclusiveMinimum": 0 }
                },
                "required": ["turn", "distance"]
            })
        ),
        function(
            "set_preference",
            "Change a user preference.",
            json!({
                "type": "object",
                "properties": {
                    "preference": {
                        "type": "string",
                        "enum": ["avoid_tag", "clear_avoid_tag", "speed", "faster", "slower", "verbosity"]
                    },
                    "tag": { "type": "string" },
                    "speed_mps": { "type": "number", "exclusiveMinimum": 0 },
                    "verbosity": { "type": "string", "enum": ["brief", "detailed"] }
                },
                "required": ["preference"]
            })
        ),
        function(
            "hazard_decision",
            "Record the user's answer to a hazard warning.",
            json!({
                "type": "object",
                "properties": { "decision": { "type": "string", "enum": ["proceed", "reroute"] } },
                "required": ["decision"]
            })
        ),
    ])
}

pub fn tool_schemas_json() -> String {
    serde_json::to_string_pretty(&tool_schemas()).expect("static schema serializes")
}
