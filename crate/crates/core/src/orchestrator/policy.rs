//! Policy endpoints: the HTTP chat client and a scripted stand-in.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompt::TOOL_NAME;
use crate::chat::{
    ChatClient, ChatCompletion, ChatError, ChatMessage, ChatRequest, FunctionCall, MessageRole, ToolCall,
};

/// Anything that answers a chat request for the agent.
pub trait PolicyClient: Send + Sync {
    /// `task_id` identifies the episode's task; HTTP endpoints ignore it.
    fn respond(&self, task_id: &str, request: &ChatRequest) -> Result<ChatCompletion, ChatError>;

    /// Model name recorded in requests.
    fn model(&self) -> &str;

    fn health(&self) -> Result<(), ChatError> {
        Ok(())
    }
}

impl PolicyClient for ChatClient {
    fn respond(&self, _task_id: &str, request: &ChatRequest) -> Result<ChatCompletion, ChatError> {
        self.complete(request)
    }

    fn model(&self) -> &str {
        &self.config().model
    }

    fn health(&self) -> Result<(), ChatError> {
        ChatClient::health(self)
    }
}

/// One scripted assistant message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedTurn {
    /// A single well-formed tool call.
    Call { choice: String, content: String },
    /// Prose with no tool call.
    Text { text: String },
    /// Several tool calls in one message.
    Multi { calls: Vec<(String, String)> },
}

impl ScriptedTurn {
    pub fn call(choice: &str, content: &str) -> Self {
        ScriptedTurn::Call { choice: choice.into(), content: content.into() }
    }

    pub fn text(text: &str) -> Self {
        ScriptedTurn::Text { text: text.into() }
    }

    /// The assistant message this turn produces; `n` numbers the call ids.
    pub fn to_message(&self, n: usize) -> ChatMessage {
        let call = |i: usize, choice: &str, content: &str| ToolCall {
            id: format!("call_{n}_{i}"),
            kind: "function".into(),
            function: FunctionCall {
                name: TOOL_NAME.into(),
                arguments: json!({"choice": choice, "content": content}).to_string(),
            },
        };
        match self {
            ScriptedTurn::Call { choice, content } => ChatMessage {
                role: MessageRole::Assistant,
                content: Some(format!("<think>Next: {choice}.</think>")),
                tool_calls: vec![call(0, choice, content)],
                tool_call_id: None,
            },
            ScriptedTurn::Text { text } => ChatMessage::assistant(text.clone()),
            ScriptedTurn::Multi { calls } => ChatMessage {
                role: MessageRole::Assistant,
                content: Some("<think>Doing several things.</think>".into()),
                tool_calls: calls.iter().enumerate().map(|(i, (c, t))| call(i, c, t)).collect(),
                tool_call_id: None,
            },
        }
    }
}

/// Replays a fixed list of assistant turns per task, chosen by how many
/// assistant messages the request already contains. Tasks without a script
/// use the `*` entry. Past the end of a script, the last turn repeats.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptedPolicy {
    scripts: BTreeMap<String, Vec<ScriptedTurn>>,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, task_id: &str, turns: Vec<ScriptedTurn>) -> Self {
        self.scripts.insert(task_id.into(), turns);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn script_for(&self, task_id: &str) -> Option<&Vec<ScriptedTurn>> {
        self.scripts.get(task_id).or_else(|| self.scripts.get("*"))
    }
}

impl PolicyClient for ScriptedPolicy {
    fn respond(&self, task_id: &str, request: &ChatRequest) -> Result<ChatCompletion, ChatError> {
        let script = self.script_for(task_id).ok_or_else(|| ChatError::Decode("no script for task".into()))?;
        let n = request.messages.iter().filter(|m| m.role == MessageRole::Assistant).count();
        let turn = script.get(n).or(script.last()).ok_or_else(|| ChatError::Decode("empty script".into()))?;
        Ok(ChatCompletion { message: turn.to_message(n), usage: None, finish_reason: Some("stop".into()) })
    }

    fn model(&self) -> &str {
        "scripted"
    }
}
