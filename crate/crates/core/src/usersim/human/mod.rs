//! Human-in-the-loop user port.
//!
//! A person plays the simulated user through a console. Messages are JSON
//! objects tagged by `type`, one per line (or one per WebSocket text frame):
//!
//! | direction       | type            | fields                                                    |
//! |-----------------|-----------------|-----------------------------------------------------------|
//! | server → human  | `session_start` | `session_id`, `gym`, `task_id`, `ground_truth?`           |
//! | server → human  | `agent_turn`    | `turn_index`, `verb`, `content`, `role?`, `options?`, `instructions?` |
//! | human → server  | `human_reply`   | `content?`, `enum_choice?`, `scores?`, `covered_indices?` |
//! | server → human  | `turn_reward`   | `turn_index`, `value`                                     |
//! | server → human  | `session_end`   | `metrics`                                                 |
//! | server → human  | `error`         | `message`                                                 |
//!
//! Exactly one `agent_turn` is pending at a time; replies are consumed in order.

pub mod ws;

use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::prompts::STANCE_LABELS;
use super::{PortKind, Role, UserPort, UserQuery, UserSimError};
use crate::env::Verb;
use crate::task::GymKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BridgeMessage {
    SessionStart {
        session_id: String,
        gym: GymKind,
        task_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ground_truth: Option<Value>,
    },
    AgentTurn {
        turn_index: u32,
        verb: Verb,
        content: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        role: Option<Role>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        options: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instructions: Option<String>,
    },
    HumanReply(HumanReply),
    TurnReward {
        turn_index: u32,
        value: f64,
    },
    SessionEnd {
        metrics: Value,
    },
    Error {
        message: String,
    },
}

impl BridgeMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("bridge messages always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim())
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            BridgeMessage::SessionStart { .. } => "session_start",
            BridgeMessage::AgentTurn { .. } => "agent_turn",
            BridgeMessage::HumanReply(_) => "human_reply",
            BridgeMessage::TurnReward { .. } => "turn_reward",
            BridgeMessage::SessionEnd { .. } => "session_end",
            BridgeMessage::Error { .. } => "error",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HumanReply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_choice: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covered_indices: Option<Vec<usize>>,
}

impl HumanReply {
    pub fn choice(label: &str) -> Self {
        Self { enum_choice: Some(label.into()), ..Self::default() }
    }

    pub fn text(content: &str) -> Self {
        Self { content: Some(content.into()), ..Self::default() }
    }

    /// Re-express the reply in the structured form the gym's parser expects.
    pub fn to_structured(&self, gym: GymKind, role: Role) -> String {
        let mut obj = Map::new();
        let content = self.content.clone().unwrap_or_default();
        let choice = self.enum_choice.clone();
        match (gym, role) {
            (GymKind::Telepathy | GymKind::Turtle, Role::Responder) => {
                obj.insert("response".into(), json!(choice.unwrap_or(content)));
            }
            (GymKind::Telepathy | GymKind::Search, Role::Judge) => {
                obj.insert("judgment".into(), json!(choice));
                obj.insert("feedback".into(), json!(content));
            }
            (GymKind::Turtle, Role::Judge) => {
                obj.insert("scores".into(), json!(self.scores.clone().unwrap_or_default()));
                obj.insert("feedback".into(), json!(content));
            }
            (GymKind::Persuade, Role::Responder) => {
                obj.insert("response".into(), json!(content));
                obj.insert("stance".into(), json!(choice));
            }
            (GymKind::Intention, Role::Judge) => {
                obj.insert("covered_detail_indices".into(), json!(self.covered_indices.clone().unwrap_or_default()));
            }
            (GymKind::Travel, Role::Responder) => {
                obj.insert("type".into(), json!(choice));
                obj.insert("response".into(), json!(content));
            }
            _ => {
                obj.insert("response".into(), json!(content));
            }
        }
        format!("```json\n{}\n```", Value::Object(obj))
    }
}

/// Enumerated choices the console should offer as buttons for a role.
pub fn reply_options(gym: GymKind, role: Role) -> Option<Vec<String>> {
    let v = |ls: &[&str]| Some(ls.iter().map(|s| s.to_string()).collect());
    match (gym, role) {
        (GymKind::Telepathy | GymKind::Turtle, Role::Responder) => v(&["Yes", "No", "Maybe"]),
        (GymKind::Telepathy | GymKind::Search, Role::Judge) => v(&["Yes", "No"]),
        (GymKind::Persuade, Role::Responder) => v(&STANCE_LABELS),
        (GymKind::Travel, Role::Responder) => v(&["1", "2", "3", "4"]),
        _ => None,
    }
}

/// Carries bridge messages to and from one console.
pub trait BridgeTransport: Send + Sync {
    fn send(&self, msg: &BridgeMessage) -> Result<(), UserSimError>;
    /// `Ok(None)` when nothing arrived within `timeout`.
    fn recv(&self, timeout: Duration) -> Result<Option<BridgeMessage>, UserSimError>;
}

/// In-process transport; the other end is a [`ConsoleEnd`].
pub struct ChannelTransport {
    to_console: Sender<BridgeMessage>,
    from_console: Mutex<Receiver<BridgeMessage>>,
}

/// The console side of a [`ChannelTransport`].
pub struct ConsoleEnd {
    pub inbox: Receiver<BridgeMessage>,
    pub outbox: Sender<BridgeMessage>,
}

pub fn channel_pair() -> (ChannelTransport, ConsoleEnd) {
    let (to_console, inbox) = mpsc::channel();
    let (outbox, from_console) = mpsc::channel();
    (ChannelTransport { to_console, from_console: Mutex::new(from_console) }, ConsoleEnd { inbox, outbox })
}

impl BridgeTransport for ChannelTransport {
    fn send(&self, msg: &BridgeMessage) -> Result<(), UserSimError> {
        self.to_console.send(msg.clone()).map_err(|_| UserSimError::BridgeClosed)
    }

    fn recv(&self, timeout: Duration) -> Result<Option<BridgeMessage>, UserSimError> {
        match self.from_console.lock().unwrap_or_else(|e| e.into_inner()).recv_timeout(timeout) {
            Ok(m) => Ok(Some(m)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(UserSimError::BridgeClosed),
        }
    }
}

/// User port backed by a person at a console.
pub struct HumanBridge {
    session_id: String,
    transport: Arc<dyn BridgeTransport>,
    reply_deadline: Duration,
    pending: Mutex<Option<u32>>,
    log: Mutex<Vec<BridgeMessage>>,
}

impl HumanBridge {
    pub fn new(session_id: impl Into<String>, transport: Arc<dyn BridgeTransport>, reply_deadline: Duration) -> Self {
        Self {
            session_id: session_id.into(),
            transport,
            reply_deadline,
            pending: Mutex::new(None),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    fn emit(&self, msg: BridgeMessage) -> Result<(), UserSimError> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(msg.clone());
        self.transport.send(&msg)
    }

    pub fn start(&self, gym: GymKind, task_id: &str, ground_truth: Option<Value>) -> Result<(), UserSimError> {
        self.emit(BridgeMessage::SessionStart {
            session_id: self.session_id.clone(),
            gym,
            task_id: task_id.to_string(),
            ground_truth,
        })
    }

    pub fn turn_reward(&self, turn_index: u32, value: f64) -> Result<(), UserSimError> {
        self.emit(BridgeMessage::TurnReward { turn_index, value })
    }

    pub fn end(&self, metrics: Value) -> Result<(), UserSimError> {
        self.emit(BridgeMessage::SessionEnd { metrics })
    }

    /// Every message sent or received so far, in order.
    pub fn message_log(&self) -> Vec<BridgeMessage> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl UserPort for HumanBridge {
    fn kind(&self) -> PortKind {
        PortKind::Human
    }

    fn query(&self, q: &UserQuery<'_>) -> Result<String, UserSimError> {
        // Held for the whole exchange: one pending prompt per session.
        let mut pending = self.pending.lock().unwrap_or_else(|e| e.into_inner());
        *pending = Some(q.turn_index);
        self.emit(BridgeMessage::AgentTurn {
            turn_index: q.turn_index,
            verb: q.verb,
            content: q.input.to_string(),
            role: Some(q.role),
            options: reply_options(q.gym, q.role),
            instructions: Some(q.system.to_string()),
        })?;
        let deadline = Instant::now() + self.reply_deadline;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                *pending = None;
                return Err(UserSimError::HumanTimeout);
            }
            match self.transport.recv(left)? {
                Some(BridgeMessage::HumanReply(reply)) => {
                    self.log.lock().unwrap_or_else(|e| e.into_inner()).push(BridgeMessage::HumanReply(reply.clone()));
                    *pending = None;
                    return Ok(reply.to_structured(q.gym, q.role));
                }
                Some(other) => log::debug!("ignoring {} from console", other.type_name()),
                None => {}
            }
        }
    }
}
