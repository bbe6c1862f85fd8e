//! User simulation: the port gyms talk to, its three implementations, the
//! per-gym instruction templates and structured-reply parsing.

pub mod human;
mod llm;
mod parse;
pub mod prompts;
mod scripted;
mod template;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{ChatError, ChatMessage};
use crate::env::Verb;
use crate::task::GymKind;

pub use human::{BridgeMessage, HumanBridge, HumanReply};
pub use llm::{LlmUserPort, Sampling};
pub use parse::{parse_structured_reply, render_fenced, FieldKind, FieldSpec, ParsedReply, ReplySchema};
pub use scripted::{canonicalize, ScriptRule, ScriptTable, ScriptedUser};
pub use template::{PromptTemplate, TemplateBindings};

/// Which simulated-user job a call performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Talks back to the agent (answers questions, reacts to arguments).
    Responder,
    /// Grades the agent (guess correctness, story scores, coverage).
    Judge,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Responder => "responder",
            Role::Judge => "judge",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "responder" => Ok(Role::Responder),
            "judge" => Ok(Role::Judge),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

/// One request to the simulated user.
///
/// `conversation` is what an LLM sees after the system text; `input` is the
/// agent content being reacted to (scripted tables and the human bridge key on it).
#[derive(Clone, Debug)]
pub struct UserQuery<'a> {
    pub gym: GymKind,
    pub role: Role,
    pub task_id: &'a str,
    pub turn_index: u32,
    pub verb: Verb,
    pub system: &'a str,
    pub conversation: &'a [ChatMessage],
    pub input: &'a str,
    /// 0 for the first ask, 1 for the format-reminder re-ask.
    pub attempt: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortKind {
    Llm,
    Scripted,
    Human,
}

pub trait UserPort: Send + Sync {
    fn kind(&self) -> PortKind;

    /// Raw reply text for one query.
    fn query(&self, query: &UserQuery<'_>) -> Result<String, UserSimError>;

    /// Whether the port can serve `role` for `gym`.
    fn supports(&self, _gym: GymKind, _role: Role) -> bool {
        true
    }
}

#[derive(Debug, Error)]
pub enum UserSimError {
    #[error("endpoint timed out after {attempts} attempts")]
    EndpointTimeout { attempts: u32 },
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("no human reply before the deadline")]
    HumanTimeout,
    #[error("human bridge closed")]
    BridgeClosed,
    #[error("reply contains no structured content")]
    NoStructuredContent,
    #[error("reply field `{field}` invalid: {detail}")]
    SchemaViolation { field: String, detail: String },
    #[error("template placeholders not bound: {}", .0.join(", "))]
    MissingPlaceholder(Vec<String>),
    #[error("no {role} bound for {gym}")]
    Unbound { gym: GymKind, role: Role },
}

impl From<ChatError> for UserSimError {
    fn from(e: ChatError) -> Self {
        match e {
            ChatError::Timeout { attempts } => UserSimError::EndpointTimeout { attempts },
            other => UserSimError::Endpoint(other.to_string()),
        }
    }
}

impl UserSimError {
    pub fn is_parse_failure(&self) -> bool {
        matches!(self, UserSimError::NoStructuredContent | UserSimError::SchemaViolation { .. })
    }
}

const FORMAT_REMINDER: &str = "Your previous reply could not be parsed. Reply again using exactly the JSON format from your instructions, inside a ```json fenced block.";

/// Result of [`judge_with_retry`]: the parsed fields and how many re-asks it took.
#[derive(Clone, Debug, PartialEq)]
pub struct JudgedReply {
    pub fields: ParsedReply,
    pub retries: u32,
}

/// Query, parse, and on a parse failure re-ask once with a format reminder.
pub fn judge_with_retry(
    port: &dyn UserPort,
    query: &UserQuery<'_>,
    schema: &ReplySchema,
) -> Result<JudgedReply, UserSimError> {
    let raw = port.query(query)?;
    let first_err = match parse_structured_reply(&raw, schema) {
        Ok(fields) => return Ok(JudgedReply { fields, retries: 0 }),
        Err(e) if e.is_parse_failure() => e,
        Err(e) => return Err(e),
    };
    log::debug!("{} {} reply unparseable ({first_err}); re-asking", query.gym, query.role);

    let mut conversation = query.conversation.to_vec();
    conversation.push(ChatMessage::assistant(raw));
    conversation.push(ChatMessage::user(FORMAT_REMINDER));
    let retry = UserQuery { conversation: &conversation, attempt: query.attempt + 1, ..query.clone() };
    let raw = port.query(&retry)?;
    let fields = parse_structured_reply(&raw, schema)?;
    Ok(JudgedReply { fields, retries: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Canned {
        replies: Mutex<Vec<String>>,
        calls: Mutex<u32>,
    }

    impl Canned {
        fn new(replies: &[&str]) -> Self {
            Self { replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()), calls: Mutex::new(0) }
        }
    }

    impl UserPort for Canned {
        fn kind(&self) -> PortKind {
            PortKind::Scripted
        }

        fn query(&self, _q: &UserQuery<'_>) -> Result<String, UserSimError> {
            *self.calls.lock().unwrap() += 1;
            Ok(self.replies.lock().unwrap().pop().unwrap_or_default())
        }
    }

    fn query<'a>(conv: &'a [ChatMessage]) -> UserQuery<'a> {
        UserQuery {
            gym: GymKind::Telepathy,
            role: Role::Responder,
            task_id: "t",
            turn_index: 1,
            verb: Verb::Action,
            system: "sys",
            conversation: conv,
            input: "Is it in Europe?",
            attempt: 0,
        }
    }

    #[test]
    fn retry_contract() {
        let schema = prompts::reply_schema(GymKind::Telepathy, Role::Responder, None);
        let conv = [ChatMessage::user("Is it in Europe?")];

        let port = Canned::new(&["I think so", r#"{"response":"Yes"}"#]);
        let out = judge_with_retry(&port, &query(&conv), &schema).unwrap();
        assert_eq!(out.retries, 1);
        assert_eq!(out.fields.label("response"), Some("Yes"));
        assert_eq!(*port.calls.lock().unwrap(), 2);

        let port = Canned::new(&["nope", r#"{"response":"Perhaps"}"#]);
        let err = judge_with_retry(&port, &query(&conv), &schema).unwrap_err();
        assert!(matches!(err, UserSimError::SchemaViolation { ref field, .. } if field == "response"));

        let port = Canned::new(&[r#"```json
{"thought":"x","response":"No"}
```"#]);
        let out = judge_with_retry(&port, &query(&conv), &schema).unwrap();
        assert_eq!(out.retries, 0);
        assert_eq!(*port.calls.lock().unwrap(), 1);
    }
}
