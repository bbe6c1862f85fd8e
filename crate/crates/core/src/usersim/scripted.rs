//! Deterministic decision-table user, used in tests and offline runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PortKind, Role, UserPort, UserQuery, UserSimError};
use crate::task::GymKind;

/// Lowercase, trim, collapse whitespace and drop trailing `?!.` so that
/// trivially different phrasings hit the same table row.
pub fn canonicalize(input: &str) -> String {
    let collapsed = input.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches(['?', '!', '.', ' ']).to_string()
}

/// One row: matches on the canonical input (exactly or by substring) and
/// optionally on the attempt number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    pub reply: Value,
}

impl ScriptRule {
    fn matches(&self, canonical: &str, attempt: u32) -> bool {
        if self.attempt.is_some_and(|a| a != attempt) {
            return false;
        }
        if let Some(exact) = &self.input {
            if canonicalize(exact) != canonical {
                return false;
            }
        }
        if let Some(needle) = &self.contains {
            if !canonical.contains(&canonicalize(needle)) {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptTable {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    pub default: Value,
}

impl ScriptTable {
    pub fn lookup(&self, input: &str, attempt: u32) -> String {
        let canonical = canonicalize(input);
        let reply =
            self.rules.iter().find(|r| r.matches(&canonical, attempt)).map(|r| &r.reply).unwrap_or(&self.default);
        reply_text(reply)
    }
}

fn reply_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => format!("```json\n{}\n```", serde_json::to_string(other).unwrap_or_default()),
    }
}

/// Per-task tables keyed by role. File layout:
/// `{"<task_id>": {"responder": {"rules": [...], "default": ...}, "judge": {...}}}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptedUser {
    tables: BTreeMap<String, BTreeMap<Role, ScriptTable>>,
}

impl ScriptedUser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task_id: impl Into<String>, role: Role, table: ScriptTable) {
        self.tables.entry(task_id.into()).or_default().insert(role, table);
    }

    pub fn with(mut self, task_id: impl Into<String>, role: Role, table: ScriptTable) -> Self {
        self.insert(task_id, role, table);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn has_task(&self, task_id: &str) -> bool {
        self.tables.contains_key(task_id)
    }
}

impl UserPort for ScriptedUser {
    fn kind(&self) -> PortKind {
        PortKind::Scripted
    }

    fn query(&self, q: &UserQuery<'_>) -> Result<String, UserSimError> {
        let table = self
            .tables
            .get(q.task_id)
            .and_then(|roles| roles.get(&q.role))
            .ok_or(UserSimError::Unbound { gym: q.gym, role: q.role })?;
        Ok(table.lookup(q.input, q.attempt))
    }

    fn supports(&self, _gym: GymKind, _role: Role) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Verb;

    fn table() -> ScriptTable {
        serde_json::from_value(serde_json::json!({
            "rules": [
                {"input": "Is it in Europe?", "reply": {"response": "Yes"}},
                {"contains": "made of metal", "reply": "{\"response\": \"Yes\"}"},
                {"input": "retry me", "attempt": 0, "reply": "garbage"},
                {"input": "retry me", "reply": {"response": "No"}}
            ],
            "default": {"response": "Maybe"}
        }))
        .unwrap()
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(canonicalize("  Is it   in EUROPE?? "), "is it in europe");
        assert_eq!(canonicalize("Hello."), "hello");
    }

    #[test]
    fn lookup_is_total_and_deterministic() {
        let t = table();
        assert_eq!(t.lookup("is it in europe", 0), "```json\n{\"response\":\"Yes\"}\n```");
        assert_eq!(t.lookup("Is the tower made of metal?", 0), "{\"response\": \"Yes\"}");
        assert_eq!(t.lookup("anything else", 0), "```json\n{\"response\":\"Maybe\"}\n```");
        assert_eq!(t.lookup("retry me", 0), "garbage");
        assert_eq!(t.lookup("retry me", 1), "```json\n{\"response\":\"No\"}\n```");
        for _ in 0..3 {
            assert_eq!(t.lookup("Is it in Europe?", 0), t.lookup("Is it in Europe?", 0));
        }
    }

    #[test]
    fn port_lookup_by_task_and_role() {
        let user = ScriptedUser::new().with("tel-1", Role::Responder, table());
        let conv = [crate::chat::ChatMessage::user("Is it in Europe?")];
        let mut q = UserQuery {
            gym: GymKind::Telepathy,
            role: Role::Responder,
            task_id: "tel-1",
            turn_index: 1,
            verb: Verb::Action,
            system: "",
            conversation: &conv,
            input: "Is it in Europe?",
            attempt: 0,
        };
        assert!(user.query(&q).unwrap().contains("Yes"));
        q.role = Role::Judge;
        assert!(matches!(user.query(&q), Err(UserSimError::Unbound { .. })));
    }
}
