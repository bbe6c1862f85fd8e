//! PersuadeGym: move a persona from agreement to disagreement with a statement.
//!
//! Payload: `{"statement": "...", "argument": "..."}`; the persona starts at
//! "Strongly Agree" (level 0) unless `initial_stance` names another label.

use serde::{Deserialize, Serialize};

use super::{bindings, consult, parse_payload, port_failure, schema_error, Exchange, GymReply, StepContext};
use crate::env::{EnvError, StepChoice};
use crate::task::{GymKind, TaskSpec};
use crate::usersim::prompts::STANCE_LABELS;
use crate::usersim::Role;

pub const MAX_LEVEL: u8 = 6;

#[derive(Deserialize)]
struct Task {
    statement: String,
    #[serde(alias = "initial_argument")]
    argument: String,
    #[serde(default)]
    initial_stance: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub statement: String,
    pub initial_argument: String,
    pub stance_level: u8,
    pub dialogue: Vec<Exchange>,
}

impl State {
    pub fn stance(&self) -> &'static str {
        STANCE_LABELS[self.stance_level as usize]
    }
}

pub fn level_of(label: &str) -> Option<u8> {
    STANCE_LABELS.iter().position(|l| l.eq_ignore_ascii_case(label.trim())).map(|i| i as u8)
}

/// Stance value on the 0..1 ladder.
pub fn stance_value(level: u8) -> f64 {
    f64::from(level) / f64::from(MAX_LEVEL)
}

pub fn init(task: &TaskSpec) -> Result<State, EnvError> {
    let t: Task = parse_payload(task)?;
    let stance_level = match &t.initial_stance {
        None => 0,
        Some(l) => level_of(l).ok_or_else(|| schema_error(task, format!("unknown stance `{l}`")))?,
    };
    Ok(State { statement: t.statement, initial_argument: t.argument, stance_level, dialogue: Vec::new() })
}

pub fn initial_observation(s: &State) -> String {
    format!(
        "You are talking with someone who holds this view:\nStatement: {}\nTheir argument: {}\n\n\
Use `action` to present arguments that persuade them to disagree with the statement.",
        s.statement, s.initial_argument
    )
}

pub fn step(s: &mut State, choice: &StepChoice, ctx: &StepContext<'_>) -> Result<GymReply, EnvError> {
    let b = bindings(&[
        ("statement", s.statement.clone()),
        ("argument", s.initial_argument.clone()),
        ("stance", s.stance().to_string()),
    ]);
    let reply = match consult(ctx, GymKind::Persuade, Role::Responder, &b, &s.dialogue, choice, None) {
        Ok(r) => r,
        Err(e) if e.is_parse_failure() => {
            log::warn!("{}: persona reply unusable after retry ({e}); stance unchanged", ctx.task_id);
            let obs = "(The other person's reply could not be understood.)";
            s.dialogue.push(Exchange { agent: choice.content.clone(), user: obs.into() });
            return Ok(GymReply::new(obs, 0.0).with("error", "unknown_stance_label").with("stance", s.stance()));
        }
        Err(e) => return Err(port_failure(e)),
    };
    let new_level = reply.label("stance").and_then(level_of).expect("schema restricts stance labels");
    let reward = f64::from(new_level.saturating_sub(s.stance_level)) / f64::from(MAX_LEVEL);
    s.stance_level = new_level;
    let text = reply.text("response").unwrap_or("").to_string();
    s.dialogue.push(Exchange { agent: choice.content.clone(), user: text.clone() });
    let out = GymReply::new(text, reward).with("stance", s.stance());
    Ok(if new_level == MAX_LEVEL { out.goal() } else { out })
}
