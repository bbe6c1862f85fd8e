//! TelepathyGym: identify the entity the user is thinking of.
//!
//! Payload: `{"target_entity": "Eiffel Tower", "entity_description": "...", "category": "landmark"}`.
//! `category` is optional and shown to the agent.

use serde::{Deserialize, Serialize};

use super::{bindings, consult, parse_payload, port_failure, schema_error, GymReply, StepContext};
use crate::env::{EnvError, StepChoice, Verb};
use crate::task::{GymKind, TaskSpec};
use crate::usersim::Role;

#[derive(Deserialize)]
struct Task {
    target_entity: String,
    #[serde(default)]
    entity_description: String,
    #[serde(default)]
    category: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clue {
    pub question: String,
    pub reply: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub target_entity: String,
    pub entity_description: String,
    pub category: Option<String>,
    pub clue_history: Vec<Clue>,
    pub solved: bool,
}

pub fn init(task: &TaskSpec) -> Result<State, EnvError> {
    let t: Task = parse_payload(task)?;
    if t.target_entity.trim().is_empty() {
        return Err(schema_error(task, "target_entity is empty"));
    }
    Ok(State {
        target_entity: t.target_entity,
        entity_description: t.entity_description,
        category: t.category,
        clue_history: Vec::new(),
        solved: false,
    })
}

pub fn initial_observation(s: &State) -> String {
    let what = s.category.as_deref().map_or("an entity".to_string(), |c| format!("a {c}"));
    format!(
        "I am thinking of {what}. Ask yes/no questions with `action`; I will reply Yes, No or Maybe. \
When you are confident, give your final guess with `answer`."
    )
}

fn clue_text(clues: &[Clue]) -> String {
    if clues.is_empty() {
        return "(none)".into();
    }
    clues
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. Q: {} A: {}", i + 1, c.question, c.reply))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn step(s: &mut State, choice: &StepChoice, ctx: &StepContext<'_>) -> Result<GymReply, EnvError> {
    match choice.verb {
        Verb::Action => {
            let b = bindings(&[
                ("target_entity", s.target_entity.clone()),
                ("entity_description", s.entity_description.clone()),
            ]);
            let reply =
                consult(ctx, GymKind::Telepathy, Role::Responder, &b, &[], choice, None).map_err(port_failure)?;
            let label = reply.label("response").unwrap_or("Maybe").to_string();
            s.clue_history.push(Clue { question: choice.content.clone(), reply: label.clone() });
            Ok(GymReply::new(label, 0.0))
        }
        Verb::Answer => {
            let b =
                bindings(&[("target_entity", s.target_entity.clone()), ("clue_history", clue_text(&s.clue_history))]);
            let reply = consult(ctx, GymKind::Telepathy, Role::Judge, &b, &[], choice, None).map_err(port_failure)?;
            let feedback = reply.text("feedback").unwrap_or("").trim().to_string();
            if reply.label("judgment") == Some("Yes") {
                s.solved = true;
                let obs = if feedback.is_empty() { "Correct!".to_string() } else { feedback };
                Ok(GymReply::new(obs, 1.0).goal())
            } else {
                let obs = if feedback.is_empty() { "That is not it.".to_string() } else { feedback };
                Ok(GymReply::new(obs, 0.0))
            }
        }
        Verb::Search => unreachable!("verb table excludes search"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::gyms::testutil::{ctx, script, task};
    use serde_json::json;

    fn setup() -> (State, crate::usersim::ScriptedUser) {
        let s =
            init(&task(GymKind::Telepathy, json!({"target_entity": "Eiffel Tower", "category": "landmark"}))).unwrap();
        let user = script(json!({
            "responder": {"rules": [{"contains": "man-made", "reply": {"response": "Yes"}}], "default": {"response": "No"}},
            "judge": {"rules": [{"contains": "eiffel", "reply": {"judgment": "Yes", "feedback": "You got it!"}}],
                      "default": {"judgment": "No", "feedback": "Not quite."}}
        }));
        (s, user)
    }

    #[test]
    fn question_then_guesses() {
        let (mut s, user) = setup();
        let cfg = EnvConfig::default();
        let r = step(&mut s, &StepChoice::action("Is it a man-made structure?"), &ctx(&cfg, &user, 1)).unwrap();
        assert_eq!((r.observation.as_str(), r.raw_reward), ("Yes", 0.0));
        assert_eq!(s.clue_history.len(), 1);
        let r = step(&mut s, &StepChoice::answer("Louvre"), &ctx(&cfg, &user, 2)).unwrap();
        assert_eq!((r.raw_reward, r.goal), (0.0, false));
        let r = step(&mut s, &StepChoice::answer("Eiffel Tower"), &ctx(&cfg, &user, 3)).unwrap();
        assert_eq!((r.raw_reward, r.goal), (1.0, true));
        assert!(s.solved);
        assert!(initial_observation(&s).contains("landmark"));
        assert!(!initial_observation(&s).contains("Eiffel"));
    }

    #[test]
    fn malformed_reply_surfaces_after_one_retry() {
        let (mut s, _) = setup();
        let user = script(json!({"responder": {"default": {"response": "Perhaps"}}}));
        let cfg = EnvConfig::default();
        let before = s.clone();
        let err = step(&mut s, &StepChoice::action("Is it red?"), &ctx(&cfg, &user, 1)).unwrap_err();
        assert!(err.is_retryable());
        assert_eq!(s, before);
    }
}
