//! TurtleGym: reconstruct the hidden story behind a puzzling scenario.
//!
//! Payload: `{"surface": "...", "bottom": "...", "criteria": [{"statement": "...", "weight": 0.5}, ...]}`.
//! Weights must sum to 1.

use serde::{Deserialize, Serialize};

use super::{bindings, consult, parse_payload, port_failure, schema_error, GymReply, StepContext};
use crate::env::{EnvError, StepChoice, Verb};
use crate::task::{GymKind, TaskSpec};
use crate::usersim::Role;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub statement: String,
    pub weight: f64,
}

#[derive(Deserialize)]
struct Task {
    surface: String,
    bottom: String,
    criteria: Vec<Criterion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub surface: String,
    pub bottom: String,
    pub criteria: Vec<Criterion>,
    pub best_score: f64,
}

pub fn init(task: &TaskSpec) -> Result<State, EnvError> {
    let t: Task = parse_payload(task)?;
    if t.criteria.is_empty() {
        return Err(schema_error(task, "criteria is empty"));
    }
    if t.criteria.iter().any(|c| !(c.weight >= 0.0 && c.weight.is_finite())) {
        return Err(schema_error(task, "criterion weights must be non-negative"));
    }
    let total: f64 = t.criteria.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(schema_error(task, format!("criterion weights sum to {total}, expected 1")));
    }
    Ok(State { surface: t.surface, bottom: t.bottom, criteria: t.criteria, best_score: 0.0 })
}

pub fn initial_observation(s: &State) -> String {
    format!(
        "Here is a puzzling story:\n{}\n\nFigure out what really happened. Ask yes/no questions with `action`; \
I will reply Yes, No or Maybe. Submit your explanation of the full story with `answer`.",
        s.surface
    )
}

/// Weighted sum of per-criterion scores.
pub fn weighted_score(criteria: &[Criterion], scores: &[f64]) -> f64 {
    criteria.iter().zip(scores).map(|(c, s)| c.weight * s).sum()
}

pub fn step(s: &mut State, choice: &StepChoice, ctx: &StepContext<'_>) -> Result<GymReply, EnvError> {
    match choice.verb {
        Verb::Action => {
            let b = bindings(&[("surface", s.surface.clone()), ("bottom", s.bottom.clone())]);
            let reply = consult(ctx, GymKind::Turtle, Role::Responder, &b, &[], choice, None).map_err(port_failure)?;
            Ok(GymReply::new(reply.label("response").unwrap_or("Maybe"), 0.0))
        }
        Verb::Answer => {
            let protocol = s
                .criteria
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{}. {} (weight {})", i + 1, c.statement, c.weight))
                .collect::<Vec<_>>()
                .join("\n");
            let b = bindings(&[("surface", s.surface.clone()), ("bottom", s.bottom.clone()), ("criteria", protocol)]);
            let reply = consult(ctx, GymKind::Turtle, Role::Judge, &b, &[], choice, Some(s.criteria.len()))
                .map_err(port_failure)?;
            let scores = reply.scores("scores");
            let score = weighted_score(&s.criteria, &scores);
            let reward = if score > s.best_score { score - s.best_score } else { 0.0 };
            s.best_score = s.best_score.max(score);
            let feedback = reply.text("feedback").unwrap_or("").trim();
            let mut obs = format!("Your story scores {score:.2}.");
            if !feedback.is_empty() {
                obs.push(' ');
                obs.push_str(feedback);
            }
            let out = GymReply::new(obs, reward).with("score", score).with("scores", scores);
            Ok(if score >= ctx.config.success_threshold { out.goal() } else { out })
        }
        Verb::Search => unreachable!("verb table excludes search"),
    }
}
