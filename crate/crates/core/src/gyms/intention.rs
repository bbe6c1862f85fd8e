//! IntentionGym: clarify a vague request by asking about its missing details.
//!
//! Payload: `{"task": "...", "missing_details": [{"text": "...", "importance": 3}, ...]}`
//! with importance 1 (low) to 3 (high). Detail indices are 0-based.

use std::thread;

use serde::{Deserialize, Serialize};

use super::{bindings, consult, parse_payload, port_failure, schema_error, Exchange, GymReply, StepContext};
use crate::env::{EnvError, StepChoice};
use crate::task::{GymKind, TaskSpec};
use crate::usersim::Role;

pub const MULTI_DETAIL_PENALTY: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detail {
    #[serde(alias = "description")]
    pub text: String,
    pub importance: u8,
    #[serde(default)]
    pub covered: bool,
}

#[derive(Deserialize)]
struct Task {
    task: String,
    missing_details: Vec<Detail>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub vague_task: String,
    pub missing_details: Vec<Detail>,
    pub dialogue: Vec<Exchange>,
}

pub fn init(task: &TaskSpec) -> Result<State, EnvError> {
    let t: Task = parse_payload(task)?;
    if t.missing_details.is_empty() {
        return Err(schema_error(task, "missing_details is empty"));
    }
    if let Some(d) = t.missing_details.iter().find(|d| !(1..=3).contains(&d.importance)) {
        return Err(schema_error(task, format!("importance {} outside 1..=3", d.importance)));
    }
    let missing_details = t.missing_details.into_iter().map(|d| Detail { covered: false, ..d }).collect();
    Ok(State { vague_task: t.task, missing_details, dialogue: Vec::new() })
}

pub fn initial_observation(s: &State) -> String {
    format!(
        "A user asks for help with the following request:\n{}\n\nThe request is vague. Use `action` to ask \
the user clarifying questions about what they need.",
        s.vague_task
    )
}

pub fn base_reward(importance: u8) -> f64 {
    match importance {
        3 => 1.0,
        2 => 0.7,
        _ => 0.4,
    }
}

/// Sum of base rewards for the newly covered details, less 0.2 for each beyond the first.
pub fn coverage_reward(importances: &[u8]) -> f64 {
    if importances.is_empty() {
        return 0.0;
    }
    let base: f64 = importances.iter().map(|&i| base_reward(i)).sum();
    base - MULTI_DETAIL_PENALTY * (importances.len() - 1) as f64
}

fn remaining_text(details: &[Detail]) -> String {
    let rows: Vec<String> = details
        .iter()
        .enumerate()
        .filter(|(_, d)| !d.covered)
        .map(|(i, d)| format!("{i}. importance {}: {}", d.importance, d.text))
        .collect();
    if rows.is_empty() {
        "(none)".into()
    } else {
        rows.join("\n")
    }
}

pub fn step(s: &mut State, choice: &StepChoice, ctx: &StepContext<'_>) -> Result<GymReply, EnvError> {
    let responder_b = bindings(&[("task", s.vague_task.clone())]);
    let judge_b = bindings(&[("task", s.vague_task.clone()), ("missing_details", remaining_text(&s.missing_details))]);
    let dialogue = &s.dialogue;
    let (response, coverage) = thread::scope(|scope| {
        let judge = scope.spawn(|| consult(ctx, GymKind::Intention, Role::Judge, &judge_b, &[], choice, None));
        let response = consult(ctx, GymKind::Intention, Role::Responder, &responder_b, dialogue, choice, None);
        (response, judge.join().expect("coverage judge panicked"))
    });
    let response = response.map_err(port_failure)?;
    let coverage = coverage.map_err(port_failure)?;

    let mut newly = Vec::new();
    let mut dropped = Vec::new();
    for i in coverage.indices("covered_detail_indices") {
        match s.missing_details.get(i) {
            None => dropped.push(i),
            Some(d) if !d.covered && !newly.contains(&i) => newly.push(i),
            Some(_) => {}
        }
    }
    if !dropped.is_empty() {
        log::warn!("{}: coverage judge returned out-of-range indices {dropped:?}", ctx.task_id);
    }
    let importances: Vec<u8> = newly.iter().map(|&i| s.missing_details[i].importance).collect();
    for &i in &newly {
        s.missing_details[i].covered = true;
    }
    let text = response.text("response").unwrap_or("").to_string();
    s.dialogue.push(Exchange { agent: choice.content.clone(), user: text.clone() });

    let mut out = GymReply::new(text, coverage_reward(&importances)).with("covered", newly);
    if !dropped.is_empty() {
        out = out.with("dropped_indices", dropped);
    }
    Ok(if s.missing_details.iter().all(|d| d.covered) { out.goal() } else { out })
}
