//! The gym automata: payload schemas, state records and transition rules.
//!
//! Each gym module exposes `Task` (its payload), `State`, `init`,
//! `initial_observation` and `step`. This module dispatches on [`GymState`].

pub mod expr;
pub mod function;
pub mod intention;
pub mod persuade;
pub mod search;
pub mod tau;
pub mod telepathy;
pub mod travel;
pub mod turtle;

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chat::ChatMessage;
use crate::env::{EnvConfig, EnvError, StepChoice};
use crate::task::{GymKind, TaskSpec};
use crate::usersim::{
    judge_with_retry, prompts, ParsedReply, Role, TemplateBindings, UserPort, UserQuery, UserSimError,
};

pub use search::{CannedSearch, HttpSearch, SearchBackend, SearchHit};
pub use tau::ExternalGym;

/// Per-gym automaton state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gym", rename_all = "snake_case")]
pub enum GymState {
    Function(function::State),
    Telepathy(telepathy::State),
    Turtle(turtle::State),
    Intention(intention::State),
    Persuade(persuade::State),
    Travel(travel::State),
    Search(search::State),
    TauStub(tau::State),
}

/// What a gym rule produced for one step, before reward post-processing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GymReply {
    pub observation: String,
    pub raw_reward: f64,
    pub goal: bool,
    pub info: BTreeMap<String, Value>,
}

impl GymReply {
    pub fn new(observation: impl Into<String>, raw_reward: f64) -> Self {
        Self { observation: observation.into(), raw_reward, ..Self::default() }
    }

    pub fn goal(mut self) -> Self {
        self.goal = true;
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.info.insert(key.into(), value.into());
        self
    }
}

/// Everything a transition may consult besides its own state.
pub struct StepContext<'a> {
    pub task_id: &'a str,
    pub turn_index: u32,
    pub config: &'a EnvConfig,
    pub user: &'a dyn UserPort,
    pub search: Option<&'a dyn SearchBackend>,
    pub external: Option<&'a dyn ExternalGym>,
}

/// One agent utterance and the simulated user's reply to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub agent: String,
    pub user: String,
}

/// Simulated-user roles a gym calls under `config`.
pub fn roles_needed(gym: GymKind, config: &EnvConfig) -> &'static [Role] {
    match gym {
        GymKind::Telepathy | GymKind::Turtle | GymKind::Intention => &[Role::Responder, Role::Judge],
        GymKind::Persuade | GymKind::Travel => &[Role::Responder],
        GymKind::Search if config.search_eval == crate::env::AnswerEval::LlmJudge => &[Role::Judge],
        GymKind::Search | GymKind::Function | GymKind::TauStub => &[],
    }
}

pub(crate) fn parse_payload<T: DeserializeOwned>(task: &TaskSpec) -> Result<T, EnvError> {
    serde_json::from_value(task.payload.clone()).map_err(|e| schema_error(task, e.to_string()))
}

pub(crate) fn schema_error(task: &TaskSpec, detail: impl Into<String>) -> EnvError {
    EnvError::Schema { task_id: task.task_id.clone(), detail: detail.into() }
}

pub fn init_state(
    task: &TaskSpec,
    _config: &EnvConfig,
    external: Option<&dyn ExternalGym>,
) -> Result<GymState, EnvError> {
    Ok(match task.gym {
        GymKind::Function => GymState::Function(function::init(task)?),
        GymKind::Telepathy => GymState::Telepathy(telepathy::init(task)?),
        GymKind::Turtle => GymState::Turtle(turtle::init(task)?),
        GymKind::Intention => GymState::Intention(intention::init(task)?),
        GymKind::Persuade => GymState::Persuade(persuade::init(task)?),
        GymKind::Travel => GymState::Travel(travel::init(task)?),
        GymKind::Search => GymState::Search(search::init(task)?),
        GymKind::TauStub => GymState::TauStub(tau::init(task, external)?),
    })
}

pub fn initial_observation(task: &TaskSpec, state: &GymState) -> String {
    let _ = task;
    match state {
        GymState::Function(s) => function::initial_observation(s),
        GymState::Telepathy(s) => telepathy::initial_observation(s),
        GymState::Turtle(s) => turtle::initial_observation(s),
        GymState::Intention(s) => intention::initial_observation(s),
        GymState::Persuade(s) => persuade::initial_observation(s),
        GymState::Travel(s) => travel::initial_observation(s),
        GymState::Search(s) => search::initial_observation(s),
        GymState::TauStub(s) => s.initial_observation.clone(),
    }
}

pub fn transition(state: &mut GymState, choice: &StepChoice, ctx: &StepContext<'_>) -> Result<GymReply, EnvError> {
    match state {
        GymState::Function(s) => Ok(function::step(s, choice)),
        GymState::Telepathy(s) => telepathy::step(s, choice, ctx),
        GymState::Turtle(s) => turtle::step(s, choice, ctx),
        GymState::Intention(s) => intention::step(s, choice, ctx),
        GymState::Persuade(s) => persuade::step(s, choice, ctx),
        GymState::Travel(s) => travel::step(s, choice, ctx),
        GymState::Search(s) => search::step(s, choice, ctx),
        GymState::TauStub(_) => tau::step(choice, ctx),
    }
}

/// Ground-truth strings for `task` that must never reach the agent's prompt.
pub fn secrets(task: &TaskSpec) -> Vec<String> {
    let state = match init_state(task, &EnvConfig::default(), None) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    match state {
        GymState::Function(s) => vec![s.hidden_rule],
        GymState::Telepathy(s) => vec![s.target_entity],
        GymState::Turtle(s) => vec![s.bottom],
        GymState::Intention(s) => s.missing_details.into_iter().map(|d| d.text).collect(),
        GymState::Persuade(_) | GymState::TauStub(_) => Vec::new(),
        GymState::Travel(s) => s.dimensions.into_iter().map(|d| d.preference).collect(),
        GymState::Search(s) => s.gold_answers,
    }
}

/// Render the role's instruction template and ask the user port, re-asking
/// once on an unparseable reply.
pub(crate) fn consult(
    ctx: &StepContext<'_>,
    gym: GymKind,
    role: Role,
    bindings: &TemplateBindings,
    dialogue: &[Exchange],
    choice: &StepChoice,
    criteria: Option<usize>,
) -> Result<ParsedReply, UserSimError> {
    let template = prompts::template(gym, role).ok_or(UserSimError::Unbound { gym, role })?;
    let system = template.render(bindings)?;
    let mut conversation = Vec::with_capacity(dialogue.len() * 2 + 1);
    for ex in dialogue {
        conversation.push(ChatMessage::user(ex.agent.clone()));
        conversation.push(ChatMessage::assistant(ex.user.clone()));
    }
    conversation.push(ChatMessage::user(choice.content.clone()));
    let query = UserQuery {
        gym,
        role,
        task_id: ctx.task_id,
        turn_index: ctx.turn_index,
        verb: choice.verb,
        system: &system,
        conversation: &conversation,
        input: &choice.content,
        attempt: 0,
    };
    let schema = prompts::reply_schema(gym, role, criteria);
    Ok(judge_with_retry(ctx.user, &query, &schema)?.fields)
}

pub(crate) fn bindings(pairs: &[(&str, String)]) -> TemplateBindings {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

pub(crate) fn port_failure(e: UserSimError) -> EnvError {
    EnvError::UserPortFailure(e)
}

#[cfg(test)]
pub(crate) mod testutil {
    use serde_json::Value;

    use crate::env::EnvConfig;
    use crate::task::{GymKind, TaskSpec};
    use crate::usersim::{ScriptedUser, UserPort};

    use super::StepContext;

    pub fn task(gym: GymKind, payload: Value) -> TaskSpec {
        TaskSpec { task_id: "t1".into(), gym, payload, metadata: Default::default() }
    }

    pub fn ctx<'a>(config: &'a EnvConfig, user: &'a dyn UserPort, turn: u32) -> StepContext<'a> {
        StepContext { task_id: "t1", turn_index: turn, config, user, search: None, external: None }
    }

    pub fn no_user() -> ScriptedUser {
        ScriptedUser::new()
    }

    /// Tables for task `t1` from `{"responder": {...}, "judge": {...}}`.
    pub fn script(roles: Value) -> ScriptedUser {
        ScriptedUser::from_json(&serde_json::json!({ "t1": roles }).to_string()).unwrap()
    }
}
