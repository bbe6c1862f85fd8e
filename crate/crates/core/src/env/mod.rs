//! The gym contract: step verbs, outcomes, configuration, reward post-processing
//! and the session state machine every environment runs inside.

mod session;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::task::GymKind;
use crate::usersim::UserSimError;

pub use session::{Env, EnvSession, HistoryEntry, Ports};

/// The three operation types of the standardized tool interface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Action,
    Search,
    Answer,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Action => "action",
            Verb::Search => "search",
            Verb::Answer => "answer",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "action" => Ok(Verb::Action),
            "search" => Ok(Verb::Search),
            "answer" => Ok(Verb::Answer),
            other => Err(format!("unknown choice `{other}`")),
        }
    }
}

/// Verbs each gym accepts. Checked here, before any gym logic runs.
pub fn allowed_verbs(gym: GymKind) -> &'static [Verb] {
    match gym {
        GymKind::Function | GymKind::Travel | GymKind::TauStub => &[Verb::Action, Verb::Search, Verb::Answer],
        GymKind::Telepathy | GymKind::Turtle => &[Verb::Action, Verb::Answer],
        GymKind::Intention | GymKind::Persuade => &[Verb::Action],
        GymKind::Search => &[Verb::Search, Verb::Answer],
    }
}

/// One agent tool call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepChoice {
    #[serde(rename = "choice")]
    pub verb: Verb,
    pub content: String,
}

impl StepChoice {
    pub fn new(verb: Verb, content: impl Into<String>) -> Self {
        Self { verb, content: content.into() }
    }

    pub fn action(content: impl Into<String>) -> Self {
        Self::new(Verb::Action, content)
    }

    pub fn search(content: impl Into<String>) -> Self {
        Self::new(Verb::Search, content)
    }

    pub fn answer(content: impl Into<String>) -> Self {
        Self::new(Verb::Answer, content)
    }
}

/// The environment's reply to one step.
///
/// `raw_reward` is what the gym rule emitted; `reward` is after scale, step
/// penalty and optional clamping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: String,
    pub raw_reward: f64,
    pub reward: f64,
    pub done: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub info: BTreeMap<String, Value>,
}

/// How SearchGym judges a submitted answer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerEval {
    RuleNormalizedMatch,
    #[default]
    LlmJudge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub max_steps: u32,
    pub reward_scale: f64,
    pub step_penalty: f64,
    pub normalize_to_unit: bool,
    /// TurtleGym: an answer scoring at least this ends the session.
    pub success_threshold: f64,
    /// SearchGym: maximum number of search calls per session.
    pub max_searches: u32,
    pub search_eval: AnswerEval,
    /// TravelGym: every n-th search attempt returns a simulated system error.
    pub travel_error_every: u32,
    /// TravelGym: penalty subtracted when a wrong or noise option is chosen.
    pub wrong_choice_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_steps: 20,
            reward_scale: 1.0,
            step_penalty: 0.0,
            normalize_to_unit: false,
            success_threshold: 0.9,
            max_searches: 5,
            search_eval: AnswerEval::LlmJudge,
            travel_error_every: 5,
            wrong_choice_penalty: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if self.max_steps < 1 {
            return bad("max_steps must be at least 1");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be a positive finite number");
        }
        if !(self.step_penalty >= 0.0 && self.step_penalty.is_finite()) {
            return bad("step_penalty must be non-negative");
        }
        if self.travel_error_every == 0 {
            return bad("travel_error_every must be positive");
        }
        Ok(())
    }
}

/// Scale, then subtract the step penalty, then clamp to `[0, 1]` if configured.
///
/// The penalty is charged on every turn, rewarded or not; `step_index` is the
/// 1-based turn the reward belongs to.
pub fn postprocess_reward(raw: f64, config: &EnvConfig, step_index: u32) -> f64 {
    debug_assert!(raw.is_finite());
    debug_assert!(step_index >= 1);
    let value = raw * config.reward_scale - config.step_penalty;
    if config.normalize_to_unit {
        value.clamp(0.0, 1.0)
    } else {
        value
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("payload for task `{task_id}` is malformed: {detail}")]
    Schema { task_id: String, detail: String },
    #[error("gym `{0}` needs an external adapter that is not configured")]
    UnsupportedGym(GymKind),
    #[error("`{verb}` is not available in {gym}; allowed: {allowed}")]
    VerbNotAllowed { gym: GymKind, verb: Verb, allowed: String },
    #[error("session already terminated")]
    SessionTerminated,
    #[error("step content must not be empty")]
    EmptyContent,
    #[error("user simulator failed: {0}")]
    UserPortFailure(#[source] UserSimError),
    #[error("search backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("ports are not compatible with {gym}: {detail}")]
    IncompatiblePorts { gym: GymKind, detail: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl EnvError {
    /// Failures after which the session is unchanged and the same step may be retried.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EnvError::UserPortFailure(_) | EnvError::BackendUnavailable(_))
    }
}
