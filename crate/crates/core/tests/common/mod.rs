#![allow(dead_code)]

pub mod mock;
pub mod oracle;

use std::path::PathBuf;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;
use userl_core::env::{Env, EnvConfig, EnvError, EnvSession, Ports, StepChoice};
use userl_core::gyms::CannedSearch;
use userl_core::task::TaskSet;
use userl_core::usersim::ScriptedUser;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn tasks() -> TaskSet {
    TaskSet::load(fixture("tasks.jsonl")).unwrap()
}

pub fn users() -> Arc<ScriptedUser> {
    Arc::new(ScriptedUser::load(fixture("scripted_users.json")).unwrap())
}

pub fn ports() -> Ports {
    Ports::new(users()).with_search(Arc::new(CannedSearch::load(fixture("canned_search.json")).unwrap()))
}

#[derive(Clone, Debug, Deserialize)]
pub struct Golden {
    pub session_id: String,
    pub task_id: String,
    #[serde(default)]
    pub config: Option<Value>,
    pub steps: Vec<StepChoice>,
    pub expected_rewards: Vec<f64>,
    pub expected_done: bool,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, Value>,
}

impl Golden {
    pub fn config(&self) -> EnvConfig {
        self.config.clone().map(|c| serde_json::from_value(c).unwrap()).unwrap_or_default()
    }

    pub fn replay(&self, tasks: &TaskSet, ports: Ports) -> Result<EnvSession, EnvError> {
        let task = tasks.get(&self.task_id).unwrap_or_else(|| panic!("unknown task {}", self.task_id)).clone();
        Env::replay(task, self.config(), ports, &self.steps)
    }
}

pub fn goldens() -> Vec<Golden> {
    std::fs::read_to_string(fixture("golden_sessions.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn rewards(s: &EnvSession) -> Vec<f64> {
    s.history.iter().map(|h| h.outcome.reward).collect()
}

/// A replayed session as a trajectory with one token per turn.
pub fn to_trajectory(task_id: &str, s: &EnvSession) -> userl_core::reward::Trajectory {
    use userl_core::reward::{TerminatedReason, Trajectory, TurnRecord};
    Trajectory {
        task_id: task_id.to_string(),
        turns: s
            .history
            .iter()
            .enumerate()
            .map(|(i, h)| TurnRecord {
                turn_index: i as u32 + 1,
                choice: h.choice.clone(),
                observation: h.outcome.observation.clone(),
                raw_reward: h.outcome.reward,
                token_count: 1,
                token_count_estimated: true,
            })
            .collect(),
        terminated_reason: if s.goal_reached { TerminatedReason::Goal } else { TerminatedReason::Budget },
        abort_detail: None,
    }
}
