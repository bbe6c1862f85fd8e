//! Rollouts: the policy ↔ gym loop, rollout groups, metrics and persistence.

mod metrics;
mod persist;
pub mod policy;
pub mod prompt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chat::{ChatMessage, ChatRequest, ToolCall};
use crate::env::{allowed_verbs, Env, EnvConfig, EnvError, Ports, StepChoice, Verb};
use crate::exec::Exec;
use crate::reward::{RolloutGroup, ShapingSpec, TerminatedReason, Trajectory, TurnRecord};
use crate::task::{GymKind, TaskSpec};
use crate::usersim::UserSimError;

pub use metrics::{effective_turns, gym_score, time_weighted_performance, GymMetrics, MetricsReport};
pub use persist::{
    export_advantages, leak_scan, persist_run, read_jsonl, replay_trajectory, write_jsonl_atomic, AdvantageExport,
    Leak, ReplayCheck, RunSummary, TrajectoryRecord,
};
pub use policy::{PolicyClient, ScriptedPolicy, ScriptedTurn};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutPlan {
    pub group_size: usize,
    pub max_turns: u32,
    pub shaping: ShapingSpec,
    pub env: EnvConfig,
    /// Policy sampling temperature: 1.0 for training rollouts, 0.0 for evaluation.
    pub temperature: f64,
    pub max_response_tokens: Option<u32>,
    pub seed: u64,
    /// Concurrent episodes.
    pub workers: usize,
    /// Extra attempts for a step that failed retryably (user simulator or search backend).
    pub step_retries: u32,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for RolloutPlan {
    fn default() -> Self {
        Self {
            group_size: 8,
            max_turns: 16,
            shaping: ShapingSpec::default(),
            env: EnvConfig::default(),
            temperature: 1.0,
            max_response_tokens: None,
            seed: 0,
            workers: 8,
            step_retries: 1,
            exec: Exec::default(),
        }
    }
}

impl RolloutPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.group_size < 1 {
            return Err("group_size must be at least 1".into());
        }
        if self.max_turns < 1 || self.max_turns > self.env.max_steps {
            return Err(format!(
                "max_turns {} must be in 1..={} (the gym step budget)",
                self.max_turns, self.env.max_steps
            ));
        }
        self.env.validate().map_err(|e| e.to_string())?;
        self.shaping.validate().map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnStatus {
    Ok,
    /// The first assistant message was unusable and a reminder was sent.
    Reprompted,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnLog {
    pub turn_index: u32,
    pub status: TurnStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub task_id: String,
    pub trajectory_index: usize,
    pub messages: Vec<ChatMessage>,
    pub turn_log: Vec<TurnLog>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub transcript: SessionTranscript,
}

/// Hooks for live displays (the human bridge reports rewards through this).
pub trait EpisodeObserver: Sync {
    fn on_turn(&self, _record: &TurnRecord) {}
    fn on_end(&self, _trajectory: &Trajectory) {}
}

struct NoObserver;
impl EpisodeObserver for NoObserver {}

/// Why an assistant message could not be turned into a step.
fn extract_choice(msg: &ChatMessage, gym: GymKind) -> Result<(String, StepChoice), String> {
    let call: &ToolCall = match msg.tool_calls.as_slice() {
        [] => return Err("no tool call".into()),
        [one] => one,
        many => return Err(format!("{} tool calls in one message; exactly one is allowed", many.len())),
    };
    if call.function.name != prompt::TOOL_NAME {
        return Err(format!("unknown tool `{}`", call.function.name));
    }
    let args: Value =
        serde_json::from_str(&call.function.arguments).map_err(|e| format!("tool arguments are not JSON: {e}"))?;
    let choice = args.get("choice").and_then(Value::as_str).ok_or("missing `choice`")?;
    let verb: Verb =
        choice.parse().map_err(|_| format!("`choice` must be action, answer or search, got `{choice}`"))?;
    if !allowed_verbs(gym).contains(&verb) {
        let allowed: Vec<&str> = allowed_verbs(gym).iter().map(|v| v.as_str()).collect();
        return Err(format!("`{verb}` is not available here; use one of: {}", allowed.join(", ")));
    }
    let content = match args.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("missing string `content`".into()),
    };
    if content.trim().is_empty() {
        return Err("`content` is empty".into());
    }
    Ok((call.id.clone(), StepChoice::new(verb, content)))
}

/// Whitespace-split estimate of an assistant message's length, used when the
/// endpoint reports no usage.
pub fn estimate_tokens(msg: &ChatMessage) -> u32 {
    let text = msg.text().split_whitespace().count();
    let calls: usize = msg.tool_calls.iter().map(|c| c.function.arguments.split_whitespace().count()).sum();
    (text + calls).max(1) as u32
}

pub fn run_episode(
    plan: &RolloutPlan,
    policy: &dyn PolicyClient,
    ports: &Ports,
    task: &TaskSpec,
    index: usize,
) -> Episode {
    run_episode_observed(plan, policy, ports, task, index, &NoObserver)
}

pub fn run_episode_observed(
    plan: &RolloutPlan,
    policy: &dyn PolicyClient,
    ports: &Ports,
    task: &TaskSpec,
    index: usize,
    observer: &dyn EpisodeObserver,
) -> Episode {
    let mut messages = vec![ChatMessage::system(prompt::system_prompt(task.gym))];
    let mut turn_log = Vec::new();
    let mut turns = Vec::new();

    let finish = |turns: Vec<TurnRecord>, reason, detail: Option<String>, messages, turn_log| {
        let trajectory =
            Trajectory { task_id: task.task_id.clone(), turns, terminated_reason: reason, abort_detail: detail };
        observer.on_end(&trajectory);
        Episode {
            trajectory,
            transcript: SessionTranscript {
                task_id: task.task_id.clone(),
                trajectory_index: index,
                messages,
                turn_log,
            },
        }
    };

    let mut env = match Env::reset(task.clone(), plan.env.clone(), ports.clone()) {
        Ok(env) => env,
        Err(e) => {
            return finish(turns, TerminatedReason::Aborted, Some(format!("reset failed: {e}")), messages, turn_log)
        }
    };
    messages.push(ChatMessage::user(env.initial_observation()));
    let tools = vec![prompt::tool_schema()];

    for turn_index in 1..=plan.max_turns {
        let mut reprompted = false;
        let (call_id, choice, msg, usage) = loop {
            let request = ChatRequest {
                model: policy.model().to_string(),
                messages: messages.clone(),
                temperature: plan.temperature,
                tools: Some(tools.clone()),
                tool_choice: Some(Value::from("auto")),
                max_tokens: plan.max_response_tokens,
                seed: Some(plan.seed + index as u64),
            };
            let completion = match policy.respond(&task.task_id, &request) {
                Ok(c) => c,
                Err(e) => {
                    let detail = format!("policy endpoint failed: {e}");
                    turn_log.push(TurnLog { turn_index, status: TurnStatus::Aborted, detail: Some(detail.clone()) });
                    return finish(turns, TerminatedReason::Aborted, Some(detail), messages, turn_log);
                }
            };
            let msg = completion.message;
            messages.push(msg.clone());
            match extract_choice(&msg, task.gym) {
                Ok((id, choice)) => break (id, choice, msg, completion.usage),
                Err(detail) if !reprompted => {
                    reprompted = true;
                    turn_log.push(TurnLog { turn_index, status: TurnStatus::Reprompted, detail: Some(detail.clone()) });
                    for call in &msg.tool_calls {
                        messages.push(ChatMessage::tool_result(call.id.clone(), format!("Error: {detail}")));
                    }
                    messages.push(ChatMessage::user(prompt::FORMAT_REMINDER));
                }
                Err(detail) => {
                    let detail = format!("malformed tool call after reminder: {detail}");
                    turn_log.push(TurnLog { turn_index, status: TurnStatus::Aborted, detail: Some(detail.clone()) });
                    return finish(turns, TerminatedReason::Aborted, Some(detail), messages, turn_log);
                }
            }
        };

        let mut attempt = 0;
        let outcome = loop {
            match env.step(choice.clone()) {
                Ok(o) => break o,
                Err(EnvError::UserPortFailure(UserSimError::HumanTimeout)) => {
                    let detail = "human_timeout".to_string();
                    turn_log.push(TurnLog { turn_index, status: TurnStatus::Aborted, detail: Some(detail.clone()) });
                    return finish(turns, TerminatedReason::Aborted, Some(detail), messages, turn_log);
                }
                Err(e) if e.is_retryable() && attempt < plan.step_retries => {
                    log::warn!("{} #{index} turn {turn_index}: {e}; retrying", task.task_id);
                    attempt += 1;
                }
                Err(e) => {
                    let detail = format!("step failed: {e}");
                    turn_log.push(TurnLog { turn_index, status: TurnStatus::Aborted, detail: Some(detail.clone()) });
                    return finish(turns, TerminatedReason::Aborted, Some(detail), messages, turn_log);
                }
            }
        };

        messages.push(ChatMessage::tool_result(call_id, outcome.observation.clone()));
        if !reprompted {
            turn_log.push(TurnLog { turn_index, status: TurnStatus::Ok, detail: None });
        }
        let reported = usage.map(|u| u.completion_tokens).filter(|&n| n > 0);
        let record = TurnRecord {
            turn_index,
            choice,
            observation: outcome.observation,
            raw_reward: outcome.reward,
            token_count: reported.map_or_else(|| estimate_tokens(&msg), |n| n.min(u32::MAX as u64) as u32),
            token_count_estimated: reported.is_none(),
        };
        observer.on_turn(&record);
        turns.push(record);
        if outcome.done {
            let reason = if env.session().goal_reached { TerminatedReason::Goal } else { TerminatedReason::Budget };
            return finish(turns, reason, None, messages, turn_log);
        }
    }
    finish(turns, TerminatedReason::Budget, None, messages, turn_log)
}

/// `n` episodes on one task, in index order.
pub fn run_group(
    plan: &RolloutPlan,
    policy: &dyn PolicyClient,
    ports: &Ports,
    task: &TaskSpec,
) -> (RolloutGroup, Vec<SessionTranscript>) {
    let episodes =
        plan.exec.map_range_bounded(plan.group_size, plan.workers, |i| run_episode(plan, policy, ports, task, i));
    assemble(task, episodes)
}

fn assemble(task: &TaskSpec, episodes: Vec<Episode>) -> (RolloutGroup, Vec<SessionTranscript>) {
    let (trajectories, transcripts) = episodes.into_iter().map(|e| (e.trajectory, e.transcript)).unzip();
    (RolloutGroup { task_id: task.task_id.clone(), trajectories }, transcripts)
}

/// Groups for every task. Episodes of all groups share one bounded worker pool.
pub fn run_plan(
    plan: &RolloutPlan,
    policy: &dyn PolicyClient,
    ports: &Ports,
    tasks: &[TaskSpec],
) -> Vec<(RolloutGroup, Vec<SessionTranscript>)> {
    let n = plan.group_size;
    let mut episodes = plan
        .exec
        .map_range_bounded(tasks.len() * n, plan.workers, |j| run_episode(plan, policy, ports, &tasks[j / n], j % n))
        .into_iter();
    tasks.iter().map(|t| assemble(t, episodes.by_ref().take(n).collect())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::{FunctionCall, MessageRole};

    fn msg(calls: &[(&str, &str)]) -> ChatMessage {
        ChatMessage {
            role: MessageRole::Assistant,
            content: Some("<think>x</think>".into()),
            tool_calls: calls
                .iter()
                .map(|(name, args)| ToolCall {
                    id: "c".into(),
                    kind: "function".into(),
                    function: FunctionCall { name: name.to_string(), arguments: args.to_string() },
                })
                .collect(),
            tool_call_id: None,
        }
    }

    #[test]
    fn tool_call_validation() {
        let ok = msg(&[("interact_with_env", r#"{"choice":"answer","content":"26"}"#)]);
        assert_eq!(extract_choice(&ok, GymKind::Function).unwrap().1, StepChoice::answer("26"));
        assert!(extract_choice(&ok, GymKind::Persuade).unwrap_err().contains("not available"));
        assert!(extract_choice(&msg(&[]), GymKind::Function).is_err());
        let two = msg(&[("interact_with_env", "{}"), ("interact_with_env", "{}")]);
        assert!(extract_choice(&two, GymKind::Function).unwrap_err().contains("exactly one"));
        assert!(extract_choice(&msg(&[("other", "{}")]), GymKind::Function).is_err());
        assert!(extract_choice(&msg(&[("interact_with_env", "{nope")]), GymKind::Function).is_err());
        let empty = msg(&[("interact_with_env", r#"{"choice":"action","content":"  "}"#)]);
        assert!(extract_choice(&empty, GymKind::Function).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(RolloutPlan::default().validate().is_ok());
        assert!(RolloutPlan { max_turns: 21, ..RolloutPlan::default() }.validate().is_err());
        assert!(RolloutPlan { group_size: 0, ..RolloutPlan::default() }.validate().is_err());
    }
}
