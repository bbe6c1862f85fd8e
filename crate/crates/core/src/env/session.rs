use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{allowed_verbs, postprocess_reward, EnvConfig, EnvError, StepChoice, StepOutcome};
use crate::gyms::{self, ExternalGym, GymState, SearchBackend, StepContext};
use crate::task::{GymKind, TaskSpec};
use crate::usersim::UserPort;

/// Everything a session talks to besides its own rule layer.
#[derive(Clone)]
pub struct Ports {
    pub user: Arc<dyn UserPort>,
    pub search: Option<Arc<dyn SearchBackend>>,
    pub external: Option<Arc<dyn ExternalGym>>,
}

impl Ports {
    pub fn new(user: Arc<dyn UserPort>) -> Self {
        Self { user, search: None, external: None }
    }

    pub fn with_search(mut self, search: Arc<dyn SearchBackend>) -> Self {
        self.search = Some(search);
        self
    }

    pub fn with_external(mut self, external: Arc<dyn ExternalGym>) -> Self {
        self.external = Some(external);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub choice: StepChoice,
    pub outcome: StepOutcome,
}

/// Serializable session state: the task, its automaton state and the step log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSession {
    pub task: TaskSpec,
    pub config: EnvConfig,
    pub step_count: u32,
    pub history: Vec<HistoryEntry>,
    pub state: GymState,
    pub terminated: bool,
    pub goal_reached: bool,
}

impl EnvSession {
    pub fn gym(&self) -> GymKind {
        self.task.gym
    }

    /// Sum of post-processed rewards so far.
    pub fn total_reward(&self) -> f64 {
        self.history.iter().map(|h| h.outcome.reward).sum()
    }
}

/// A live session bound to its ports. Not `Sync`-shared: one step at a time.
pub struct Env {
    session: EnvSession,
    ports: Ports,
}

impl Env {
    pub fn reset(task: TaskSpec, config: EnvConfig, ports: Ports) -> Result<Self, EnvError> {
        config.validate()?;
        if task.gym == GymKind::TauStub && ports.external.is_none() {
            return Err(EnvError::UnsupportedGym(task.gym));
        }
        if task.gym == GymKind::Search && ports.search.is_none() {
            return Err(EnvError::IncompatiblePorts { gym: task.gym, detail: "no search backend".into() });
        }
        for role in gyms::roles_needed(task.gym, &config) {
            if !ports.user.supports(task.gym, *role) {
                return Err(EnvError::IncompatiblePorts {
                    gym: task.gym,
                    detail: format!("user port has no `{role}` binding"),
                });
            }
        }
        let state = gyms::init_state(&task, &config, ports.external.as_deref())?;
        Ok(Self {
            session: EnvSession {
                task,
                config,
                step_count: 0,
                history: Vec::new(),
                state,
                terminated: false,
                goal_reached: false,
            },
            ports,
        })
    }

    /// The task presentation shown to the agent before the first step.
    pub fn initial_observation(&self) -> String {
        gyms::initial_observation(&self.session.task, &self.session.state)
    }

    pub fn session(&self) -> &EnvSession {
        &self.session
    }

    pub fn into_session(self) -> EnvSession {
        self.session
    }

    pub fn ports(&self) -> &Ports {
        &self.ports
    }

    /// Advance the automaton by one agent choice.
    ///
    /// On `UserPortFailure` / `BackendUnavailable` nothing about the session
    /// changes, so the caller can retry the same choice.
    pub fn step(&mut self, choice: StepChoice) -> Result<StepOutcome, EnvError> {
        let s = &mut self.session;
        if s.terminated {
            return Err(EnvError::SessionTerminated);
        }
        let gym = s.task.gym;
        let allowed = allowed_verbs(gym);
        if !allowed.contains(&choice.verb) {
            return Err(EnvError::VerbNotAllowed {
                gym,
                verb: choice.verb,
                allowed: allowed.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", "),
            });
        }
        if choice.content.trim().is_empty() {
            return Err(EnvError::EmptyContent);
        }

        let turn_index = s.step_count + 1;
        let ctx = StepContext {
            task_id: &s.task.task_id,
            turn_index,
            config: &s.config,
            user: self.ports.user.as_ref(),
            search: self.ports.search.as_deref(),
            external: self.ports.external.as_deref(),
        };
        let mut next = s.state.clone();
        let reply = gyms::transition(&mut next, &choice, &ctx)?;

        s.step_count = turn_index;
        let budget_hit = s.step_count >= s.config.max_steps;
        let done = reply.goal || budget_hit;
        let mut info = reply.info;
        if done {
            let reason = if reply.goal { "goal" } else { "budget" };
            info.insert("terminated".into(), Value::from(reason));
        }
        let outcome = StepOutcome {
            observation: reply.observation,
            raw_reward: reply.raw_reward,
            reward: postprocess_reward(reply.raw_reward, &s.config, turn_index),
            done,
            info,
        };
        s.state = next;
        s.terminated = done;
        s.goal_reached = reply.goal;
        s.history.push(HistoryEntry { choice, outcome: outcome.clone() });
        Ok(outcome)
    }

    /// Run a fixed choice sequence from a fresh session, stopping at `done`.
    pub fn replay(
        task: TaskSpec,
        config: EnvConfig,
        ports: Ports,
        choices: &[StepChoice],
    ) -> Result<EnvSession, EnvError> {
        let mut env = Env::reset(task, config, ports)?;
        for choice in choices {
            if env.session.terminated {
                break;
            }
            env.step(choice.clone())?;
        }
        Ok(env.session)
    }
}
