//! TauGym stub. Customer-service tasks run in an external framework; this
//! crate only forwards steps to an adapter implementing [`ExternalGym`].
//! Without one, `reset` fails with `UnsupportedGym`.
//!
//! Adapter contract: `reset` receives the task and returns the opening
//! observation; `step` receives every choice in order and returns the reply
//! and reward computed by the external framework. The adapter owns its own
//! state keyed by task id, so sessions are not replayable from history alone.

use serde::{Deserialize, Serialize};

use super::{GymReply, StepContext};
use crate::env::{EnvError, StepChoice};
use crate::task::{GymKind, TaskSpec};

pub trait ExternalGym: Send + Sync {
    fn reset(&self, task: &TaskSpec) -> Result<String, EnvError>;
    fn step(&self, task_id: &str, turn_index: u32, choice: &StepChoice) -> Result<GymReply, EnvError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub initial_observation: String,
}

pub fn init(task: &TaskSpec, external: Option<&dyn ExternalGym>) -> Result<State, EnvError> {
    let adapter = external.ok_or(EnvError::UnsupportedGym(GymKind::TauStub))?;
    Ok(State { initial_observation: adapter.reset(task)? })
}

pub fn step(choice: &StepChoice, ctx: &StepContext<'_>) -> Result<GymReply, EnvError> {
    let adapter = ctx.external.ok_or(EnvError::UnsupportedGym(GymKind::TauStub))?;
    adapter.step(ctx.task_id, ctx.turn_index, choice)
}
