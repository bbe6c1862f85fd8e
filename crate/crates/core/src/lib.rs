//! Multi-turn, user-centric gym environments and the reward pipeline that turns
//! their turn-level feedback into grouped, token-level advantages.
//!
//! The crate is organised bottom-up:
//!
//! - [`task`] and [`env`]: task files, the session contract and generic reward
//!   post-processing shared by every gym.
//! - [`gyms`]: the rule layer of each environment (function discovery, entity
//!   guessing, turtle soup, intention elicitation, persuasion, travel planning,
//!   web search) plus the external-gym extension point.
//! - [`usersim`]: the user port with LLM, scripted and human implementations,
//!   prompt templates and structured-reply parsing.
//! - [`reward`]: turn shaping, trajectory scoring, grouped advantages and the
//!   token broadcast.
//! - [`orchestrator`]: the policy/gym rollout loop, metrics and persistence.
//! - [`lab`]: a tabular softmax policy trained with the clipped surrogate on a
//!   synthetic chain environment.
//!
//! Batch paths (rollout groups, advantage batches, lab sweeps) go through
//! [`exec`], which uses rayon when the `parallel` feature is on and plain
//! iterators otherwise.

pub mod chat;
pub mod env;
pub mod exec;
pub mod gyms;
pub mod lab;
pub mod orchestrator;
pub mod reward;
pub mod task;
pub mod usersim;

pub use env::{Env, EnvConfig, EnvError, EnvSession, Ports, StepChoice, StepOutcome, Verb};
pub use exec::Exec;
pub use task::{GymKind, TaskSet, TaskSpec};
