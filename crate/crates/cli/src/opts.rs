//! Shared rollout options. Every flag can also be set in a TOML config file;
//! flags given on the command line win.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;
use userl_core::chat::{ChatClient, EndpointConfig, Limiter};
use userl_core::gyms::{CannedSearch, HttpSearch, SearchBackend};
use userl_core::orchestrator::{PolicyClient, RolloutPlan, ScriptedPolicy};
use userl_core::reward::{ShapingSpec, TrajScore, TurnShaping};
use userl_core::usersim::{LlmUserPort, Role, Sampling, ScriptedUser, UserPort};
use userl_core::{EnvConfig, Exec, GymKind, Ports, TaskSet, TaskSpec};

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunOpts {
    /// Restrict to these gyms (comma-separated, e.g. `function,telepathy`).
    #[arg(long)]
    pub gym: Option<String>,
    /// Task file (JSONL, one task per line).
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// OpenAI-compatible base URL of the policy model.
    #[arg(long)]
    pub policy_endpoint: Option<String>,
    #[arg(long)]
    pub policy_model: Option<String>,
    /// Scripted policy (JSON) used instead of an endpoint.
    #[arg(long)]
    pub policy_script: Option<PathBuf>,
    /// User-simulator endpoints: `url`, or `role=url,...`, or `gym:role=url,...`.
    #[arg(long)]
    pub user_endpoint: Option<String>,
    #[arg(long)]
    pub user_model: Option<String>,
    /// Scripted user tables (JSON) used instead of endpoints.
    #[arg(long)]
    pub user_script: Option<PathBuf>,
    /// Canned search results (JSON). Otherwise `USERL_SEARCH_URL` is used if set.
    #[arg(long)]
    pub search_canned: Option<PathBuf>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub max_turns: Option<u32>,
    /// Gym step budget.
    #[arg(long)]
    pub max_steps: Option<u32>,
    #[arg(long)]
    pub turn_shaping: Option<TurnShaping>,
    #[arg(long)]
    pub traj_score: Option<TrajScore>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Policy temperature; defaults to 1.0 for `rollout` and 0.0 for `eval`.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_response_tokens: Option<u32>,
    /// Concurrent episodes.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory (or file, for `advantages`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Export advantages for groups that contain aborted episodes.
    #[arg(long)]
    pub allow_aborted: bool,
    /// Run batches on the calling thread.
    #[arg(long)]
    pub sequential: bool,
    /// Gym settings; config file only (`[env]` table).
    #[arg(skip)]
    pub env: Option<EnvConfig>,
}

macro_rules! prefer {
    ($self:ident, $other:ident; $($field:ident),*) => {
        $( if $self.$field.is_none() { $self.$field = $other.$field.clone(); } )*
    };
}

impl RunOpts {
    /// Fill unset fields from `file`.
    pub fn merge(mut self, file: RunOpts) -> Self {
        prefer!(self, file; gym, tasks, policy_endpoint, policy_model, policy_script, user_endpoint, user_model,
            user_script, search_canned, group_size, max_turns, max_steps, turn_shaping, traj_score, gamma, k, eta,
            seed, temperature, max_response_tokens, workers, out, env);
        self.allow_aborted |= file.allow_aborted;
        self.sequential |= file.sequential;
        self
    }

    pub fn load_config(path: &Path) -> Result<RunOpts> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn shaping(&self) -> Result<ShapingSpec> {
        let d = ShapingSpec::default();
        let spec = ShapingSpec {
            turn: self.turn_shaping.unwrap_or(d.turn),
            traj: self.traj_score.unwrap_or(d.traj),
            gamma: self.gamma.unwrap_or(d.gamma),
            k: self.k.unwrap_or(d.k),
            eta: self.eta.unwrap_or(d.eta),
        };
        spec.validate()?;
        if spec.turn == TurnShaping::Naive {
            eprintln!(
                "note: naive shaping feeds raw turn rewards straight into the group normalization; \
                 turns without feedback get negative advantages and training tends to stall. \
                 Prefer equalized or r2g."
            );
        }
        Ok(spec)
    }

    pub fn env_config(&self) -> EnvConfig {
        let mut env = self.env.clone().unwrap_or_default();
        if let Some(n) = self.max_steps {
            env.max_steps = n;
        }
        env
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    pub fn plan(&self, default_temperature: f64, default_group: usize) -> Result<RolloutPlan> {
        let d = RolloutPlan::default();
        let env = self.env_config();
        let plan = RolloutPlan {
            group_size: self.group_size.unwrap_or(default_group),
            max_turns: self.max_turns.unwrap_or(d.max_turns.min(env.max_steps)),
            shaping: self.shaping()?,
            env,
            temperature: self.temperature.unwrap_or(default_temperature),
            max_response_tokens: self.max_response_tokens,
            seed: self.seed.unwrap_or(0),
            workers: self.workers.unwrap_or(d.workers).max(1),
            exec: self.exec(),
            ..d
        };
        plan.validate().map_err(anyhow::Error::msg)?;
        Ok(plan)
    }

    pub fn gyms(&self) -> Result<Option<Vec<GymKind>>> {
        self.gym
            .as_deref()
            .map(|s| s.split(',').map(|g| g.parse::<GymKind>().map_err(anyhow::Error::msg)).collect())
            .transpose()
    }

    pub fn task_set(&self) -> Result<TaskSet> {
        let path = self.tasks.as_ref().context("--tasks is required")?;
        let all = TaskSet::load(path).with_context(|| format!("loading {}", path.display()))?;
        Ok(all)
    }

    /// Tasks of the selected gyms, in file order.
    pub fn selected_tasks(&self, set: &TaskSet) -> Result<Vec<TaskSpec>> {
        let gyms = self.gyms()?;
        let tasks: Vec<TaskSpec> =
            set.tasks().iter().filter(|t| gyms.as_ref().is_none_or(|g| g.contains(&t.gym))).cloned().collect();
        if tasks.is_empty() {
            bail!("no tasks selected");
        }
        Ok(tasks)
    }

    pub fn policy(&self) -> Result<Box<dyn PolicyClient>> {
        match (&self.policy_script, &self.policy_endpoint) {
            (Some(p), _) => {
                Ok(Box::new(ScriptedPolicy::load(p).with_context(|| format!("loading policy script {}", p.display()))?))
            }
            (None, Some(url)) => {
                let model = self.policy_model.clone().unwrap_or_else(|| "policy".into());
                let client = ChatClient::new(EndpointConfig::new(url, model), self.limiter());
                client.health().with_context(|| format!("policy endpoint {url} is unreachable"))?;
                Ok(Box::new(client))
            }
            (None, None) => bail!("one of --policy-endpoint or --policy-script is required"),
        }
    }

    fn limiter(&self) -> Arc<Limiter> {
        Limiter::new(self.workers.unwrap_or(RolloutPlan::default().workers).max(1))
    }

    pub fn user_port(&self) -> Result<Arc<dyn UserPort>> {
        if let Some(p) = &self.user_script {
            let user = ScriptedUser::load(p).with_context(|| format!("loading user script {}", p.display()))?;
            return Ok(Arc::new(user));
        }
        let mut port = LlmUserPort::new(Sampling::default());
        if let Some(spec) = &self.user_endpoint {
            let model = self.user_model.clone().unwrap_or_else(|| "user".into());
            let limiter = self.limiter();
            let client =
                |url: &str| Arc::new(ChatClient::new(EndpointConfig::new(url, model.clone()), limiter.clone()));
            for b in parse_user_endpoints(spec)? {
                port = match (b.gym, b.role) {
                    (Some(g), Some(r)) => port.bind(g, r, client(&b.url)),
                    (None, Some(r)) => port.bind_role(r, client(&b.url)),
                    (_, None) => {
                        let c = client(&b.url);
                        port.bind_role(Role::Responder, c.clone()).bind_role(Role::Judge, c)
                    }
                };
            }
        }
        Ok(Arc::new(port))
    }

    pub fn search(&self) -> Result<Option<Arc<dyn SearchBackend>>> {
        if let Some(p) = &self.search_canned {
            let s = CannedSearch::load(p).with_context(|| format!("loading {}", p.display()))?;
            return Ok(Some(Arc::new(s)));
        }
        Ok(HttpSearch::from_env().map(|s| Arc::new(s) as Arc<dyn SearchBackend>))
    }

    pub fn ports(&self) -> Result<Ports> {
        let mut ports = Ports::new(self.user_port()?);
        if let Some(s) = self.search()? {
            ports = ports.with_search(s);
        }
        Ok(ports)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserBinding {
    pub gym: Option<GymKind>,
    pub role: Option<Role>,
    pub url: String,
}

/// `url` | `role=url` | `gym:role=url`, comma-separated.
pub fn parse_user_endpoints(spec: &str) -> Result<Vec<UserBinding>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let Some((key, url)) = item.split_once('=').filter(|(k, _)| !k.contains("://")) else {
                return Ok(UserBinding { gym: None, role: None, url: item.to_string() });
            };
            let (gym, role) = match key.split_once(':') {
                Some((g, r)) => (Some(g.parse::<GymKind>().map_err(anyhow::Error::msg)?), r),
                None => (None, key),
            };
            let role = role.parse::<Role>().map_err(anyhow::Error::msg)?;
            Ok(UserBinding { gym, role: Some(role), url: url.to_string() })
        })
        .collect()
}

pub fn seconds(s: u64) -> Duration {
    Duration::from_secs(s)
}
