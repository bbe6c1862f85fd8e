//! Turn-level shaping, trajectory scoring, grouped advantages and the token
//! broadcast. Everything here is a pure function of its inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::StepChoice;
use crate::exec::Exec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnShaping {
    Naive,
    #[default]
    Equalized,
    R2g,
    Em,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajScore {
    Sum,
    #[default]
    R2g,
}

impl TurnShaping {
    pub const ALL: [TurnShaping; 4] = [TurnShaping::Naive, TurnShaping::Equalized, TurnShaping::R2g, TurnShaping::Em];

    pub fn as_str(self) -> &'static str {
        match self {
            TurnShaping::Naive => "naive",
            TurnShaping::Equalized => "equalized",
            TurnShaping::R2g => "r2g",
            TurnShaping::Em => "em",
        }
    }
}

impl TrajScore {
    pub fn as_str(self) -> &'static str {
        match self {
            TrajScore::Sum => "sum",
            TrajScore::R2g => "r2g",
        }
    }
}

impl fmt::Display for TurnShaping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for TrajScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TurnShaping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown turn shaping `{s}` (naive, equalized, r2g, em)"))
    }
}

impl FromStr for TrajScore {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(TrajScore::Sum),
            "r2g" => Ok(TrajScore::R2g),
            other => Err(format!("unknown trajectory score `{other}` (sum, r2g)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapingSpec {
    pub turn: TurnShaping,
    pub traj: TrajScore,
    pub gamma: f64,
    pub k: f64,
    pub eta: f64,
}

impl Default for ShapingSpec {
    fn default() -> Self {
        Self { turn: TurnShaping::Equalized, traj: TrajScore::R2g, gamma: 0.8, k: 2.0, eta: 1e-6 }
    }
}

impl ShapingSpec {
    pub fn new(turn: TurnShaping, traj: TrajScore) -> Self {
        Self { turn, traj, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(RewardError::InvalidSpec(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(RewardError::InvalidSpec(format!("k must be positive, got {}", self.k)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(RewardError::InvalidSpec(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }

    /// `turn/traj`, e.g. `equalized/r2g`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.turn, self.traj)
    }
}

impl FromStr for ShapingSpec {
    type Err = String;

    /// Parses `turn/traj` with default γ, k, η.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (turn, traj) = s.split_once('/').ok_or_else(|| format!("expected `turn/traj`, got `{s}`"))?;
        Ok(Self::new(turn.parse()?, traj.parse()?))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("exponential mapping needs rewards in [0, 1], got {0}")]
    Domain(f64),
    #[error("group has {0} trajectories; at least 2 are needed")]
    GroupTooSmall(usize),
    #[error("{advantages} advantages but {tokens} token counts")]
    LengthMismatch { advantages: usize, tokens: usize },
    #[error("token count for turn {turn} is zero")]
    ZeroTokens { turn: usize },
    #[error("invalid shaping spec: {0}")]
    InvalidSpec(String),
    #[error("group mixes tasks `{0}` and `{1}`")]
    MixedTasks(String, String),
}

/// Exponential mapping of a `[0, 1]` reward into `[0.5, 1]`.
pub fn exp_map(r: f64, k: f64) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&r) {
        return Err(RewardError::Domain(r));
    }
    Ok(0.5 + 0.5 * (-(-k * r).exp_m1()) / (-(-k).exp_m1()))
}

/// Discounted suffix sums: `out[t] = Σ_{j≥t} γ^{j−t} r_j`.
pub fn reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

pub fn score_trajectory(spec: &ShapingSpec, rewards: &[f64]) -> f64 {
    match spec.traj {
        TrajScore::Sum => rewards.iter().sum(),
        TrajScore::R2g => {
            let mut w = 1.0;
            let mut total = 0.0;
            for r in rewards {
                total += w * r;
                w *= spec.gamma;
            }
            total
        }
    }
}

/// Per-turn training signal. Equalized broadcasts `trajectory_score` to every turn.
pub fn shape_turn_rewards(spec: &ShapingSpec, rewards: &[f64], trajectory_score: f64) -> Result<Vec<f64>, RewardError> {
    Ok(match spec.turn {
        TurnShaping::Naive => rewards.to_vec(),
        TurnShaping::Equalized => vec![trajectory_score; rewards.len()],
        TurnShaping::R2g => reward_to_go(rewards, spec.gamma),
        TurnShaping::Em => rewards.iter().map(|&r| exp_map(r, spec.k)).collect::<Result<_, _>>()?,
    })
}

/// Repeat each turn's advantage once per token of that turn.
pub fn broadcast_to_tokens(per_turn: &[f64], token_counts: &[u32]) -> Result<Vec<f64>, RewardError> {
    if per_turn.len() != token_counts.len() {
        return Err(RewardError::LengthMismatch { advantages: per_turn.len(), tokens: token_counts.len() });
    }
    if let Some(turn) = token_counts.iter().position(|&c| c == 0) {
        return Err(RewardError::ZeroTokens { turn: turn + 1 });
    }
    let total: usize = token_counts.iter().map(|&c| c as usize).sum();
    let mut out = Vec::with_capacity(total);
    for (&a, &n) in per_turn.iter().zip(token_counts) {
        out.extend(std::iter::repeat_n(a, n as usize));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminatedReason {
    Goal,
    Budget,
    Aborted,
}

impl TerminatedReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminatedReason::Goal => "goal",
            TerminatedReason::Budget => "budget",
            TerminatedReason::Aborted => "aborted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: u32,
    pub choice: StepChoice,
    pub observation: String,
    pub raw_reward: f64,
    pub token_count: u32,
    #[serde(default)]
    pub token_count_estimated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub turns: Vec<TurnRecord>,
    pub terminated_reason: TerminatedReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_detail: Option<String>,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.turns.iter().map(|t| t.raw_reward).collect()
    }

    pub fn token_counts(&self) -> Vec<u32> {
        self.turns.iter().map(|t| t.token_count).collect()
    }

    pub fn reward_sum(&self) -> f64 {
        self.turns.iter().map(|t| t.raw_reward).sum()
    }

    pub fn is_aborted(&self) -> bool {
        self.terminated_reason == TerminatedReason::Aborted
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutGroup {
    pub fn has_aborted(&self) -> bool {
        self.trajectories.iter().any(Trajectory::is_aborted)
    }
}

/// Shaped rewards and advantages for one trajectory of a group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageTensor {
    pub trajectory_score: f64,
    pub shaped_rewards: Vec<f64>,
    pub per_turn_advantages: Vec<f64>,
    pub token_counts: Vec<u32>,
    pub token_advantages: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub task_id: String,
    pub group_mean: f64,
    pub group_std: f64,
    pub trajectories: Vec<AdvantageTensor>,
}

/// Mean and population standard deviation.
///
/// A group of identical values gets exactly its value and zero, so that its
/// advantages come out as exact zeros rather than rounding noise over η.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if let Some(&first) = xs.first() {
        if xs.iter().all(|&x| x == first) {
            return (first, 0.0);
        }
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Core computation on bare reward lists; `token_counts` may be empty to skip the broadcast.
pub fn advantages_for_rewards(
    spec: &ShapingSpec,
    rewards: &[Vec<f64>],
    token_counts: &[Vec<u32>],
) -> Result<(f64, f64, Vec<AdvantageTensor>), RewardError> {
    spec.validate()?;
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    let scores: Vec<f64> = rewards.iter().map(|r| score_trajectory(spec, r)).collect();
    let (mu, sigma) = mean_std(&scores);
    let denom = sigma + spec.eta;
    let mut out = Vec::with_capacity(rewards.len());
    for (i, (r, &score)) in rewards.iter().zip(&scores).enumerate() {
        let shaped = shape_turn_rewards(spec, r, score)?;
        let adv: Vec<f64> = shaped.iter().map(|s| (s - mu) / denom).collect();
        let counts = token_counts.get(i).cloned().unwrap_or_default();
        let tokens = if token_counts.is_empty() { Vec::new() } else { broadcast_to_tokens(&adv, &counts)? };
        out.push(AdvantageTensor {
            trajectory_score: score,
            shaped_rewards: shaped,
            per_turn_advantages: adv,
            token_counts: counts,
            token_advantages: tokens,
        });
    }
    Ok((mu, sigma, out))
}

pub fn group_advantages(group: &RolloutGroup, spec: &ShapingSpec) -> Result<GroupAdvantages, RewardError> {
    if let Some(t) = group.trajectories.iter().find(|t| t.task_id != group.task_id) {
        return Err(RewardError::MixedTasks(group.task_id.clone(), t.task_id.clone()));
    }
    let rewards: Vec<Vec<f64>> = group.trajectories.iter().map(Trajectory::rewards).collect();
    let counts: Vec<Vec<u32>> = group.trajectories.iter().map(Trajectory::token_counts).collect();
    let (group_mean, group_std, trajectories) = advantages_for_rewards(spec, &rewards, &counts)?;
    Ok(GroupAdvantages { task_id: group.task_id.clone(), group_mean, group_std, trajectories })
}

/// Advantages for many groups, one per item, in input order.
pub fn batch_advantages(
    exec: Exec,
    groups: &[RolloutGroup],
    spec: &ShapingSpec,
) -> Vec<Result<GroupAdvantages, RewardError>> {
    exec.map(groups, |g| group_advantages(g, spec))
}

/// One JSONL record of the advantage export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub task_id: String,
    pub trajectory_index: usize,
    pub shaping: String,
    pub turn_rewards: Vec<f64>,
    pub shaped_rewards: Vec<f64>,
    pub trajectory_score: f64,
    pub per_turn_advantages: Vec<f64>,
    pub token_counts: Vec<u32>,
}

pub fn export_records(group: &RolloutGroup, adv: &GroupAdvantages, spec: &ShapingSpec) -> Vec<AdvantageRecord> {
    group
        .trajectories
        .iter()
        .zip(&adv.trajectories)
        .enumerate()
        .map(|(i, (t, a))| AdvantageRecord {
            task_id: group.task_id.clone(),
            trajectory_index: i,
            shaping: spec.label(),
            turn_rewards: t.rewards(),
            shaped_rewards: a.shaped_rewards.clone(),
            trajectory_score: a.trajectory_score,
            per_turn_advantages: a.per_turn_advantages.clone(),
            token_counts: a.token_counts.clone(),
        })
        .collect()
}
