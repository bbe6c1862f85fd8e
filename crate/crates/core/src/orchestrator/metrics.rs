//! Evaluation metrics over rollout groups.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::env::Verb;
use crate::reward::{RolloutGroup, Trajectory};
use crate::task::{GymKind, TaskSpec};

/// 1-based index of the last turn with positive reward; 0 if there is none.
pub fn effective_turns(t: &Trajectory) -> u32 {
    t.turns.iter().rev().find(|r| r.raw_reward > 0.0).map_or(0, |r| r.turn_index)
}

/// Σ r_i / (i + 1) with 1-based turn index i.
pub fn time_weighted_performance(t: &Trajectory) -> f64 {
    t.turns.iter().map(|r| r.raw_reward / (f64::from(r.turn_index) + 1.0)).sum()
}

/// What the per-gym score measures.
pub fn metric_name(gym: GymKind) -> &'static str {
    match gym {
        GymKind::Turtle | GymKind::Persuade | GymKind::Intention | GymKind::TauStub => "sum turn reward",
        GymKind::Function | GymKind::Telepathy | GymKind::Search => "success rate",
        GymKind::Travel => "normalized answer reward",
    }
}

/// The per-trajectory value averaged into the gym score.
pub fn gym_score(task: &TaskSpec, t: &Trajectory) -> f64 {
    match task.gym {
        GymKind::Turtle | GymKind::Persuade | GymKind::Intention | GymKind::TauStub => t.reward_sum(),
        GymKind::Function | GymKind::Telepathy | GymKind::Search => {
            if t.terminated_reason == crate::reward::TerminatedReason::Goal {
                1.0
            } else {
                0.0
            }
        }
        GymKind::Travel => {
            let dims = task.payload.get("dimensions").and_then(|d| d.as_array()).map_or(1, |d| d.len().max(1));
            let answers: f64 = t.turns.iter().filter(|r| r.choice.verb == Verb::Answer).map(|r| r.raw_reward).sum();
            answers / dims as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GymMetrics {
    pub gym: GymKind,
    pub metric: String,
    pub score: f64,
    pub trajectories: usize,
    pub mean_turns: f64,
    pub effective_turns: f64,
    pub time_weighted_performance: f64,
    pub termination: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub gyms: Vec<GymMetrics>,
    pub flagged_groups: Vec<String>,
}

impl MetricsReport {
    /// `lookup` maps a task id to its spec; groups of unknown tasks are skipped.
    pub fn compute<'a>(groups: &[RolloutGroup], lookup: impl Fn(&str) -> Option<&'a TaskSpec>) -> Self {
        let mut per_gym: BTreeMap<GymKind, Vec<(&'a TaskSpec, &Trajectory)>> = BTreeMap::new();
        let mut flagged_groups = Vec::new();
        for g in groups {
            if g.has_aborted() {
                flagged_groups.push(g.task_id.clone());
            }
            let Some(task) = lookup(&g.task_id) else {
                log::warn!("metrics: unknown task `{}`", g.task_id);
                continue;
            };
            per_gym.entry(task.gym).or_default().extend(g.trajectories.iter().map(|t| (task, t)));
        }
        let gyms = per_gym
            .into_iter()
            .map(|(gym, items)| {
                let n = items.len() as f64;
                let mean =
                    |f: &dyn Fn(&TaskSpec, &Trajectory) -> f64| items.iter().map(|(s, t)| f(s, t)).sum::<f64>() / n;
                let mut termination = BTreeMap::new();
                for (_, t) in &items {
                    *termination.entry(t.terminated_reason.as_str().to_string()).or_insert(0) += 1;
                }
                GymMetrics {
                    gym,
                    metric: metric_name(gym).to_string(),
                    score: mean(&gym_score),
                    trajectories: items.len(),
                    mean_turns: mean(&|_, t| t.turns.len() as f64),
                    effective_turns: mean(&|_, t| f64::from(effective_turns(t))),
                    time_weighted_performance: mean(&|_, t| time_weighted_performance(t)),
                    termination,
                }
            })
            .collect();
        Self { gyms, flagged_groups }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<15} {:<25} {:>8} {:>6} {:>8} {:>9} {:>8}  termination",
            "gym", "metric", "score", "n", "turns", "eff.turns", "tw.perf"
        );
        for g in &self.gyms {
            let term: Vec<String> = g.termination.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(
                out,
                "{:<15} {:<25} {:>8.4} {:>6} {:>8.2} {:>9.2} {:>8.4}  {}",
                g.gym.display_name(),
                g.metric,
                g.score,
                g.trajectories,
                g.mean_turns,
                g.effective_turns,
                g.time_weighted_performance,
                term.join(" ")
            );
        }
        if !self.flagged_groups.is_empty() {
            let _ = writeln!(out, "groups with aborted episodes: {}", self.flagged_groups.join(", "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StepChoice;
    use crate::reward::{TerminatedReason, TurnRecord};

    pub(crate) fn traj(rewards: &[f64]) -> Trajectory {
        Trajectory {
            task_id: "t".into(),
            turns: rewards
                .iter()
                .enumerate()
                .map(|(i, &r)| TurnRecord {
                    turn_index: i as u32 + 1,
                    choice: StepChoice::action("x"),
                    observation: String::new(),
                    raw_reward: r,
                    token_count: 1,
                    token_count_estimated: true,
                })
                .collect(),
            terminated_reason: TerminatedReason::Budget,
            abort_detail: None,
        }
    }

    #[test]
    fn effective_and_time_weighted() {
        let t = traj(&[0.2, 0.0, 0.7, 0.0, 0.0]);
        assert_eq!(effective_turns(&t), 3);
        assert_eq!(time_weighted_performance(&t), 0.2 / 2.0 + 0.7 / 4.0);
        assert_eq!(effective_turns(&traj(&[0.0; 4])), 0);
        assert_eq!(time_weighted_performance(&traj(&[0.0; 4])), 0.0);
        assert_eq!(effective_turns(&traj(&[0.0, 0.0, 1.0])), 3);
        assert_eq!(time_weighted_performance(&traj(&[1.0])), 0.5);
    }
}
