//! Training runs across shaping settings and seeds, with smoothed curves.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::ChainGym;
use super::policy::{sample_group, sample_trajectory, update_policy, LabTrajectory, TabularPolicy, UpdateBatch};
use super::LabError;
use crate::exec::Exec;
use crate::reward::{advantages_for_rewards, ShapingSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    pub horizon: usize,
    pub group_size: usize,
    pub groups_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub eval_episodes: usize,
    pub smoothing_sigma: f64,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            group_size: 8,
            groups_per_epoch: 4,
            epochs: 200,
            learning_rate: 2.0,
            epsilon: 0.2,
            eval_episodes: 1000,
            smoothing_sigma: 2.0,
        }
    }
}

/// Statistics of the episodes sampled for one update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub reward_sum: f64,
    pub solve_rate: f64,
    /// Mean turns over solved episodes; NaN when none solved.
    pub turns_to_solve: f64,
    pub objective: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub solve_rate: f64,
    pub turns_to_solve: f64,
    pub reward_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub setting: String,
    pub seed: u64,
    pub curve: Vec<EpochStats>,
    pub smoothed_reward: Vec<f64>,
    pub eval: EvalStats,
    pub policy: TabularPolicy,
}

fn episode_stats(trajs: &[LabTrajectory]) -> (f64, f64, f64) {
    let n = trajs.len() as f64;
    let reward = trajs.iter().map(LabTrajectory::reward_sum).sum::<f64>() / n;
    let solved: Vec<&LabTrajectory> = trajs.iter().filter(|t| t.solved).collect();
    let rate = solved.len() as f64 / n;
    let turns = if solved.is_empty() {
        f64::NAN
    } else {
        solved.iter().map(|t| t.len() as f64).sum::<f64>() / solved.len() as f64
    };
    (reward, rate, turns)
}

fn stream_seed(seed: u64, epoch: usize, group: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 20) ^ group as u64
}

/// Sample `episodes` episodes from `policy` and summarise them.
pub fn evaluate(policy: &TabularPolicy, gym: &ChainGym, episodes: usize, seed: u64) -> EvalStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE7A1);
    let trajs: Vec<LabTrajectory> = (0..episodes).map(|_| sample_trajectory(policy, gym, &mut rng)).collect();
    let (reward_sum, solve_rate, turns_to_solve) = episode_stats(&trajs);
    EvalStats { episodes, solve_rate, turns_to_solve, reward_sum }
}

/// Train a uniform policy from scratch under `spec`.
pub fn train(spec: &ShapingSpec, seed: u64, config: &LabConfig, exec: Exec) -> Result<RunResult, LabError> {
    spec.validate()?;
    let gym = ChainGym { horizon: config.horizon };
    let mut policy = TabularPolicy::uniform(config.horizon);
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut batch = UpdateBatch::new(config.epsilon, config.learning_rate);
        let mut sampled = Vec::with_capacity(config.group_size * config.groups_per_epoch);
        for g in 0..config.groups_per_epoch {
            let trajs = sample_group(&policy, &gym, config.group_size, stream_seed(seed, epoch, g), exec)?;
            let rewards: Vec<Vec<f64>> = trajs.iter().map(|t| t.rewards.clone()).collect();
            let tokens: Vec<Vec<u32>> = trajs.iter().map(|t| vec![1; t.len()]).collect();
            let (_, _, adv) = advantages_for_rewards(spec, &rewards, &tokens)?;
            for (t, a) in trajs.iter().zip(&adv) {
                batch.push_sampled(t, &a.token_advantages);
            }
            sampled.extend(trajs);
        }
        let stats = update_policy(&mut policy, &batch)?;
        let (reward_sum, solve_rate, turns_to_solve) = episode_stats(&sampled);
        curve.push(EpochStats { epoch, reward_sum, solve_rate, turns_to_solve, objective: stats.objective });
    }
    let rewards: Vec<f64> = curve.iter().map(|c| c.reward_sum).collect();
    Ok(RunResult {
        setting: spec.label(),
        seed,
        smoothed_reward: gaussian_smooth(&rewards, config.smoothing_sigma),
        eval: evaluate(&policy, &gym, config.eval_episodes, seed),
        curve,
        policy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabReport {
    pub config: LabConfig,
    pub runs: Vec<RunResult>,
}

/// Train every setting on every seed. Runs are independent and go through `exec`.
pub fn compare_settings(
    settings: &[ShapingSpec],
    seeds: &[u64],
    config: &LabConfig,
    exec: Exec,
) -> Result<LabReport, LabError> {
    if settings.is_empty() || seeds.is_empty() {
        return Err(LabError::EmptySweep);
    }
    let jobs: Vec<(&ShapingSpec, u64)> =
        settings.iter().flat_map(|s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let runs = exec.map(&jobs, |&(s, seed)| train(s, seed, config, Exec::Sequential));
    Ok(LabReport { config: config.clone(), runs: runs.into_iter().collect::<Result<_, _>>()? })
}

/// Per-setting aggregate over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub setting: String,
    pub seeds: usize,
    pub mean_solve_rate: f64,
    pub min_solve_rate: f64,
    pub mean_turns_to_solve: f64,
    pub final_reward: f64,
}

impl LabReport {
    pub fn runs_for<'a>(&'a self, setting: &'a str) -> impl Iterator<Item = &'a RunResult> + 'a {
        self.runs.iter().filter(move |r| r.setting == setting)
    }

    pub fn summaries(&self) -> Vec<SettingSummary> {
        let mut order: Vec<&str> = Vec::new();
        for r in &self.runs {
            if !order.contains(&r.setting.as_str()) {
                order.push(&r.setting);
            }
        }
        order
            .into_iter()
            .map(|s| {
                let runs: Vec<&RunResult> = self.runs_for(s).collect();
                let n = runs.len() as f64;
                let solved: Vec<f64> = runs.iter().map(|r| r.eval.turns_to_solve).filter(|t| t.is_finite()).collect();
                SettingSummary {
                    setting: s.to_string(),
                    seeds: runs.len(),
                    mean_solve_rate: runs.iter().map(|r| r.eval.solve_rate).sum::<f64>() / n,
                    min_solve_rate: runs.iter().map(|r| r.eval.solve_rate).fold(f64::INFINITY, f64::min),
                    mean_turns_to_solve: if solved.is_empty() {
                        f64::NAN
                    } else {
                        solved.iter().sum::<f64>() / solved.len() as f64
                    },
                    final_reward: runs.iter().map(|r| r.smoothed_reward.last().copied().unwrap_or(0.0)).sum::<f64>()
                        / n,
                }
            })
            .collect()
    }

    /// One row per (setting, seed, epoch).
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("setting,seed,epoch,reward_sum,reward_sum_smoothed,solve_rate,turns_to_solve,objective\n");
        for r in &self.runs {
            for (c, sm) in r.curve.iter().zip(&r.smoothed_reward) {
                let turns =
                    if c.turns_to_solve.is_finite() { format!("{:.4}", c.turns_to_solve) } else { String::new() };
                let _ = writeln!(
                    out,
                    "{},{},{},{:.6},{:.6},{:.4},{},{:.6}",
                    r.setting, r.seed, c.epoch, c.reward_sum, sm, c.solve_rate, turns, c.objective
                );
            }
        }
        out
    }

    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>5} {:>10} {:>10} {:>12} {:>12}\n",
            "setting", "seeds", "solve", "min solve", "turns/solve", "reward (sm)"
        );
        for s in self.summaries() {
            let _ = writeln!(
                out,
                "{:<16} {:>5} {:>10.3} {:>10.3} {:>12.3} {:>12.3}",
                s.setting, s.seeds, s.mean_solve_rate, s.min_solve_rate, s.mean_turns_to_solve, s.final_reward
            );
        }
        out
    }
}

/// Gaussian filter with reflected edges (`d c b a | a b c d | d c b a`),
/// kernel truncated at four standard deviations.
pub fn gaussian_smooth(xs: &[f64], sigma: f64) -> Vec<f64> {
    if xs.is_empty() || sigma <= 0.0 {
        return xs.to_vec();
    }
    let radius = (4.0 * sigma + 0.5) as isize;
    let weights: Vec<f64> = (-radius..=radius).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let n = xs.len() as isize;
    let reflect = |mut i: isize| {
        let period = 2 * n;
        i = i.rem_euclid(period);
        if i >= n {
            period - 1 - i
        } else {
            i
        }
    };
    (0..n)
        .map(|c| (-radius..=radius).zip(&weights).map(|(o, w)| w * xs[reflect(c + o) as usize]).sum::<f64>() / total)
        .collect()
}
