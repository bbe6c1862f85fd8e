//! Tabular softmax policy, group sampling and the clipped surrogate update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{ChainAction, ChainGym, ChainState};
use super::LabError;
use crate::env::StepChoice;
use crate::exec::Exec;
use crate::reward::{RolloutGroup, TerminatedReason, Trajectory, TurnRecord};

/// Logits indexed by (turn, action). Temperature is fixed at 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub logits: Vec<[f64; ChainAction::COUNT]>,
}

impl TabularPolicy {
    pub fn uniform(horizon: usize) -> Self {
        Self { logits: vec![[0.0; ChainAction::COUNT]; horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.logits.len()
    }

    pub fn probs(&self, turn: usize) -> [f64; ChainAction::COUNT] {
        softmax(&self.logits[turn])
    }

    pub fn prob(&self, turn: usize, action: usize) -> f64 {
        self.probs(turn)[action]
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().flatten().all(|x| x.is_finite())
    }

    pub fn param_count(&self) -> usize {
        self.logits.len() * ChainAction::COUNT
    }

    pub fn params(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        for (row, chunk) in self.logits.iter_mut().zip(p.chunks(ChainAction::COUNT)) {
            row.copy_from_slice(chunk);
        }
    }

    pub fn greedy(&self, turn: usize) -> ChainAction {
        let row = &self.logits[turn];
        let best = (0..ChainAction::COUNT).fold(0, |b, a| if row[a] > row[b] { a } else { b });
        ChainAction::from_index(best)
    }
}

pub fn softmax<const N: usize>(z: &[f64; N]) -> [f64; N] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N];
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(z) {
        *o = (x - m).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    out
}

/// One sampled episode with the behaviour probability of every action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabTrajectory {
    pub actions: Vec<ChainAction>,
    pub probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub solved: bool,
}

impl LabTrajectory {
    pub fn reward_sum(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn to_trajectory(&self) -> Trajectory {
        let turns = self
            .actions
            .iter()
            .zip(&self.rewards)
            .enumerate()
            .map(|(i, (a, &r))| TurnRecord {
                turn_index: i as u32 + 1,
                choice: StepChoice::action(a.name()),
                observation: String::new(),
                raw_reward: r,
                token_count: 1,
                token_count_estimated: false,
            })
            .collect();
        Trajectory {
            task_id: ChainGym::TASK_ID.into(),
            turns,
            terminated_reason: if self.solved { TerminatedReason::Goal } else { TerminatedReason::Budget },
            abort_detail: None,
        }
    }
}

pub fn sample_trajectory(policy: &TabularPolicy, gym: &ChainGym, rng: &mut impl Rng) -> LabTrajectory {
    let mut s = ChainState::default();
    let mut out = LabTrajectory { actions: Vec::new(), probs: Vec::new(), rewards: Vec::new(), solved: false };
    while !gym.is_done(&s) {
        let p = policy.probs(s.turn.min(policy.horizon() - 1));
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = ChainAction::COUNT - 1;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                pick = i;
                break;
            }
        }
        let action = ChainAction::from_index(pick);
        out.rewards.push(gym.step(&mut s, action));
        out.actions.push(action);
        out.probs.push(p[pick]);
    }
    out.solved = s.solved;
    out
}

/// `n` episodes; trajectory `i` draws from stream `i` of a generator seeded with `seed`,
/// so the result does not depend on `exec`.
pub fn sample_group(
    policy: &TabularPolicy,
    gym: &ChainGym,
    n: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<LabTrajectory>, LabError> {
    if n < 2 {
        return Err(LabError::GroupTooSmall(n));
    }
    Ok(exec.map_range(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        sample_trajectory(policy, gym, &mut rng)
    }))
}

pub fn to_rollout_group(trajs: &[LabTrajectory]) -> RolloutGroup {
    RolloutGroup {
        task_id: ChainGym::TASK_ID.into(),
        trajectories: trajs.iter().map(LabTrajectory::to_trajectory).collect(),
    }
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn surrogate_term(rho: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon);
    (rho * advantage).min(clipped * advantage)
}

/// Derivative of [`surrogate_term`] with respect to `rho`; zero on the clipped branch.
pub fn surrogate_slope(rho: f64, advantage: f64, epsilon: f64) -> f64 {
    if (advantage > 0.0 && rho > 1.0 + epsilon) || (advantage < 0.0 && rho < 1.0 - epsilon) {
        0.0
    } else {
        advantage
    }
}

/// One policy token: the state it was emitted in, the action, its behaviour
/// probability and its advantage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchToken {
    pub turn: usize,
    pub action: usize,
    pub old_prob: f64,
    pub advantage: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateBatch {
    /// Tokens of each trajectory; the objective averages within a trajectory
    /// and then across trajectories.
    pub trajectories: Vec<Vec<BatchToken>>,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl UpdateBatch {
    pub fn new(epsilon: f64, learning_rate: f64) -> Self {
        Self { trajectories: Vec::new(), epsilon, learning_rate }
    }

    /// Append a sampled trajectory with one advantage per turn (one token per turn).
    pub fn push_sampled(&mut self, t: &LabTrajectory, advantages: &[f64]) {
        let tokens = t
            .actions
            .iter()
            .zip(&t.probs)
            .zip(advantages)
            .enumerate()
            .map(|(turn, ((a, &p), &adv))| BatchToken { turn, action: a.index(), old_prob: p, advantage: adv })
            .collect();
        self.trajectories.push(tokens);
    }
}

/// Surrogate objective of `policy` on `batch`.
pub fn objective(policy: &TabularPolicy, batch: &UpdateBatch) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for traj in &batch.trajectories {
        if traj.is_empty() {
            continue;
        }
        let s: f64 = traj
            .iter()
            .map(|k| surrogate_term(policy.prob(k.turn, k.action) / k.old_prob, k.advantage, batch.epsilon))
            .sum();
        total += s / traj.len() as f64;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Analytic gradient of [`objective`] with respect to the logits, flattened row-major.
pub fn gradient(policy: &TabularPolicy, batch: &UpdateBatch) -> Vec<f64> {
    let mut g = vec![0.0; policy.param_count()];
    let live: Vec<&Vec<BatchToken>> = batch.trajectories.iter().filter(|t| !t.is_empty()).collect();
    if live.is_empty() {
        return g;
    }
    let outer = 1.0 / live.len() as f64;
    for traj in live {
        let w = outer / traj.len() as f64;
        for k in traj {
            let p = policy.probs(k.turn);
            let rho = p[k.action] / k.old_prob;
            let slope = surrogate_slope(rho, k.advantage, batch.epsilon);
            if slope == 0.0 {
                continue;
            }
            let base = k.turn * ChainAction::COUNT;
            for (b, &pb) in p.iter().enumerate() {
                let ind = if b == k.action { 1.0 } else { 0.0 };
                g[base + b] += w * slope * rho * (ind - pb);
            }
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub objective: f64,
    pub grad_norm: f64,
}

/// One gradient-ascent step. The policy is left untouched when the gradient
/// is not finite.
pub fn update_policy(policy: &mut TabularPolicy, batch: &UpdateBatch) -> Result<UpdateStats, LabError> {
    if batch.epsilon.is_nan() || batch.epsilon <= 0.0 {
        return Err(LabError::InvalidEpsilon(batch.epsilon));
    }
    let objective = objective(policy, batch);
    let g = gradient(policy, batch);
    if !objective.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(LabError::NonFiniteGradient);
    }
    let mut p = policy.params();
    for (x, d) in p.iter_mut().zip(&g) {
        *x += batch.learning_rate * d;
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(LabError::NonFiniteGradient);
    }
    policy.set_params(&p);
    Ok(UpdateStats { objective, grad_norm: g.iter().map(|x| x * x).sum::<f64>().sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_examples() {
        assert_eq!(surrogate_term(1.5, 1.0, 0.2), 1.2);
        assert_eq!(surrogate_term(0.5, -1.0, 0.2), -0.8);
        assert_eq!(surrogate_term(1.0, 0.0, 0.2), 0.0);
    }

    #[test]
    fn uniform_group_is_reproducible() {
        let p = TabularPolicy::uniform(8);
        let g = ChainGym::default();
        let a = sample_group(&p, &g, 8, 42, Exec::Sequential).unwrap();
        let b = sample_group(&p, &g, 8, 42, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.len() <= 8));
        assert!(a.iter().flat_map(|t| &t.probs).all(|&p| p == 0.25));
        assert!(matches!(sample_group(&p, &g, 1, 0, Exec::Sequential), Err(LabError::GroupTooSmall(1))));
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let mut p = TabularPolicy::uniform(8);
        let g = ChainGym::default();
        let trajs = sample_group(&p, &g, 4, 1, Exec::Sequential).unwrap();
        let mut batch = UpdateBatch::new(0.2, 1.0);
        for t in &trajs {
            batch.push_sampled(t, &vec![0.0; t.len()]);
        }
        let before = p.clone();
        update_policy(&mut p, &batch).unwrap();
        assert_eq!(p, before);
    }
}
