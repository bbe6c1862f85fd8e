//! From-scratch reference implementations used to check the library.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use userl_core::lab::{objective, BatchToken, ChainAction, TabularPolicy, UpdateBatch};
use userl_core::reward::{ShapingSpec, TrajScore, TurnShaping};

pub fn score(spec: &ShapingSpec, r: &[f64]) -> f64 {
    match spec.traj {
        TrajScore::Sum => r.iter().sum(),
        TrajScore::R2g => r.iter().enumerate().map(|(j, x)| spec.gamma.powi(j as i32) * x).sum(),
    }
}

pub fn shaped(spec: &ShapingSpec, r: &[f64]) -> Vec<f64> {
    let t = r.len();
    match spec.turn {
        TurnShaping::Naive => r.to_vec(),
        TurnShaping::Equalized => vec![score(spec, r); t],
        TurnShaping::R2g => (0..t).map(|i| (i..t).map(|j| spec.gamma.powi((j - i) as i32) * r[j]).sum()).collect(),
        TurnShaping::Em => {
            r.iter().map(|x| 0.5 + 0.5 * (1.0 - (-spec.k * x).exp()) / (1.0 - (-spec.k).exp())).collect()
        }
    }
}

/// Per-trajectory, per-turn advantages with a two-pass population std.
pub fn advantages(spec: &ShapingSpec, group: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scores: Vec<f64> = group.iter().map(|r| score(spec, r)).collect();
    let n = scores.len() as f64;
    let mut mean = 0.0;
    for s in &scores {
        mean += s;
    }
    mean /= n;
    let mut var = 0.0;
    for s in &scores {
        var += (s - mean) * (s - mean);
    }
    let std = (var / n).sqrt();
    group.iter().map(|r| shaped(spec, r).iter().map(|x| (x - mean) / (std + spec.eta)).collect()).collect()
}

pub fn all_specs() -> Vec<ShapingSpec> {
    let mut out = Vec::new();
    for turn in [TurnShaping::Naive, TurnShaping::Equalized, TurnShaping::R2g, TurnShaping::Em] {
        for traj in [TrajScore::Sum, TrajScore::R2g] {
            out.push(ShapingSpec::new(turn, traj));
        }
    }
    out
}

pub fn random_policy(rng: &mut ChaCha8Rng, h: usize) -> TabularPolicy {
    let mut p = TabularPolicy::uniform(h);
    let params: Vec<f64> = (0..p.param_count()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    p.set_params(&params);
    p
}

/// Tokens drawn from `behaviour`; some turns span several tokens.
pub fn random_batch(rng: &mut ChaCha8Rng, behaviour: &TabularPolicy, epsilon: f64) -> UpdateBatch {
    let mut batch = UpdateBatch::new(epsilon, 0.5);
    for _ in 0..rng.gen_range(1..6) {
        let mut tokens = Vec::new();
        for turn in 0..rng.gen_range(1..=behaviour.horizon()) {
            let adv = rng.gen_range(-2.0..2.0);
            for _ in 0..rng.gen_range(1..4) {
                let action = rng.gen_range(0..ChainAction::COUNT);
                tokens.push(BatchToken { turn, action, old_prob: behaviour.prob(turn, action), advantage: adv });
            }
        }
        batch.trajectories.push(tokens);
    }
    batch
}

pub fn brute_force_objective(p: &TabularPolicy, b: &UpdateBatch) -> f64 {
    let mut per_traj = Vec::new();
    for traj in &b.trajectories {
        let mut total = 0.0;
        for k in traj {
            let z = p.logits[k.turn];
            let denom: f64 = z.iter().map(|x| x.exp()).sum();
            let rho = z[k.action].exp() / denom / k.old_prob;
            let clipped = rho.max(1.0 - b.epsilon).min(1.0 + b.epsilon);
            total += f64::min(rho * k.advantage, clipped * k.advantage);
        }
        per_traj.push(total / traj.len() as f64);
    }
    per_traj.iter().sum::<f64>() / per_traj.len() as f64
}

pub fn finite_difference(p: &TabularPolicy, b: &UpdateBatch, h: f64) -> Vec<f64> {
    let base = p.params();
    (0..base.len())
        .map(|i| {
            let mut q = p.clone();
            let mut x = base.clone();
            x[i] = base[i] + h;
            q.set_params(&x);
            let up = objective(&q, b);
            x[i] = base[i] - h;
            q.set_params(&x);
            (up - objective(&q, b)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
