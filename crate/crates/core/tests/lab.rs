mod common;

use common::oracle::{brute_force_objective, finite_difference, random_batch, random_policy, rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use userl_core::exec::Exec;
use userl_core::lab::{
    compare_settings, gradient, objective, sample_group, softmax, surrogate_term, to_rollout_group, update_policy,
    BatchToken, ChainAction, ChainGym, LabConfig, LabError, TabularPolicy, UpdateBatch,
};
use userl_core::reward::{advantages_for_rewards, group_advantages, ShapingSpec};

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let old = random_policy(&mut rng, 5);
        let mut cur = old.clone();
        let jitter: Vec<f64> = old.params().iter().map(|x| x + rng.gen_range(-0.3..0.3)).collect();
        cur.set_params(&jitter);
        let batch = random_batch(&mut rng, &old, 0.2);
        let err = rel_err(&gradient(&cur, &batch), &finite_difference(&cur, &batch, 1e-5));
        assert!(err < 1e-6, "relative error {err}");
    }
}

#[test]
fn objective_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let old = random_policy(&mut rng, 4);
        let cur = random_policy(&mut rng, 4);
        let batch = random_batch(&mut rng, &old, 0.2);
        assert!((objective(&cur, &batch) - brute_force_objective(&cur, &batch)).abs() < 1e-10);
    }
}

#[test]
fn unclipped_update_is_reinforce() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let policy = random_policy(&mut rng, 4);
        let batch = random_batch(&mut rng, &policy, f64::INFINITY);
        // Σ_traj (1/L) Σ_k A_k ∇ log π(a_k), averaged over trajectories.
        let mut want = vec![0.0; policy.param_count()];
        for traj in &batch.trajectories {
            for k in traj {
                let p = softmax(&policy.logits[k.turn]);
                for b in 0..ChainAction::COUNT {
                    let ind = f64::from(u8::from(b == k.action));
                    want[k.turn * ChainAction::COUNT + b] +=
                        k.advantage * (ind - p[b]) / traj.len() as f64 / batch.trajectories.len() as f64;
                }
            }
        }
        let got = gradient(&policy, &batch);
        assert!(rel_err(&got, &want) < 1e-12);
        let mut stepped = policy.clone();
        update_policy(&mut stepped, &batch).unwrap();
        for ((after, before), g) in stepped.params().iter().zip(policy.params()).zip(&want) {
            assert!((after - (before + batch.learning_rate * g)).abs() < 1e-12);
        }
    }
}

#[test]
fn clipping_is_flat_beyond_the_trust_region() {
    let eps = 0.2;
    let at_edge_pos = surrogate_term(1.0 + eps, 1.3, eps);
    let at_edge_neg = surrogate_term(1.0 - eps, -0.7, eps);
    for i in 0..=200 {
        let rho = 1.0 + eps + i as f64 * 0.05;
        assert_eq!(surrogate_term(rho, 1.3, eps), at_edge_pos);
        let rho = (1.0 - eps) * i as f64 / 200.0;
        assert_eq!(surrogate_term(rho, -0.7, eps), at_edge_neg);
    }
    assert_eq!(surrogate_term(1.5, 1.0, 0.2), 1.2);
    assert_eq!(surrogate_term(0.5, -1.0, 0.2), -0.8);
}

#[test]
fn positive_advantage_raises_its_logit() {
    let mut p = TabularPolicy::uniform(3);
    let mut batch = UpdateBatch::new(0.2, 1.0);
    batch.trajectories.push(vec![BatchToken { turn: 1, action: 1, old_prob: 0.25, advantage: 1.0 }]);
    let before = p.logits[1][1];
    update_policy(&mut p, &batch).unwrap();
    assert!(p.logits[1][1] > before);
    assert!(p.logits[1][0] < 0.0);
    assert_eq!(p.logits[0], [0.0; 4]);
}

#[test]
fn non_finite_gradient_aborts_the_step() {
    let mut p = TabularPolicy::uniform(2);
    let mut batch = UpdateBatch::new(0.2, 1.0);
    batch.trajectories.push(vec![BatchToken { turn: 0, action: 0, old_prob: 0.25, advantage: f64::NAN }]);
    let before = p.clone();
    assert!(matches!(update_policy(&mut p, &batch), Err(LabError::NonFiniteGradient)));
    assert_eq!(p, before);
}

#[test]
fn greedy_policy_gives_a_zero_variance_group() {
    let mut p = TabularPolicy::uniform(8);
    for row in &mut p.logits {
        row[ChainAction::Unlock.index()] = 60.0;
    }
    p.logits[1][ChainAction::Solve.index()] = 80.0;
    let trajs = sample_group(&p, &ChainGym::default(), 8, 3, Exec::Parallel).unwrap();
    assert!(trajs.iter().all(|t| t.actions == trajs[0].actions && t.solved));
    let adv = group_advantages(&to_rollout_group(&trajs), &ShapingSpec::default()).unwrap();
    assert!(adv.trajectories.iter().flat_map(|a| &a.per_turn_advantages).all(|x| *x == 0.0));
}

#[test]
fn earlier_progress_wins_in_a_chain_group() {
    use ChainAction::*;
    let gym = ChainGym::default();
    let early = gym.run(&[Probe, Unlock, Solve]);
    let late = gym.run(&[Noop, Unlock, Probe, Solve]);
    let mut a = early.clone();
    let mut b = late.clone();
    a.sort_by(f64::total_cmp);
    b.retain(|x| *x != 0.0);
    a.retain(|x| *x != 0.0);
    b.sort_by(f64::total_cmp);
    assert_eq!(a, b);
    let (_, _, adv) = advantages_for_rewards(&ShapingSpec::default(), &[early, late], &[]).unwrap();
    assert!(adv[0].trajectory_score > adv[1].trajectory_score);
    assert!(adv[0].per_turn_advantages[0] > adv[1].per_turn_advantages[0]);
}

#[test]
fn small_sweep_report() {
    let cfg = LabConfig { epochs: 30, eval_episodes: 64, ..LabConfig::default() };
    let spec: ShapingSpec = "equalized/r2g".parse().unwrap();
    let one = compare_settings(&[spec], &[4], &cfg, Exec::Sequential).unwrap();
    assert_eq!(one.runs.len(), 1);
    assert_eq!(one.runs[0].curve.len(), 30);
    assert_eq!(one.runs[0].smoothed_reward.len(), 30);
    let csv = one.to_csv();
    assert!(csv.starts_with("setting,seed,epoch,"));
    assert_eq!(csv.lines().count(), 31);
    let par = compare_settings(&[spec], &[4], &cfg, Exec::Parallel).unwrap();
    assert_eq!(one, par);
    assert!(one.summary_table().contains("equalized/r2g"));
    assert!(matches!(compare_settings(&[], &[1], &cfg, Exec::Sequential), Err(LabError::EmptySweep)));
}
