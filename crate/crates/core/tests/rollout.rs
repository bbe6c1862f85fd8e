mod common;

use common::mock::{function_policy, MockChat};
use common::{ports, tasks};
use userl_core::chat::{ChatClient, ChatMessage, EndpointConfig, Limiter};
use userl_core::exec::Exec;
use userl_core::orchestrator::{
    export_advantages, leak_scan, persist_run, read_jsonl, replay_trajectory, run_group, run_plan, RolloutPlan,
    ScriptedPolicy, ScriptedTurn, TrajectoryRecord, TurnStatus,
};
use userl_core::reward::{AdvantageRecord, TerminatedReason};

fn client(mock: &MockChat) -> ChatClient {
    ChatClient::new(EndpointConfig::new(mock.url.clone(), "mock-policy"), Limiter::new(8))
}

fn plan() -> RolloutPlan {
    RolloutPlan { max_turns: 6, ..RolloutPlan::default() }
}

#[test]
fn group_against_mock_endpoint() {
    let mock = MockChat::start(function_policy);
    let tasks = tasks();
    let task = tasks.get("fn-1").unwrap();
    let plan = plan();
    let (group, transcripts) = run_group(&plan, &client(&mock), &ports(), task);

    assert_eq!(group.trajectories.len(), 8);
    for (i, t) in group.trajectories.iter().enumerate() {
        assert_eq!(t.terminated_reason, TerminatedReason::Goal, "#{i}: {:?}", t.abort_detail);
        let want: &[f64] = if i % 2 == 0 { &[0.0, 0.0, 1.0] } else { &[0.0, 0.0, 0.0, 1.0] };
        assert_eq!(t.rewards(), want, "#{i}");
        assert!(t.turns.iter().all(|r| r.token_count == 7 && !r.token_count_estimated));
    }
    assert_eq!(transcripts[3].turn_log[0].status, TurnStatus::Reprompted);
    assert!(transcripts.iter().enumerate().all(|(i, t)| t.trajectory_index == i));
    // 7 episodes x 3-4 requests plus one reprompt.
    assert_eq!(mock.requests.load(std::sync::atomic::Ordering::SeqCst), 4 * 3 + 4 * 4 + 1);

    assert!(leak_scan(&transcripts, |id| tasks.get(id)).is_empty());

    let dir = tempfile::tempdir().unwrap();
    let summary =
        persist_run(dir.path(), &plan, std::slice::from_ref(&group), &transcripts, false, |id| tasks.get(id)).unwrap();
    assert_eq!((summary.trajectories, summary.advantage_records, summary.leaks), (8, 8, 0));
    for f in ["trajectories.jsonl", "transcripts.jsonl", "advantages.jsonl", "metrics.json", "metrics.txt"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    assert!(!dir.path().join("trajectories.jsonl.tmp").exists());
    let back: Vec<TrajectoryRecord> = read_jsonl(&dir.path().join("trajectories.jsonl")).unwrap();
    assert_eq!(TrajectoryRecord::regroup(back), vec![group.clone()]);
    let adv: Vec<AdvantageRecord> = read_jsonl(&dir.path().join("advantages.jsonl")).unwrap();
    // Equalized/R2G: 0.64 for even episodes, 0.512 for odd ones.
    let even = adv[0].per_turn_advantages[0];
    assert!(even > 0.0 && adv[1].per_turn_advantages[0] < 0.0);
    assert!((adv[0].trajectory_score - 0.64).abs() < 1e-12);
    assert!((adv[1].trajectory_score - 0.512).abs() < 1e-12);

    for t in &group.trajectories {
        let check = replay_trajectory(t, task, &plan.env, ports()).unwrap();
        assert!(check.matches(), "{check:?}");
    }
}

#[test]
fn leak_scan_catches_a_planted_secret() {
    let mock = MockChat::start(function_policy);
    let tasks = tasks();
    let task = tasks.get("fn-1").unwrap();
    let plan = RolloutPlan { group_size: 2, ..plan() };
    let (_, mut transcripts) = run_group(&plan, &client(&mock), &ports(), task);
    transcripts[1].messages.push(ChatMessage::user("hint: the rule is A+B+C+D"));
    let leaks = leak_scan(&transcripts, |id| tasks.get(id));
    assert_eq!(leaks.len(), 1);
    assert_eq!(leaks[0].trajectory_index, 1);
}

#[test]
fn sequential_and_parallel_plans_agree() {
    let tasks = tasks();
    let policy = ScriptedPolicy::new()
        .with("*", vec![ScriptedTurn::call("action", "1,1,1,1"), ScriptedTurn::call("answer", "4")]);
    let picked: Vec<_> = ["fn-1", "fn-2", "fn-4"].iter().map(|id| tasks.get(id).unwrap().clone()).collect();
    let seq = run_plan(&RolloutPlan { exec: Exec::Sequential, group_size: 3, ..plan() }, &policy, &ports(), &picked);
    let par = run_plan(&RolloutPlan { exec: Exec::Parallel, group_size: 3, ..plan() }, &policy, &ports(), &picked);
    assert_eq!(seq.len(), 3);
    for ((ga, ta), (gb, tb)) in seq.iter().zip(&par) {
        assert_eq!(ga, gb);
        assert_eq!(ta, tb);
    }
    assert_eq!(seq[0].0.task_id, "fn-1");
}

#[test]
fn malformed_twice_aborts_and_blocks_export() {
    let tasks = tasks();
    let task = tasks.get("fn-2").unwrap();
    let policy = ScriptedPolicy::new().with(
        "fn-2",
        vec![ScriptedTurn::call("action", "2,3,4,5"), ScriptedTurn::text("hmm"), ScriptedTurn::text("still prose")],
    );
    let plan = RolloutPlan { group_size: 2, ..plan() };
    let (group, transcripts) = run_group(&plan, &policy, &ports(), task);
    for t in &group.trajectories {
        assert_eq!(t.terminated_reason, TerminatedReason::Aborted);
        assert_eq!(t.turns.len(), 1);
    }
    let statuses: Vec<TurnStatus> = transcripts[0].turn_log.iter().map(|l| l.status).collect();
    assert_eq!(statuses, vec![TurnStatus::Ok, TurnStatus::Reprompted, TurnStatus::Aborted]);
    let export = export_advantages(std::slice::from_ref(&group), &plan.shaping, false);
    assert!(export.records.is_empty());
    assert_eq!(export.refused.len(), 1);
    assert_eq!(export_advantages(&[group], &plan.shaping, true).records.len(), 2);
}

#[test]
fn unreachable_endpoint_aborts_cleanly() {
    let mut cfg = EndpointConfig::new("http://127.0.0.1:9/v1", "nobody");
    cfg.retry.max_retries = 0;
    let client = ChatClient::new(cfg, Limiter::new(1));
    let tasks = tasks();
    let plan = RolloutPlan { group_size: 2, ..plan() };
    let (group, _) = run_group(&plan, &client, &ports(), tasks.get("fn-1").unwrap());
    assert!(group.trajectories.iter().all(|t| t.is_aborted() && t.turns.is_empty()));
}
