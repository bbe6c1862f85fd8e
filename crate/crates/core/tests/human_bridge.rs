mod common;

use std::net::TcpStream;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};
use userl_core::env::{Env, EnvConfig, EnvError, Ports, StepChoice};
use userl_core::orchestrator::{run_episode, RolloutPlan, ScriptedPolicy, ScriptedTurn};
use userl_core::reward::TerminatedReason;
use userl_core::usersim::human::ws::WsHub;
use userl_core::usersim::{BridgeMessage, HumanBridge, HumanReply, UserSimError};

struct Console(WebSocket<MaybeTlsStream<TcpStream>>);

impl Console {
    fn join(url: &str) -> Console {
        let (ws, _) = tungstenite::connect(url).unwrap();
        Console(ws)
    }

    fn recv(&mut self) -> BridgeMessage {
        loop {
            match self.0.read().unwrap() {
                Message::Text(t) => return BridgeMessage::from_line(&t).unwrap(),
                Message::Close(_) => panic!("closed"),
                _ => {}
            }
        }
    }

    fn recv_until(&mut self, type_name: &str) -> BridgeMessage {
        loop {
            let m = self.recv();
            if m.type_name() == type_name {
                return m;
            }
        }
    }

    fn reply(&mut self, r: HumanReply) {
        self.0.send(Message::text(BridgeMessage::HumanReply(r).to_line())).unwrap();
    }
}

fn wait_connected(hub: &WsHub, id: &str) {
    for _ in 0..200 {
        if hub.is_connected(id) {
            return;
        }
        thread::sleep(Duration::from_millis(10));
    }
    panic!("console never connected");
}

#[test]
fn telepathy_session_with_reconnect() {
    let hub = WsHub::bind("127.0.0.1:0").unwrap();
    let bridge = Arc::new(HumanBridge::new("s1", hub.transport("s1"), Duration::from_secs(20)));
    let tasks = common::tasks();
    let task = tasks.get("tel-1").unwrap().clone();
    bridge.start(task.gym, &task.task_id, Some(serde_json::json!({"target_entity": "Eiffel Tower"}))).unwrap();

    let url = hub.url_for("s1");
    let console = thread::spawn(move || {
        let mut c = Console::join(&url);
        match c.recv() {
            BridgeMessage::SessionStart { session_id, task_id, ground_truth, .. } => {
                assert_eq!((session_id.as_str(), task_id.as_str()), ("s1", "tel-1"));
                assert!(ground_truth.is_some());
            }
            other => panic!("expected session_start, got {other:?}"),
        }
        let BridgeMessage::AgentTurn { turn_index, content, options, .. } = c.recv_until("agent_turn") else {
            unreachable!()
        };
        assert_eq!((turn_index, content.as_str()), (1, "Is it man-made?"));
        assert_eq!(options.unwrap(), vec!["Yes", "No", "Maybe"]);
        c.reply(HumanReply::choice("Yes"));

        // Drop the connection while the guess is pending, then rejoin.
        let BridgeMessage::AgentTurn { turn_index, .. } = c.recv_until("agent_turn") else { unreachable!() };
        assert_eq!(turn_index, 2);
        drop(c);
        let mut c = Console::join(&url);
        assert_eq!(c.recv().type_name(), "session_start");
        let BridgeMessage::AgentTurn { turn_index, content, .. } = c.recv() else {
            panic!("pending turn not replayed")
        };
        assert_eq!((turn_index, content.as_str()), (2, "Eiffel Tower"));
        c.reply(HumanReply::choice("Yes"));
        let end = c.recv_until("session_end");
        let BridgeMessage::SessionEnd { metrics } = end else { unreachable!() };
        assert_eq!(metrics["reward_sum"], 1.0);
    });

    let mut env = Env::reset(task, EnvConfig::default(), Ports::new(bridge.clone())).unwrap();
    let r = env.step(StepChoice::action("Is it man-made?")).unwrap();
    assert_eq!((r.observation.as_str(), r.reward), ("Yes", 0.0));
    bridge.turn_reward(1, r.reward).unwrap();
    let r = env.step(StepChoice::answer("Eiffel Tower")).unwrap();
    assert_eq!((r.reward, r.done), (1.0, true));
    bridge.turn_reward(2, r.reward).unwrap();
    bridge.end(serde_json::json!({"reward_sum": 1.0, "effective_turns": 1})).unwrap();
    console.join().unwrap();

    let types: Vec<&str> = bridge.message_log().iter().map(BridgeMessage::type_name).collect();
    assert_eq!(
        types,
        [
            "session_start",
            "agent_turn",
            "human_reply",
            "turn_reward",
            "agent_turn",
            "human_reply",
            "turn_reward",
            "session_end"
        ]
    );
}

#[test]
fn unknown_session_gets_an_error() {
    let hub = WsHub::bind("127.0.0.1:0").unwrap();
    let _known = hub.transport("known");
    let mut c = Console::join(&hub.url_for("nope"));
    match c.recv() {
        BridgeMessage::Error { message } => assert!(message.contains("nope")),
        other => panic!("expected error, got {other:?}"),
    }
}

#[test]
fn silent_human_times_out_and_aborts_the_episode() {
    let hub = WsHub::bind("127.0.0.1:0").unwrap();
    let bridge = Arc::new(HumanBridge::new("quiet", hub.transport("quiet"), Duration::from_millis(150)));
    let tasks = common::tasks();
    let task = tasks.get("tel-2").unwrap().clone();

    let mut env = Env::reset(task.clone(), EnvConfig::default(), Ports::new(bridge.clone())).unwrap();
    let err = env.step(StepChoice::action("Can it fly?")).unwrap_err();
    assert!(matches!(err, EnvError::UserPortFailure(UserSimError::HumanTimeout)));
    assert_eq!(env.session().step_count, 0);

    let policy = ScriptedPolicy::new().with("*", vec![ScriptedTurn::call("action", "Can it fly?")]);
    let plan = RolloutPlan { group_size: 1, max_turns: 4, ..RolloutPlan::default() };
    let ep = run_episode(&plan, &policy, &Ports::new(bridge), &task, 0);
    assert_eq!(ep.trajectory.terminated_reason, TerminatedReason::Aborted);
    assert_eq!(ep.trajectory.abort_detail.as_deref(), Some("human_timeout"));
}

#[test]
fn episode_driven_by_a_live_console() {
    let hub = WsHub::bind("127.0.0.1:0").unwrap();
    let bridge = Arc::new(HumanBridge::new("live", hub.transport("live"), Duration::from_secs(20)));
    let tasks = common::tasks();
    let task = tasks.get("turtle-2").unwrap().clone();
    bridge.start(task.gym, &task.task_id, None).unwrap();
    let url = hub.url_for("live");
    let console = thread::spawn(move || {
        let mut c = Console::join(&url);
        let BridgeMessage::AgentTurn { options, .. } = c.recv_until("agent_turn") else { unreachable!() };
        assert!(options.is_some());
        c.reply(HumanReply::choice("No"));
        c.recv_until("agent_turn");
        c.reply(HumanReply { scores: Some(vec![1.0, 1.0]), content: Some("Spot on.".into()), ..Default::default() });
    });
    wait_connected(&hub, "live");
    let policy = ScriptedPolicy::new().with(
        "turtle-2",
        vec![ScriptedTurn::call("action", "Is the car real?"), ScriptedTurn::call("answer", "Monopoly")],
    );
    let plan = RolloutPlan { group_size: 1, max_turns: 4, ..RolloutPlan::default() };
    let ep = run_episode(&plan, &policy, &Ports::new(bridge), &task, 0);
    console.join().unwrap();
    assert_eq!(ep.trajectory.terminated_reason, TerminatedReason::Goal);
    assert_eq!(ep.trajectory.rewards(), vec![0.0, 1.0]);
}
