//! A local OpenAI-compatible chat endpoint that replays canned tool calls.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

pub struct MockChat {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    handle: Option<thread::JoinHandle<()>>,
}

impl Drop for MockChat {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn tool_call(turn: usize, choice: &str, content: &str) -> Value {
    json!({"id": format!("call_{turn}"), "type": "function",
           "function": {"name": "interact_with_env", "arguments": json!({"choice": choice, "content": content}).to_string()}})
}

/// FunctionGym policy for `a+b+c+d` on `(5, 6, 7, 8)`: probe, fetch the test case,
/// then answer. Even seeds answer 26 straight away; odd seeds first guess 25.
/// Seed 3 sends plain text on its first turn.
pub fn function_policy(seed: u64, turn: usize) -> Value {
    let msg = |content: &str, calls: Vec<Value>| json!({"role": "assistant", "content": content, "tool_calls": calls});
    let step = match (seed, turn) {
        (3, 0) => return msg("I will probe the function.", vec![]),
        (3, t) => t - 1,
        (_, t) => t,
    };
    let call = match step {
        0 => tool_call(turn, "action", "1,2,3,4"),
        1 => tool_call(turn, "search", "test case"),
        2 if seed % 2 == 1 => tool_call(turn, "answer", "25"),
        _ => tool_call(turn, "answer", "26"),
    };
    msg("<think>working</think>", vec![call])
}

impl MockChat {
    pub fn start(policy: fn(u64, usize) -> Value) -> MockChat {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}/v1", server.server_addr().to_ip().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let (srv, count) = (server.clone(), requests.clone());
        let handle = thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                if req.url().ends_with("/models") {
                    let _ = req.respond(tiny_http::Response::from_string("{\"data\":[]}"));
                    continue;
                }
                count.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let v: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                let seed = v["seed"].as_u64().unwrap_or(0);
                let msgs = v["messages"].as_array().cloned().unwrap_or_default();
                let turn = msgs.iter().filter(|m| m["role"] == "assistant").count();
                let reply = json!({
                    "id": "mock", "object": "chat.completion",
                    "choices": [{"index": 0, "message": policy(seed, turn), "finish_reason": "tool_calls"}],
                    "usage": {"prompt_tokens": 100, "completion_tokens": 7, "total_tokens": 107}
                });
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let _ = req.respond(tiny_http::Response::from_string(reply.to_string()).with_header(header));
            }
        });
        MockChat { url, requests, server, handle: Some(handle) }
    }
}
