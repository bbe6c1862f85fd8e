//! Chat-completion wire format and a blocking HTTP client with retries and a
//! shared concurrency cap.
//!
//! Requests follow the common `POST {base}/chat/completions` shape: a message
//! list, temperature, and optional `tools` / `tool_choice` / `seed`.

use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub name: String,
    /// JSON-encoded arguments, as sent on the wire.
    pub arguments: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(default)]
    pub id: String,
    #[serde(rename = "type", default = "function_type")]
    pub kind: String,
    pub function: FunctionCall,
}

fn function_type() -> String {
    "function".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: MessageRole, content: impl Into<String>) -> Self {
        Self { role, content: Some(content.into()), tool_calls: Vec::new(), tool_call_id: None }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(MessageRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(MessageRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(MessageRole::Assistant, content)
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self { tool_call_id: Some(call_id.into()), ..Self::plain(MessageRole::Tool, content) }
    }

    pub fn text(&self) -> &str {
        self.content.as_deref().unwrap_or("")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_choice: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatCompletion {
    pub message: ChatMessage,
    pub usage: Option<Usage>,
    pub finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

impl ChatCompletion {
    pub fn from_wire(body: &Value) -> Result<Self, ChatError> {
        let wire: WireResponse = serde_json::from_value(body.clone()).map_err(|e| ChatError::Decode(e.to_string()))?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| ChatError::Decode("no choices".into()))?;
        Ok(Self { message: choice.message, usage: wire.usage, finish_reason: choice.finish_reason })
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("undecodable response: {0}")]
    Decode(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, initial_backoff: Duration::from_millis(250), multiplier: 2.0 }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff.mul_f64(self.multiplier.powi(retry as i32))
    }
}

/// Counting semaphore shared by every client that should respect one global cap.
#[derive(Debug)]
pub struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    pub fn new(permits: usize) -> Arc<Self> {
        Arc::new(Self { permits: Mutex::new(permits.max(1)), freed: Condvar::new() })
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit { limiter: self }
    }
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Clone, Debug)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var("USERL_API_KEY").or_else(|_| std::env::var("OPENAI_API_KEY")).ok(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct ChatClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    limiter: Arc<Limiter>,
}

impl ChatClient {
    pub fn new(config: EndpointConfig, limiter: Arc<Limiter>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent, limiter }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Reachability probe: any HTTP answer counts, only transport failures do not.
    pub fn health(&self) -> Result<(), ChatError> {
        let url =
            format!("{}/models", self.config.base_url.trim_end_matches('/').trim_end_matches("/chat/completions"));
        match self.agent.get(&url).call() {
            Ok(_) | Err(ureq::Error::Status(..)) => Ok(()),
            Err(ureq::Error::Transport(t)) => Err(ChatError::Transport(t.to_string())),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, ChatError> {
        let policy = self.config.retry;
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.send_once(request)
            };
            let retryable = match &result {
                Ok(_) => return result,
                Err(ChatError::Timeout { .. } | ChatError::Transport(_)) => true,
                Err(ChatError::Status { code, .. }) => *code == 429 || *code >= 500,
                Err(ChatError::Decode(_)) => false,
            };
            if !retryable || attempt >= policy.max_retries {
                return match result {
                    Err(ChatError::Timeout { .. }) => Err(ChatError::Timeout { attempts: attempt + 1 }),
                    other => other,
                };
            }
            thread::sleep(policy.backoff(attempt));
            attempt += 1;
        }
    }

    fn send_once(&self, request: &ChatRequest) -> Result<ChatCompletion, ChatError> {
        let mut req = self.agent.post(&self.config.completions_url());
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(request) {
            Ok(resp) => {
                let body: Value = resp.into_json().map_err(|e| ChatError::Decode(e.to_string()))?;
                ChatCompletion::from_wire(&body)
            }
            Err(ureq::Error::Status(code, resp)) => {
                Err(ChatError::Status { code, body: resp.into_string().unwrap_or_default() })
            }
            Err(ureq::Error::Transport(t)) => {
                let timed_out =
                    std::error::Error::source(&t).and_then(|s| s.downcast_ref::<std::io::Error>()).is_some_and(|io| {
                        matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock)
                    }) || t.to_string().contains("timed out");
                if timed_out {
                    Err(ChatError::Timeout { attempts: 1 })
                } else {
                    Err(ChatError::Transport(t.to_string()))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn decodes_tool_calls_and_usage() {
        let body = json!({
            "choices": [{
                "message": {
                    "role": "assistant",
                    "content": "<think>probe</think>",
                    "tool_calls": [{"id": "c1", "type": "function",
                        "function": {"name": "interact_with_env", "arguments": "{\"choice\":\"action\",\"content\":\"1,2,3,4\"}"}}]
                },
                "finish_reason": "tool_calls"
            }],
            "usage": {"prompt_tokens": 10, "completion_tokens": 7, "total_tokens": 17}
        });
        let c = ChatCompletion::from_wire(&body).unwrap();
        assert_eq!(c.message.tool_calls.len(), 1);
        assert_eq!(c.usage.unwrap().completion_tokens, 7);
        assert!(ChatCompletion::from_wire(&json!({"choices": []})).is_err());
    }

    #[test]
    fn request_omits_absent_options() {
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::system("s"), ChatMessage::user("u")],
            temperature: 0.0,
            tools: None,
            tool_choice: None,
            max_tokens: None,
            seed: Some(3),
        };
        let v = serde_json::to_value(&req).unwrap();
        assert!(v.get("tools").is_none());
        assert_eq!(v["seed"], 3);
        assert_eq!(v["messages"][1]["role"], "user");
    }

    #[test]
    fn url_and_backoff() {
        let cfg = EndpointConfig::new("http://h:1/v1/", "m");
        assert_eq!(cfg.completions_url(), "http://h:1/v1/chat/completions");
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(0), Duration::from_millis(250));
        assert_eq!(p.backoff(1), Duration::from_millis(500));
    }

    #[test]
    fn limiter_caps_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let lim = Limiter::new(2);
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (lim, live, peak) = (lim.clone(), live.clone(), peak.clone());
                thread::spawn(move || {
                    let _p = lim.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
