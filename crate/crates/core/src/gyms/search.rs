//! SearchGym: answer a multi-hop question with a limited number of web searches.
//!
//! Payload: `{"question": "...", "gold_answer": "Paris"}`; `gold_answer` may
//! also be a list of accepted aliases.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{bindings, consult, parse_payload, port_failure, schema_error, GymReply, StepContext};
use crate::env::{AnswerEval, EnvError, StepChoice, Verb};
use crate::task::{GymKind, TaskSpec};
use crate::usersim::{canonicalize, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct SearchError(pub String);

/// Query string in, ranked hits out.
pub trait SearchBackend: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, SearchError>;
}

/// Offline backend answering from a fixture map of canonical query → hits.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CannedSearch {
    results: BTreeMap<String, Vec<SearchHit>>,
}

impl CannedSearch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, query: &str, hits: Vec<SearchHit>) -> Self {
        self.results.insert(canonicalize(query), hits);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let raw: BTreeMap<String, Vec<SearchHit>> = serde_json::from_str(text)?;
        Ok(Self { results: raw.into_iter().map(|(k, v)| (canonicalize(&k), v)).collect() })
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

impl SearchBackend for CannedSearch {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, SearchError> {
        Ok(self.results.get(&canonicalize(query)).cloned().unwrap_or_default())
    }
}

/// Live backend: `GET <url>?q=<query>` returning a JSON list of
/// `{title, snippet}` objects, bare or under `results`.
pub struct HttpSearch {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpSearch {
    pub const URL_VAR: &'static str = "USERL_SEARCH_URL";
    pub const KEY_VAR: &'static str = "USERL_SEARCH_KEY";

    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build();
        Self { url: url.into(), api_key, agent }
    }

    /// Configured from `USERL_SEARCH_URL` / `USERL_SEARCH_KEY`, if set.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(Self::URL_VAR).ok().filter(|u| !u.is_empty())?;
        Some(Self::new(url, std::env::var(Self::KEY_VAR).ok()))
    }
}

fn hits_from_json(v: &Value) -> Vec<SearchHit> {
    let list = v.get("results").unwrap_or(v).as_array().cloned().unwrap_or_default();
    list.iter()
        .filter_map(|h| {
            let title = h.get("title")?.as_str()?.to_string();
            let snippet = ["snippet", "content", "description"]
                .iter()
                .find_map(|k| h.get(*k).and_then(Value::as_str))
                .unwrap_or("")
                .to_string();
            Some(SearchHit { title, snippet })
        })
        .collect()
}

impl SearchBackend for HttpSearch {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, SearchError> {
        let mut req = self.agent.get(&self.url).query("q", query);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body: Value = req
            .call()
            .map_err(|e| SearchError(e.to_string()))?
            .into_json()
            .map_err(|e| SearchError(format!("bad response body: {e}")))?;
        Ok(hits_from_json(&body))
    }
}

/// Lowercase, trim, collapse whitespace, drop terminal punctuation and a leading article.
pub fn normalize_answer(s: &str) -> String {
    let mut t = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    t = t.trim_end_matches(['.', ',', '!', '?', ';', ':']).trim().to_string();
    for article in ["a ", "an ", "the "] {
        if let Some(rest) = t.strip_prefix(article) {
            t = rest.trim_start().to_string();
            break;
        }
    }
    t
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Gold {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct Task {
    question: String,
    gold_answer: Gold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub question: String,
    pub gold_answers: Vec<String>,
    pub search_count: u32,
    pub answered: bool,
}

pub fn init(task: &TaskSpec) -> Result<State, EnvError> {
    let t: Task = parse_payload(task)?;
    let gold_answers = match t.gold_answer {
        Gold::One(g) => vec![g],
        Gold::Many(gs) => gs,
    };
    if gold_answers.iter().all(|g| g.trim().is_empty()) {
        return Err(schema_error(task, "gold_answer is empty"));
    }
    Ok(State { question: t.question, gold_answers, search_count: 0, answered: false })
}

pub fn initial_observation(s: &State) -> String {
    format!(
        "Question: {}\n\nUse `search` with a query to look things up on the web, then give the final answer with `answer`.",
        s.question
    )
}

fn format_hits(hits: &[SearchHit]) -> String {
    if hits.is_empty() {
        return "No results found.".into();
    }
    hits.iter()
        .enumerate()
        .map(|(i, h)| format!("{}. {}\n   {}", i + 1, h.title, h.snippet))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn step(s: &mut State, choice: &StepChoice, ctx: &StepContext<'_>) -> Result<GymReply, EnvError> {
    match choice.verb {
        Verb::Search => {
            let cap = ctx.config.max_searches;
            if s.search_count >= cap {
                return Ok(GymReply::new(
                    format!("Search limit reached: at most {cap} searches are allowed. Submit your answer."),
                    0.0,
                )
                .with("error", "search_budget_exhausted"));
            }
            let backend = ctx.search.ok_or_else(|| EnvError::BackendUnavailable("no search backend".into()))?;
            let hits = backend.search(&choice.content).map_err(|e| EnvError::BackendUnavailable(e.0))?;
            s.search_count += 1;
            Ok(GymReply::new(format_hits(&hits), 0.0).with("hits", hits.len()))
        }
        Verb::Answer => {
            let (correct, feedback) = match ctx.config.search_eval {
                AnswerEval::RuleNormalizedMatch => {
                    let given = normalize_answer(&choice.content);
                    (s.gold_answers.iter().any(|g| normalize_answer(g) == given), String::new())
                }
                AnswerEval::LlmJudge => {
                    let b = bindings(&[("question", s.question.clone()), ("gold_answer", s.gold_answers.join(" / "))]);
                    let reply =
                        consult(ctx, GymKind::Search, Role::Judge, &b, &[], choice, None).map_err(port_failure)?;
                    (reply.label("judgment") == Some("Yes"), reply.text("feedback").unwrap_or("").trim().to_string())
                }
            };
            let obs = match (correct, feedback.is_empty()) {
                (_, false) => feedback,
                (true, true) => "Correct.".into(),
                (false, true) => "Incorrect.".into(),
            };
            if correct {
                s.answered = true;
                Ok(GymReply::new(obs, 1.0).goal())
            } else {
                Ok(GymReply::new(obs, 0.0))
            }
        }
        Verb::Action => unreachable!("verb table excludes action"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::gyms::testutil::{no_user, script, task};
    use serde_json::json;

    fn state() -> State {
        init(&task(
            GymKind::Search,
            json!({"question": "Capital of the 2016 Olympics host country?", "gold_answer": "Brasília"}),
        ))
        .unwrap()
    }

    fn sctx<'a>(
        cfg: &'a EnvConfig,
        user: &'a dyn crate::usersim::UserPort,
        search: &'a dyn SearchBackend,
    ) -> StepContext<'a> {
        StepContext { task_id: "t1", turn_index: 1, config: cfg, user, search: Some(search), external: None }
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer("  The   Eiffel Tower. "), "eiffel tower");
        assert_eq!(normalize_answer("An apple!"), "apple");
        assert_eq!(normalize_answer("Theodore"), "theodore");
        assert_eq!(normalize_answer("a"), "a");
    }

    #[test]
    fn budget_and_rule_match() {
        let mut s = state();
        let backend = CannedSearch::new().with(
            "2016 olympics host",
            vec![SearchHit { title: "2016 Summer Olympics".into(), snippet: "Held in Rio de Janeiro, Brazil.".into() }],
        );
        let user = no_user();
        let cfg = EnvConfig { search_eval: AnswerEval::RuleNormalizedMatch, ..EnvConfig::default() };
        let r = step(&mut s, &StepChoice::search("2016 Olympics host?"), &sctx(&cfg, &user, &backend)).unwrap();
        assert!(r.observation.contains("Rio de Janeiro"));
        for _ in 0..4 {
            step(&mut s, &StepChoice::search("anything"), &sctx(&cfg, &user, &backend)).unwrap();
        }
        assert_eq!(s.search_count, 5);
        let r = step(&mut s, &StepChoice::search("one more"), &sctx(&cfg, &user, &backend)).unwrap();
        assert_eq!(r.info["error"], "search_budget_exhausted");
        assert_eq!(s.search_count, 5);
        assert_eq!(step(&mut s, &StepChoice::answer("Rio"), &sctx(&cfg, &user, &backend)).unwrap().raw_reward, 0.0);
        let r = step(&mut s, &StepChoice::answer("brasília."), &sctx(&cfg, &user, &backend)).unwrap();
        assert_eq!((r.raw_reward, r.goal), (1.0, true));
    }

    #[test]
    fn judge_mode_and_backend_failure() {
        struct Down;
        impl SearchBackend for Down {
            fn search(&self, _q: &str) -> Result<Vec<SearchHit>, SearchError> {
                Err(SearchError("connection refused".into()))
            }
        }
        let mut s = state();
        let cfg = EnvConfig::default();
        let user = script(json!({"judge": {"rules": [{"contains": "brasilia", "reply": {"judgment": "Yes"}}],
                                           "default": {"judgment": "No", "feedback": "Your answer is wrong."}}}));
        let r = step(&mut s, &StepChoice::answer("Rio de Janeiro"), &sctx(&cfg, &user, &Down)).unwrap();
        assert_eq!((r.raw_reward, r.observation.as_str()), (0.0, "Your answer is wrong."));
        assert!(step(&mut s, &StepChoice::answer("Brasilia"), &sctx(&cfg, &user, &Down)).unwrap().goal);
        let err = step(&mut s, &StepChoice::search("q"), &sctx(&cfg, &user, &Down)).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn http_hits_shapes() {
        let v = json!({"results": [{"title": "A", "content": "x"}, {"snippet": "no title"}]});
        assert_eq!(hits_from_json(&v), vec![SearchHit { title: "A".into(), snippet: "x".into() }]);
        assert_eq!(hits_from_json(&json!([{"title": "B", "snippet": "y"}])).len(), 1);
    }
}
