//! Task specifications and JSONL task files.
//!
//! One task per line: `{"task_id": ..., "gym": ..., "payload": {...}, "metadata": {...}}`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GymKind {
    Function,
    Telepathy,
    Turtle,
    Intention,
    Persuade,
    Travel,
    Search,
    TauStub,
}

impl GymKind {
    pub const ALL: [GymKind; 8] = [
        GymKind::Function,
        GymKind::Telepathy,
        GymKind::Turtle,
        GymKind::Intention,
        GymKind::Persuade,
        GymKind::Travel,
        GymKind::Search,
        GymKind::TauStub,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GymKind::Function => "function",
            GymKind::Telepathy => "telepathy",
            GymKind::Turtle => "turtle",
            GymKind::Intention => "intention",
            GymKind::Persuade => "persuade",
            GymKind::Travel => "travel",
            GymKind::Search => "search",
            GymKind::TauStub => "tau_stub",
        }
    }

    /// Display name used in agent-facing prompts and reports.
    pub fn display_name(self) -> &'static str {
        match self {
            GymKind::Function => "FunctionGym",
            GymKind::Telepathy => "TelepathyGym",
            GymKind::Turtle => "TurtleGym",
            GymKind::Intention => "IntentionGym",
            GymKind::Persuade => "PersuadeGym",
            GymKind::Travel => "TravelGym",
            GymKind::Search => "SearchGym",
            GymKind::TauStub => "TauGym",
        }
    }
}

impl fmt::Display for GymKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GymKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        GymKind::ALL
            .into_iter()
            .find(|g| {
                g.as_str() == key
                    || g.display_name().eq_ignore_ascii_case(&key)
                    || (key == "tau" && *g == GymKind::TauStub)
            })
            .ok_or_else(|| format!("unknown gym `{s}`"))
    }
}

/// One gym task instance. The payload is validated by the gym when a session starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub gym: GymKind,
    pub payload: Value,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Error)]
pub enum TaskFileError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate task_id `{0}`")]
    DuplicateId(String),
}

/// An ordered collection of tasks with unique ids.
#[derive(Clone, Debug, Default)]
pub struct TaskSet {
    tasks: Vec<TaskSpec>,
}

impl TaskSet {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self, TaskFileError> {
        let mut seen = HashSet::new();
        for t in &tasks {
            if !seen.insert(t.task_id.clone()) {
                return Err(TaskFileError::DuplicateId(t.task_id.clone()));
            }
        }
        Ok(Self { tasks })
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TaskFileError> {
        let mut tasks = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let task = serde_json::from_str(line).map_err(|source| TaskFileError::Parse { line: i + 1, source })?;
            tasks.push(task);
        }
        Self::new(tasks)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaskFileError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| TaskFileError::Io { path: path.display().to_string(), source })?;
        Self::parse_jsonl(&text)
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn filter_gym(&self, gym: GymKind) -> TaskSet {
        TaskSet { tasks: self.tasks.iter().filter(|t| t.gym == gym).cloned().collect() }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_and_rejects_duplicates() {
        let text = r#"{"task_id":"f1","gym":"function","payload":{"rule":"a+b+c+d","test_case":[5,6,7,8],"expected":26}}
{"task_id":"p1","gym":"persuade","payload":{"statement":"s","argument":"a"},"metadata":{"source":"fixture"}}
"#;
        let set = TaskSet::parse_jsonl(text).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.get("p1").unwrap().gym, GymKind::Persuade);
        let dup = format!("{}\n{}", text.lines().next().unwrap(), text.lines().next().unwrap());
        assert!(matches!(TaskSet::parse_jsonl(&dup), Err(TaskFileError::DuplicateId(_))));
    }

    #[test]
    fn gym_names_round_trip() {
        for g in GymKind::ALL {
            assert_eq!(g.as_str().parse::<GymKind>().unwrap(), g);
            let json = serde_json::to_string(&g).unwrap();
            assert_eq!(json, format!("\"{}\"", g.as_str()));
        }
        assert_eq!("TurtleGym".parse::<GymKind>().unwrap(), GymKind::Turtle);
    }
}
