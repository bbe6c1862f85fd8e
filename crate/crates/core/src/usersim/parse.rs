//! Fenced-JSON reply extraction and schema validation.
//!
//! The first ```` ``` ```` block wins; without one, the first brace-balanced
//! region is used. Extra fields are ignored. Enumerated values are matched
//! case-insensitively against their labels but never fuzzily.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::UserSimError;

#[derive(Clone, Debug, PartialEq)]
pub enum FieldKind {
    Text,
    Bool,
    /// One of a fixed set of labels; the canonical spelling is stored.
    Label(Vec<String>),
    /// An integer in `[min, max]`; numeric strings are accepted.
    Integer {
        min: i64,
        max: i64,
    },
    /// A list of non-negative indices.
    IndexList,
    /// Per-criterion scores, each in `allowed`. Entries may be bare numbers or
    /// objects carrying a `score` field.
    ScoreList {
        allowed: Vec<f64>,
        expected_len: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub required: bool,
}

/// The field set an instruction asks the simulator to return.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplySchema {
    pub fields: Vec<FieldSpec>,
}

impl ReplySchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn required(mut self, name: &str, kind: FieldKind) -> Self {
        self.fields.push(FieldSpec { name: name.into(), kind, required: true });
        self
    }

    pub fn optional(mut self, name: &str, kind: FieldKind) -> Self {
        self.fields.push(FieldSpec { name: name.into(), kind, required: false });
        self
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }
}

pub fn labels(ls: &[&str]) -> FieldKind {
    FieldKind::Label(ls.iter().map(|s| s.to_string()).collect())
}

/// Validated reply fields, keyed by schema field name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedReply(pub BTreeMap<String, Value>);

impl ParsedReply {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.0.get(name).and_then(Value::as_str)
    }

    pub fn label(&self, name: &str) -> Option<&str> {
        self.text(name)
    }

    pub fn boolean(&self, name: &str) -> Option<bool> {
        self.0.get(name).and_then(Value::as_bool)
    }

    pub fn integer(&self, name: &str) -> Option<i64> {
        self.0.get(name).and_then(Value::as_i64)
    }

    pub fn indices(&self, name: &str) -> Vec<usize> {
        self.0
            .get(name)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_u64).map(|u| u as usize).collect())
            .unwrap_or_default()
    }

    pub fn scores(&self, name: &str) -> Vec<f64> {
        self.0
            .get(name)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .unwrap_or_default()
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.0.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
    }
}

/// Render parsed fields back into the fenced form simulators reply with.
pub fn render_fenced(reply: &ParsedReply) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(&reply.to_json()).unwrap_or_default())
}

pub fn parse_structured_reply(raw: &str, schema: &ReplySchema) -> Result<ParsedReply, UserSimError> {
    let object = extract_object(raw).ok_or(UserSimError::NoStructuredContent)?;
    let mut out = BTreeMap::new();
    for spec in &schema.fields {
        match object.get(&spec.name) {
            None | Some(Value::Null) => {
                if spec.required {
                    return Err(violation(&spec.name, "missing"));
                }
            }
            Some(v) => {
                out.insert(spec.name.clone(), coerce(&spec.name, &spec.kind, v)?);
            }
        }
    }
    Ok(ParsedReply(out))
}

fn violation(field: &str, detail: impl Into<String>) -> UserSimError {
    UserSimError::SchemaViolation { field: field.to_string(), detail: detail.into() }
}

fn coerce(name: &str, kind: &FieldKind, v: &Value) -> Result<Value, UserSimError> {
    match kind {
        FieldKind::Text => match v {
            Value::String(s) => Ok(Value::String(s.clone())),
            Value::Number(_) | Value::Bool(_) => Ok(Value::String(v.to_string())),
            _ => Err(violation(name, "expected text")),
        },
        FieldKind::Bool => match v {
            Value::Bool(b) => Ok(Value::Bool(*b)),
            Value::String(s) if s.trim().eq_ignore_ascii_case("true") => Ok(Value::Bool(true)),
            Value::String(s) if s.trim().eq_ignore_ascii_case("false") => Ok(Value::Bool(false)),
            _ => Err(violation(name, "expected true/false")),
        },
        FieldKind::Label(allowed) => {
            let s = v.as_str().ok_or_else(|| violation(name, "expected a label"))?.trim();
            allowed
                .iter()
                .find(|l| l.to_lowercase() == s.to_lowercase())
                .map(|l| Value::String(l.clone()))
                .ok_or_else(|| violation(name, format!("`{s}` is not one of {}", allowed.join(", "))))
        }
        FieldKind::Integer { min, max } => {
            let n = match v {
                Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
                Value::String(s) => s.trim().parse::<i64>().ok(),
                _ => None,
            }
            .ok_or_else(|| violation(name, "expected an integer"))?;
            if n < *min || n > *max {
                return Err(violation(name, format!("{n} outside [{min}, {max}]")));
            }
            Ok(Value::from(n))
        }
        FieldKind::IndexList => {
            let arr = v.as_array().ok_or_else(|| violation(name, "expected a list"))?;
            let mut idx = Vec::with_capacity(arr.len());
            for item in arr {
                let n = match item {
                    Value::Number(n) => n.as_u64(),
                    Value::String(s) => s.trim().parse::<u64>().ok(),
                    _ => None,
                }
                .ok_or_else(|| violation(name, format!("`{item}` is not a non-negative index")))?;
                idx.push(Value::from(n));
            }
            Ok(Value::Array(idx))
        }
        FieldKind::ScoreList { allowed, expected_len } => {
            let arr = v.as_array().ok_or_else(|| violation(name, "expected a list"))?;
            if let Some(n) = expected_len {
                if arr.len() != *n {
                    return Err(violation(name, format!("expected {n} scores, got {}", arr.len())));
                }
            }
            let mut scores = Vec::with_capacity(arr.len());
            for item in arr {
                let raw = match item {
                    Value::Object(o) => o.get("score").cloned().unwrap_or(Value::Null),
                    other => other.clone(),
                };
                let s = match &raw {
                    Value::Number(n) => n.as_f64(),
                    Value::String(s) => s.trim().parse::<f64>().ok(),
                    _ => None,
                }
                .ok_or_else(|| violation(name, format!("`{raw}` is not a score")))?;
                let snapped = allowed
                    .iter()
                    .copied()
                    .find(|a| (a - s).abs() < 1e-9)
                    .ok_or_else(|| violation(name, format!("score {s} not allowed")))?;
                scores.push(Value::from(snapped));
            }
            Ok(Value::Array(scores))
        }
    }
}

fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    if let Some(block) = first_fenced_block(raw) {
        if let Some(obj) = parse_object(block).or_else(|| balanced_region(block).and_then(parse_object)) {
            return Some(obj);
        }
    }
    balanced_region(raw).and_then(parse_object)
}

fn parse_object(text: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

fn first_fenced_block(raw: &str) -> Option<&str> {
    let open = raw.find("```")?;
    let after = &raw[open + 3..];
    // skip the info string (e.g. `json`) up to the end of the line
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// First `{ ... }` region whose braces balance, ignoring braces inside strings.
fn balanced_region(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = raw[search_from..].find('{') {
        let start = search_from + rel;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &raw[start..=i];
                        if parse_object(candidate).is_some() {
                            return Some(candidate);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        search_from = start + 1;
    }
    None
}
