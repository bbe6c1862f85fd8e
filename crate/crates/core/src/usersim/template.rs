use std::collections::BTreeMap;

use super::{ReplySchema, Role, UserSimError};
use crate::task::GymKind;

pub type TemplateBindings = BTreeMap<String, String>;

/// A system instruction with `{{name}}` placeholders and the reply fields it asks for.
#[derive(Clone, Debug)]
pub struct PromptTemplate {
    pub gym: GymKind,
    pub role: Role,
    pub system_text: String,
    pub reply_schema: ReplySchema,
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (name, _) in scan(&self.system_text) {
            if !names.contains(&name) {
                names.push(name);
            }
        }
        names
    }

    /// Substitute every placeholder. Extra bindings are ignored.
    pub fn render(&self, bindings: &TemplateBindings) -> Result<String, UserSimError> {
        render_text(&self.system_text, bindings)
    }
}

pub(crate) fn render_text(text: &str, bindings: &TemplateBindings) -> Result<String, UserSimError> {
    let mut out = String::with_capacity(text.len());
    let mut missing = Vec::new();
    let mut last = 0;
    for (name, range) in scan(text) {
        out.push_str(&text[last..range.start]);
        match bindings.get(&name) {
            Some(v) => out.push_str(v),
            None => {
                if !missing.contains(&name) {
                    missing.push(name);
                }
            }
        }
        last = range.end;
    }
    out.push_str(&text[last..]);
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(UserSimError::MissingPlaceholder(missing))
    }
}

/// `{{identifier}}` occurrences with their byte ranges.
fn scan(text: &str) -> Vec<(String, std::ops::Range<usize>)> {
    let mut found = Vec::new();
    let mut from = 0;
    while let Some(open) = text[from..].find("{{") {
        let start = from + open;
        let Some(close) = text[start + 2..].find("}}") else { break };
        let name = &text[start + 2..start + 2 + close];
        let end = start + 2 + close + 2;
        if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            found.push((name.to_string(), start..end));
            from = end;
        } else {
            from = start + 2;
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bindings(pairs: &[(&str, &str)]) -> TemplateBindings {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn substitutes_and_reports_missing() {
        let text = "Target: {{target_entity}}. Again {{target_entity}}; note {{ not a placeholder }}";
        assert_eq!(
            render_text(text, &bindings(&[("target_entity", "Eiffel Tower")])).unwrap(),
            "Target: Eiffel Tower. Again Eiffel Tower; note {{ not a placeholder }}"
        );
        let err = render_text(text, &bindings(&[])).unwrap_err();
        assert!(matches!(err, UserSimError::MissingPlaceholder(ref v) if v == &["target_entity".to_string()]));
    }

    #[test]
    fn extra_bindings_are_ignored() {
        let text = "Hi {{a}}";
        let exact = render_text(text, &bindings(&[("a", "x")])).unwrap();
        let extra = render_text(text, &bindings(&[("a", "x"), ("b", "y")])).unwrap();
        assert_eq!(exact, extra);
    }

    #[test]
    fn json_braces_are_left_alone() {
        let text = "{\n  \"response\": \"Yes\"\n} and {{x}}";
        assert_eq!(render_text(text, &bindings(&[("x", "1")])).unwrap(), "{\n  \"response\": \"Yes\"\n} and 1");
    }
}
