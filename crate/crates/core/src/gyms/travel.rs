//! TravelGym: elicit a traveler's preferences and book the best option per dimension.
//!
//! Payload:
//! ```json
//! {"scenario": "...",
//!  "dimensions": [{"name": "flight", "preference": "...",
//!                  "options": [{"id": "F1", "text": "...", "label": "best"}, ...]}]}
//! ```
//! Labels are `best`, `correct`, `wrong` or `noise`; exactly one `best` per
//! dimension and option ids unique across the task.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{bindings, consult, parse_payload, port_failure, schema_error, Exchange, GymReply, StepContext};
use crate::env::{EnvError, StepChoice, Verb};
use crate::task::{GymKind, TaskSpec};
use crate::usersim::Role;

pub const ELICIT_REWARD: f64 = 0.2;
pub const BEST_REWARD: f64 = 1.0;
pub const CORRECT_REWARD: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionLabel {
    Best,
    Correct,
    Wrong,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelOption {
    pub id: String,
    pub text: String,
    pub label: OptionLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub preference: String,
    pub options: Vec<TravelOption>,
    #[serde(default)]
    pub elicited: bool,
    #[serde(default)]
    pub chosen: bool,
}

#[derive(Deserialize)]
struct Task {
    scenario: String,
    dimensions: Vec<Dimension>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub scenario: String,
    pub dimensions: Vec<Dimension>,
    pub search_attempt_count: u32,
    pub search_errors: u32,
    /// Option ids already submitted; a repeat earns nothing.
    pub picked: BTreeSet<String>,
    pub dialogue: Vec<Exchange>,
}

pub fn init(task: &TaskSpec) -> Result<State, EnvError> {
    let t: Task = parse_payload(task)?;
    if t.dimensions.is_empty() {
        return Err(schema_error(task, "dimensions is empty"));
    }
    let mut ids = BTreeSet::new();
    for d in &t.dimensions {
        let best = d.options.iter().filter(|o| o.label == OptionLabel::Best).count();
        if best != 1 {
            return Err(schema_error(task, format!("dimension `{}` has {best} best options", d.name)));
        }
        for o in &d.options {
            if !ids.insert(o.id.to_lowercase()) {
                return Err(schema_error(task, format!("duplicate option id `{}`", o.id)));
            }
        }
    }
    let dimensions = t.dimensions.into_iter().map(|d| Dimension { elicited: false, chosen: false, ..d }).collect();
    Ok(State {
        scenario: t.scenario,
        dimensions,
        search_attempt_count: 0,
        search_errors: 0,
        picked: BTreeSet::new(),
        dialogue: Vec::new(),
    })
}

pub fn initial_observation(s: &State) -> String {
    let names: Vec<&str> = s.dimensions.iter().map(|d| d.name.as_str()).collect();
    format!(
        "{}\n\nYou need to book one option for each of: {}. Use `action` to talk with the traveler about \
their preferences, `search` with a dimension name to list its options, and `answer` with an option id to book it.",
        s.scenario,
        names.join(", ")
    )
}

fn find_dimension<'a>(dims: &'a mut [Dimension], query: &str) -> Option<&'a mut Dimension> {
    let q = query.trim().to_lowercase();
    if let Some(i) = dims.iter().position(|d| d.name.to_lowercase() == q) {
        return Some(&mut dims[i]);
    }
    dims.iter_mut().find(|d| q.contains(&d.name.to_lowercase()))
}

fn find_option(s: &State, content: &str) -> Option<(usize, TravelOption)> {
    let tokens: Vec<String> = content
        .split(|c: char| !c.is_alphanumeric() && c != '_' && c != '-')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    s.dimensions
        .iter()
        .enumerate()
        .find_map(|(di, d)| d.options.iter().find(|o| tokens.contains(&o.id.to_lowercase())).map(|o| (di, o.clone())))
}

pub fn step(s: &mut State, choice: &StepChoice, ctx: &StepContext<'_>) -> Result<GymReply, EnvError> {
    match choice.verb {
        Verb::Action => {
            let prefs =
                s.dimensions.iter().map(|d| format!("- {}: {}", d.name, d.preference)).collect::<Vec<_>>().join("\n");
            let b = bindings(&[("scenario", s.scenario.clone()), ("preferences", prefs)]);
            let reply =
                consult(ctx, GymKind::Travel, Role::Responder, &b, &s.dialogue, choice, None).map_err(port_failure)?;
            let kind = reply.integer("type").unwrap_or(1);
            let reward = if kind == 2 { ELICIT_REWARD } else { 0.0 };
            if kind == 2 {
                if let Some(d) = reply.text("dimension").and_then(|name| find_dimension(&mut s.dimensions, name)) {
                    d.elicited = true;
                }
            }
            let text = reply.text("response").unwrap_or("").to_string();
            s.dialogue.push(Exchange { agent: choice.content.clone(), user: text.clone() });
            Ok(GymReply::new(text, reward).with("type", kind))
        }
        Verb::Search => {
            s.search_attempt_count += 1;
            if s.search_attempt_count.is_multiple_of(ctx.config.travel_error_every) {
                s.search_errors += 1;
                return Ok(GymReply::new(
                    "System error: the search service is temporarily unavailable. Please try again.",
                    0.0,
                )
                .with("error", "simulated_system_error"));
            }
            let names: Vec<String> = s.dimensions.iter().map(|d| d.name.clone()).collect();
            match find_dimension(&mut s.dimensions, &choice.content) {
                Some(d) => {
                    let list = d.options.iter().map(|o| format!("{}: {}", o.id, o.text)).collect::<Vec<_>>().join("\n");
                    Ok(GymReply::new(format!("Options for {}:\n{list}", d.name), ELICIT_REWARD))
                }
                None => Ok(GymReply::new(
                    format!("Unknown dimension `{}`. Search one of: {}.", choice.content.trim(), names.join(", ")),
                    0.0,
                )
                .with("error", "unknown_dimension")),
            }
        }
        Verb::Answer => {
            let Some((di, option)) = find_option(s, &choice.content) else {
                return Ok(GymReply::new(
                    "No option with that id. Answer with an option id from a search result.",
                    0.0,
                )
                .with("error", "unknown_option"));
            };
            let dim = &mut s.dimensions[di];
            if dim.chosen || !s.picked.insert(option.id.to_lowercase()) {
                return Ok(GymReply::new(
                    format!("Option {} was already considered for {}.", option.id, dim.name),
                    0.0,
                ));
            }
            let (reward, obs) = match option.label {
                OptionLabel::Best => {
                    dim.chosen = true;
                    (BEST_REWARD, format!("Booked {} for {}. The traveler is delighted.", option.id, dim.name))
                }
                OptionLabel::Correct => (
                    CORRECT_REWARD,
                    format!(
                        "Booked {} for {}. The traveler finds it acceptable, but there may be a better fit.",
                        option.id, dim.name
                    ),
                ),
                OptionLabel::Wrong | OptionLabel::Noise => (
                    -ctx.config.wrong_choice_penalty,
                    format!("The traveler does not want {} for {}.", option.id, dim.name),
                ),
            };
            let out = GymReply::new(obs, reward).with("dimension", dim.name.clone());
            Ok(if s.dimensions.iter().all(|d| d.chosen) { out.goal() } else { out })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::gyms::testutil::{ctx, no_user, script, task};
    use serde_json::json;

    fn state() -> State {
        init(&task(
            GymKind::Travel,
            json!({"scenario": "Trip to Rome", "dimensions": [
                {"name": "flight", "preference": "morning, direct", "options": [
                    {"id": "F1", "text": "6am direct", "label": "best"},
                    {"id": "F2", "text": "9am one stop", "label": "correct"},
                    {"id": "F3", "text": "red-eye", "label": "wrong"}]},
                {"name": "hotel", "preference": "near the center", "options": [
                    {"id": "H1", "text": "central", "label": "best"},
                    {"id": "H2", "text": "airport", "label": "noise"}]}]}),
        ))
        .unwrap()
    }

    #[test]
    fn actions_by_type() {
        let mut s = state();
        let user = script(json!({"responder": {
            "rules": [{"contains": "flight time", "reply": {"type": 2, "dimension": "flight", "response": "Early is good."}}],
            "default": {"type": 4, "response": "Could you be more specific?"}}}));
        let cfg = EnvConfig::default();
        let r = step(&mut s, &StepChoice::action("What flight time do you like?"), &ctx(&cfg, &user, 1)).unwrap();
        assert_eq!(r.raw_reward, ELICIT_REWARD);
        assert!(s.dimensions[0].elicited);
        let r = step(&mut s, &StepChoice::action("Any preferences?"), &ctx(&cfg, &user, 2)).unwrap();
        assert_eq!(r.raw_reward, 0.0);
    }

    #[test]
    fn search_error_schedule() {
        let mut s = state();
        let user = no_user();
        let cfg = EnvConfig::default();
        let mut errors = vec![];
        for i in 1..=11 {
            let q = if i == 3 { "spaceship" } else { "flight" };
            let r = step(&mut s, &StepChoice::search(q), &ctx(&cfg, &user, i)).unwrap();
            if r.info.get("error").is_some_and(|e| e == "simulated_system_error") {
                errors.push(i);
                assert_eq!(r.raw_reward, 0.0);
            } else if i == 3 {
                assert_eq!(r.info["error"], "unknown_dimension");
            } else {
                assert_eq!(r.raw_reward, ELICIT_REWARD);
                assert!(r.observation.contains("F2: 9am one stop"));
            }
        }
        assert_eq!(errors, vec![5, 10]);
        assert_eq!(s.search_errors, s.search_attempt_count / 5);
    }

    #[test]
    fn answers() {
        let mut s = state();
        let user = no_user();
        let cfg = EnvConfig { wrong_choice_penalty: 0.1, ..EnvConfig::default() };
        let mut go = |c: &str| step(&mut s, &StepChoice::answer(c), &ctx(&cfg, &user, 1)).unwrap();
        assert_eq!(go("F2").raw_reward, CORRECT_REWARD);
        assert_eq!(go("f2").raw_reward, 0.0);
        assert_eq!(go("F3").raw_reward, -0.1);
        assert_eq!(go("Z9").info["error"], "unknown_option");
        let r = go("I choose F1.");
        assert_eq!((r.raw_reward, r.goal), (BEST_REWARD, false));
        assert_eq!(go("H2").raw_reward, -0.1);
        assert!(go("H1").goal);
    }

    #[test]
    fn best_option_required() {
        let p = json!({"scenario": "x", "dimensions": [{"name": "car", "preference": "p", "options": [
            {"id": "C1", "text": "a", "label": "correct"}]}]});
        assert!(init(&task(GymKind::Travel, p)).is_err());
    }
}
