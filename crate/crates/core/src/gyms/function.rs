//! FunctionGym: discover a hidden arithmetic rule f(a, b, c, d).
//!
//! Payload: `{"rule": "a*b+c-d", "test_case": [5, 6, 7, 8]}`.

use serde::{Deserialize, Serialize};

use super::expr::{format_number, Expr};
use super::{parse_payload, schema_error, GymReply};
use crate::env::{StepChoice, Verb};
use crate::task::TaskSpec;

pub const TOLERANCE: f64 = 1e-6;

#[derive(Deserialize)]
struct Task {
    rule: String,
    test_case: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub hidden_rule: String,
    pub test_case: [f64; 4],
    pub expected: f64,
    pub answered: bool,
}

pub fn init(task: &TaskSpec) -> Result<State, crate::env::EnvError> {
    let t: Task = parse_payload(task)?;
    let expr = Expr::parse(&t.rule).map_err(|e| schema_error(task, format!("rule: {e}")))?;
    let expected = expr.eval(&t.test_case).ok_or_else(|| schema_error(task, "rule is undefined on the test case"))?;
    Ok(State { hidden_rule: t.rule, test_case: t.test_case, expected, answered: false })
}

pub fn initial_observation(_s: &State) -> String {
    "There is a hidden function f(a, b, c, d) of four numbers built from +, -, *, / and constants. \
Use `action` with four comma-separated numbers (for example `1, 2, 3, 4`) to see f on those inputs. \
Use `search` to reveal the test case. Use `answer` with the value of f on the test case."
        .to_string()
}

fn tuple(v: &[f64; 4]) -> String {
    format!("({})", v.iter().map(|x| format_number(*x)).collect::<Vec<_>>().join(", "))
}

/// Four numbers separated by commas and/or whitespace, optionally parenthesized.
pub fn parse_quad(content: &str) -> Option<[f64; 4]> {
    let inner = content.trim().trim_start_matches(['(', '[']).trim_end_matches([')', ']']);
    let nums: Vec<f64> = inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>())
        .collect::<Result<_, _>>()
        .ok()?;
    let quad: [f64; 4] = nums.try_into().ok()?;
    quad.iter().all(|x| x.is_finite()).then_some(quad)
}

/// The answer as one number; tolerates surrounding words by taking the last number.
pub fn parse_answer(content: &str) -> Option<f64> {
    let t = content.trim().trim_end_matches('.');
    if let Ok(v) = t.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    t.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .filter(|p| !p.is_empty() && *p != "-" && *p != ".")
        .filter_map(|p| p.trim_end_matches('.').parse::<f64>().ok())
        .next_back()
        .filter(|v| v.is_finite())
}

pub fn step(s: &mut State, choice: &StepChoice) -> GymReply {
    match choice.verb {
        Verb::Action => {
            let Some(quad) = parse_quad(&choice.content) else {
                return GymReply::new(
                    "Could not read four numbers. Send exactly four numbers separated by commas, e.g. `1, 2, 3, 4`.",
                    0.0,
                )
                .with("error", "parse_error");
            };
            // rule validity was checked at reset
            let expr = Expr::parse(&s.hidden_rule).expect("validated rule");
            match expr.eval(&quad) {
                Some(v) => GymReply::new(format_number(v), 0.0),
                None => GymReply::new(format!("f{} is undefined (division by zero).", tuple(&quad)), 0.0),
            }
        }
        Verb::Search => GymReply::new(tuple(&s.test_case), 0.0),
        Verb::Answer => {
            let Some(v) = parse_answer(&choice.content) else {
                return GymReply::new("Could not read a number. Answer with a single number such as `26`.", 0.0)
                    .with("error", "parse_error");
            };
            if (v - s.expected).abs() <= TOLERANCE {
                s.answered = true;
                GymReply::new("Correct.", 1.0).goal()
            } else {
                GymReply::new("Incorrect.", 0.0)
            }
        }
    }
}
