//! The agent-side prompt: system prompt per gym and the `interact_with_env` tool schema.

use serde_json::{json, Value};

use crate::task::GymKind;

pub const TOOL_NAME: &str = "interact_with_env";

/// The tool definition sent with every policy request.
pub fn tool_schema() -> Value {
    json!({
        "type": "function",
        "function": {
            "name": TOOL_NAME,
            "description": "A tool for interact with a target environment. The detailed environment description and action space is provided in the system prompt, so please follow the system prompt when calling this tool. You can use this tool to interact with the target environment step by step.",
            "parameters": {
                "type": "object",
                "properties": {
                    "choice": {
                        "type": "string",
                        "enum": ["action", "answer", "search"],
                        "description": "Your choice of what to do next, must be one of action, answer or search. Please follow system prompt about the scope of choices you can make and how to decide your choice."
                    },
                    "content": {
                        "type": "string",
                        "description": "The content of your choice, must be a string. If you choose action, you should provide the action you want to take. If you choose answer, you should provide the answer that you want to submit. If you choose search, you should provide the search query. The specific format of the content is determined by the environment description in the system prompt. Please follow the format strictly in order to successfully use this tool."
                    }
                },
                "required": ["choice", "content"]
            }
        }
    })
}

struct GymBrief {
    description: &'static str,
    verbs: &'static [(&'static str, &'static str)],
    goal: &'static str,
    hint: &'static str,
}

fn brief(gym: GymKind) -> GymBrief {
    match gym {
        GymKind::Function => GymBrief {
            description: "FunctionGym hides a function f(a, b, c, d) built from the four inputs, basic arithmetic and constants. You must work out the function and compute its value on a test case.",
            verbs: &[
                ("action", "give four numbers separated by commas, e.g. `1, 2, 3, 4`; the environment returns f on those inputs."),
                ("search", "request the test case; the environment returns the four test inputs."),
                ("answer", "submit a single number: your value of f on the test case."),
            ],
            goal: "infer the hidden function and answer the test case correctly",
            hint: "probe the function with well-chosen inputs, check your hypothesis, fetch the test case, then answer",
        },
        GymKind::Telepathy => GymBrief {
            description: "TelepathyGym is a guessing game. The user is thinking of an entity and answers your yes/no questions with Yes, No or Maybe.",
            verbs: &[
                ("action", "ask one yes/no question about the entity."),
                ("answer", "submit the name of the entity as your final guess."),
            ],
            goal: "identify the entity with as few questions as possible",
            hint: "ask questions that split the remaining possibilities roughly in half before guessing",
        },
        GymKind::Turtle => GymBrief {
            description: "TurtleGym is a lateral-thinking puzzle. You see a puzzling story; the user knows what really happened and answers your yes/no questions with Yes, No or Maybe.",
            verbs: &[
                ("action", "ask one yes/no question about the hidden story."),
                ("answer", "submit your full explanation of what really happened; it is scored against the hidden story."),
            ],
            goal: "reconstruct the hidden story",
            hint: "test one hypothesis per question and submit an explanation once the key facts are confirmed",
        },
        GymKind::Intention => GymBrief {
            description: "IntentionGym presents a vague request from a user. Important details about what they want are missing.",
            verbs: &[("action", "ask the user a clarifying question.")],
            goal: "uncover the missing details that matter most to the user",
            hint: "ask focused questions, one or two details at a time, starting with the most important aspects of the request",
        },
        GymKind::Persuade => GymBrief {
            description: "PersuadeGym puts you in a conversation with someone who agrees with a statement.",
            verbs: &[("action", "present an argument or respond to their points.")],
            goal: "persuade them to disagree with the statement",
            hint: "address their stated reasons directly with evidence and respectful counterarguments",
        },
        GymKind::Travel => GymBrief {
            description: "TravelGym asks you to book a trip for a traveler with private preferences across several dimensions such as flights or hotels.",
            verbs: &[
                ("action", "talk with the traveler, e.g. ask about a specific preference."),
                ("search", "give a dimension name to list its available options with ids."),
                ("answer", "give an option id to book it."),
            ],
            goal: "book the option the traveler likes best for every dimension",
            hint: "ask specific questions about each dimension, search its options, then book the best match",
        },
        GymKind::Search => GymBrief {
            description: "SearchGym asks a question that needs facts from the web, often combining several pieces of information.",
            verbs: &[
                ("search", "give a web search query; the environment returns result titles and snippets."),
                ("answer", "submit your final answer as a short phrase."),
            ],
            goal: "answer the question correctly within the search limit",
            hint: "break the question into parts, search for each, then answer concisely",
        },
        GymKind::TauStub => GymBrief {
            description: "TauGym is a customer-service environment where you help a user with their request using both conversation and internal tools.",
            verbs: &[
                ("search", "give `tools` to list internal tools or `help` for guidance."),
                ("action", "send a message to the user."),
                ("answer", "call an internal tool with JSON `{\"name\": ..., \"arguments\": {...}}`."),
            ],
            goal: "fulfil the user's request correctly",
            hint: "gather the needed information from the user, then call the right tools step by step",
        },
    }
}

/// System prompt shared by every task of `gym`.
pub fn system_prompt(gym: GymKind) -> String {
    let b = brief(gym);
    let verb_names: Vec<String> = b.verbs.iter().map(|(v, _)| format!("`{v}`")).collect();
    let verb_lines: Vec<String> =
        b.verbs.iter().map(|(v, d)| format!("    * `{v}`: If you choose `{v}`, {d}")).collect();
    format!(
        "## Task\nYou are an agent that actively interact with a specific environment. The following are the details of the environment and your action space.\n\n\
## Environment Description\n{}\n\n\
## Action Space\nYou should call the tool `{TOOL_NAME}` to interact with the environment. The action should be one of the following: {}.\n\n\
## Action Description\n{}\n\n\
## Important Notes\n\
    * In each step of interaction, first write your thoughts and analysis between <think> and </think> to carefully decide your next step. Only after providing this reasoning should you call the `{TOOL_NAME}` tool to interact with the environment. Always present your reasoning before making the tool call.\n\
    * The total number of rounds that you can interact with the environment is limited. You should smartly {}, so that you can fulfill the user's request in the most efficient way.\n\
    * Usually you should {}.\n\
    * Be bold, creative and smart in your interaction with the environment! Let's begin!",
        b.description,
        verb_names.join(", "),
        verb_lines.join("\n"),
        b.goal,
        b.hint
    )
}

pub const FORMAT_REMINDER: &str = "Your last message did not contain exactly one valid `interact_with_env` tool call. \
Write your reasoning between <think> and </think>, then make exactly one tool call with `choice` and a non-empty `content`.";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::allowed_verbs;

    #[test]
    fn schema_shape() {
        let s = tool_schema();
        assert_eq!(s["function"]["name"], TOOL_NAME);
        assert_eq!(s["function"]["parameters"]["properties"]["choice"]["enum"], json!(["action", "answer", "search"]));
        assert_eq!(s["function"]["parameters"]["required"], json!(["choice", "content"]));
    }

    #[test]
    fn prompts_list_exactly_the_allowed_verbs() {
        for gym in GymKind::ALL {
            let p = system_prompt(gym);
            assert!(!p.contains("{{"));
            for v in ["action", "search", "answer"] {
                let listed = p.contains(&format!("* `{v}`:"));
                let allowed = allowed_verbs(gym).iter().any(|a| a.as_str() == v);
                assert_eq!(listed, allowed, "{gym} {v}");
            }
        }
    }
}
