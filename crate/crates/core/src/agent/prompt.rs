use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::gateway::ChatMessage;

const AGENT_SYSTEM: &str = "\
You are a careful Python programmer. You receive a programming task written in Bangla \
together with the function signature and the unit tests the solution must pass.

Work in steps. In every reply:
1. Think inside <thought>...</thought>: restate the task, note edge cases, and plan. You may think in Bangla.
2. Write Python inside <code>...</code>. Define the requested function and add the test assertions \
so the code checks itself.

Your code is executed in a sandbox and the result is sent back to you as an observation: which \
assertions passed, which failed, and any error or traceback. Use it to fix your code and reply again \
with a new <thought> and <code>.

When you are confident the code is correct, reply with the final solution inside <answer>...</answer>. \
The answer must contain only Python source, no prose.";

const SINGLE_SHOT_SYSTEM: &str = "\
You are a careful Python programmer. You receive a programming task written in Bangla \
together with the function signature and the unit tests the solution must pass.

Reply once. You may reason briefly inside <thought>...</thought>, then give the complete solution \
inside <code>...</code> (or <answer>...</answer>). The code must define the requested function and \
contain only Python source.";

const USER_TEMPLATE: &str = "\
Task:
{instruction}

Function signature: {entry_point}

The solution must pass these tests:
{tests}";

/// System and user message templates.
///
/// The user template may reference `{instruction}`, `{entry_point}` and
/// `{tests}` (one test per line). Substitution is a single pass, so
/// placeholder-like text inside the instruction is left alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    /// Prompt for the iterative agent.
    pub fn agent() -> Self {
        Self {
            system: AGENT_SYSTEM.to_string(),
            user: USER_TEMPLATE.to_string(),
        }
    }

    /// Prompt for single-turn strategies.
    pub fn single_shot() -> Self {
        Self {
            system: SINGLE_SHOT_SYSTEM.to_string(),
            user: USER_TEMPLATE.to_string(),
        }
    }

    pub fn render_user(&self, task: &Task) -> String {
        let tests = task.tests.join("\n");
        substitute(
            &self.user,
            &[
                ("instruction", task.instruction.as_str()),
                ("entry_point", task.entry_point.as_str()),
                ("tests", tests.as_str()),
            ],
        )
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::agent()
    }
}

fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(key, _)| *key == name)
                .map(|(_, value)| (*value, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// System message plus the rendered task.
pub fn render_task_prompt(task: &Task, template: &PromptTemplate) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(template.system.clone()),
        ChatMessage::user(template.render_user(task)),
    ]
}
