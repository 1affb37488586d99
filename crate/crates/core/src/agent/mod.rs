//! The Thought-Code-Observation agent.
//!
//! Each iteration sends the whole conversation so far to the backend, parses
//! the reply into a thought, code and/or a final answer, runs any code against
//! the task's assertions in the sandbox, and feeds the rendered result back as
//! the next user message. An episode ends when the code passes every
//! assertion, when the model commits to an `<answer>`, or when a budget runs
//! out. Invalid or empty replies are re-asked through [`safe_run`] and charged
//! to a per-episode retry pool, separate from the iteration budget.

mod observation;
mod parse;
mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::corpus::Task;
use crate::gateway::{ChatBackend, ChatMessage, GatewayError, SamplingParams};
use crate::sandbox::{ExecutionVerdict, Sandbox};

pub use observation::{render_verdict, truncate_middle, Observation, OBSERVATION_CHAR_CAP};
pub use parse::{parse_turn, AgentTurn, InvalidTurn};
pub use prompt::{render_task_prompt, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopBudget {
    pub max_iterations: u32,
    pub max_retries: u32,
}

impl Default for LoopBudget {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            max_retries: 25,
        }
    }
}

impl LoopBudget {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 || self.max_retries == 0 {
            return Err("max_iterations and max_retries must both be at least 1".into());
        }
        Ok(())
    }
}

/// Why one attempt inside [`safe_run`] did not yield a usable turn.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttemptError {
    #[error(transparent)]
    Invalid(#[from] InvalidTurn),
    #[error(transparent)]
    Backend(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("retry budget exhausted after {retries_used} failed attempts; last: {last}")]
pub struct RetryBudgetExhausted {
    pub retries_used: u32,
    pub last: AttemptError,
}

/// Calls `attempt` until it yields a valid turn, at most `max_retries` times.
///
/// Returns the turn and the number of failed attempts before it.
pub fn safe_run<F>(mut attempt: F, max_retries: u32) -> Result<(AgentTurn, u32), RetryBudgetExhausted>
where
    F: FnMut() -> Result<AgentTurn, AttemptError>,
{
    assert!(max_retries >= 1, "safe_run needs at least one attempt");
    let mut failures = 0;
    loop {
        match attempt() {
            Ok(turn) => return Ok((turn, failures)),
            Err(last) => {
                failures += 1;
                debug!(failures, "invalid turn: {last}");
                if failures >= max_retries {
                    return Err(RetryBudgetExhausted {
                        retries_used: failures,
                        last,
                    });
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Solved,
    AnswerUnverified,
    IterationBudgetExhausted,
    RetryBudgetExhausted,
    BackendFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    #[serde(flatten)]
    pub turn: AgentTurn,
    pub observation: Observation,
}

/// Record of one agent episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: String,
    pub status: EpisodeStatus,
    pub iterations_used: u32,
    pub retries_used: u32,
    pub turns: Vec<Step>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Transcript {
    /// The last source that was executed, with its verdict.
    pub fn final_candidate(&self) -> Option<(&str, &ExecutionVerdict)> {
        self.turns.iter().rev().find_map(|step| {
            let verdict = step.observation.verdict.as_ref()?;
            Some((step.turn.executable()?, verdict))
        })
    }

    pub fn solved(&self) -> bool {
        self.status == EpisodeStatus::Solved
    }
}

fn conversation(base: &[ChatMessage], steps: &[Step]) -> Vec<ChatMessage> {
    let mut messages = base.to_vec();
    for step in steps {
        messages.push(ChatMessage::assistant(step.turn.raw.clone()));
        messages.push(ChatMessage::user(step.observation.rendered.clone()));
    }
    messages
}

/// Runs one Thought-Code-Observation episode for `task`.
///
/// Never fails: backend trouble and malformed model output end up in the
/// transcript's status.
pub fn run_episode(
    task: &Task,
    backend: &dyn ChatBackend,
    sandbox: &Sandbox,
    budget: LoopBudget,
    params: &SamplingParams,
    template: &PromptTemplate,
) -> Transcript {
    let base = render_task_prompt(task, template);
    let mut transcript = Transcript {
        task_id: task.id.clone(),
        status: EpisodeStatus::IterationBudgetExhausted,
        iterations_used: 0,
        retries_used: 0,
        turns: Vec::new(),
        error: None,
    };

    while transcript.iterations_used < budget.max_iterations {
        let messages = conversation(&base, &transcript.turns);
        let remaining = budget.max_retries - transcript.retries_used;
        let attempt = || {
            let reply = backend.complete(&messages, params)?;
            Ok(parse_turn(&reply.text)?)
        };
        let turn = match safe_run(attempt, remaining) {
            Ok((turn, failures)) => {
                transcript.retries_used += failures;
                turn
            }
            Err(exhausted) => {
                transcript.retries_used += exhausted.retries_used;
                transcript.status = match exhausted.last {
                    AttemptError::Backend(_) => EpisodeStatus::BackendFailed,
                    AttemptError::Invalid(_) => EpisodeStatus::RetryBudgetExhausted,
                };
                transcript.error = Some(exhausted.last.to_string());
                return transcript;
            }
        };
        transcript.iterations_used += 1;

        if let Some(answer) = turn.answer.clone() {
            let observation = Observation::from_verdict(sandbox.run(&answer, &task.tests));
            transcript.status = if observation.passed() {
                EpisodeStatus::Solved
            } else {
                EpisodeStatus::AnswerUnverified
            };
            transcript.turns.push(Step { turn, observation });
            return transcript;
        }

        let observation = match turn.code.as_deref() {
            Some(code) => Observation::from_verdict(sandbox.run(code, &task.tests)),
            None => Observation::no_code(),
        };
        let solved = observation.passed();
        transcript.turns.push(Step { turn, observation });
        if solved {
            transcript.status = EpisodeStatus::Solved;
            return transcript;
        }
    }
    transcript
}
