//! Prompting strategies compared by the benchmark.
//!
//! Every strategy maps a task to candidate solutions with verdicts and
//! reports `samples_n` (samples drawn) and `correct_c` (samples passing).
//!
//! The two voting strategies differ in what they vote on: self-consistency
//! groups candidates by outcome signature (which assertions passed), majority
//! voting groups them by normalized source text. Ties go to the group whose
//! first member was generated earliest, and that member is chosen.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    parse_turn, render_task_prompt, run_episode, EpisodeStatus, LoopBudget, PromptTemplate,
    Transcript,
};
use crate::corpus::{builtin_fixtures, Task};
use crate::gateway::{ChatBackend, ChatMessage, ModelReply, SamplingParams};
use crate::sandbox::{ExecutionVerdict, Sandbox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    ZeroShot,
    FewShot,
    SelfConsistency,
    MajorityVoting,
    CodeactAgent,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        Self::ZeroShot,
        Self::FewShot,
        Self::SelfConsistency,
        Self::MajorityVoting,
        Self::CodeactAgent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ZeroShot => "zero_shot",
            Self::FewShot => "few_shot",
            Self::SelfConsistency => "self_consistency",
            Self::MajorityVoting => "majority_voting",
            Self::CodeactAgent => "codeact_agent",
        }
    }

    /// Voting strategies are scored on the candidate they pick, not on every sample.
    pub fn is_voting(self) -> bool {
        matches!(self, Self::SelfConsistency | Self::MajorityVoting)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    SingleShot,
    Sampled,
    AgentFinal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub code: String,
    pub verdict: ExecutionVerdict,
    pub origin: Origin,
}

impl Candidate {
    fn failed(origin: Origin, reason: &str) -> Self {
        Self {
            code: String::new(),
            verdict: ExecutionVerdict::skipped(reason),
            origin,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub task_id: String,
    pub strategy: StrategyKind,
    pub candidates: Vec<Candidate>,
    pub chosen: usize,
    pub samples_n: u32,
    pub correct_c: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_status: Option<EpisodeStatus>,
    /// Backend failure that cut the task short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StrategyResult {
    fn new(task: &Task, strategy: StrategyKind, candidates: Vec<Candidate>, chosen: usize, samples_n: u32) -> Self {
        let correct_c = candidates.iter().filter(|c| c.passed()).count() as u32;
        Self {
            task_id: task.id.clone(),
            strategy,
            candidates,
            chosen,
            samples_n,
            correct_c,
            episode_status: None,
            error: None,
        }
    }

    pub fn chosen_candidate(&self) -> Option<&Candidate> {
        self.candidates.get(self.chosen)
    }

    /// `(n, c)` this result contributes to pass@k.
    ///
    /// Voting strategies produce one answer per task, so they count as a single
    /// sample that passes iff the chosen candidate passes.
    pub fn scored_tally(&self) -> (u32, u32) {
        if self.strategy.is_voting() {
            (1, u32::from(self.chosen_candidate().is_some_and(Candidate::passed)))
        } else {
            (self.samples_n, self.correct_c)
        }
    }

    /// Checks internal accounting; used when reading results back from disk.
    pub fn check(&self) -> Result<(), String> {
        if self.candidates.is_empty() || self.chosen >= self.candidates.len() {
            return Err(format!("chosen index {} out of range", self.chosen));
        }
        if self.correct_c > self.samples_n {
            return Err(format!("correct_c {} exceeds samples_n {}", self.correct_c, self.samples_n));
        }
        let passing = self.candidates.iter().filter(|c| c.passed()).count() as u32;
        if passing != self.correct_c {
            return Err(format!("correct_c {} but {passing} passing candidates", self.correct_c));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("few-shot needs at least one exemplar")]
    NoExemplars,
    #[error("exemplar {0:?} is the task under evaluation")]
    ExemplarLeak(String),
    #[error("sample count must be at least 1")]
    ZeroSamples,
    #[error("invalid loop budget: {0}")]
    Budget(String),
}

/// Shared dependencies for running a strategy.
#[derive(Clone, Copy)]
pub struct StrategyContext<'a> {
    pub backend: &'a dyn ChatBackend,
    pub sandbox: &'a Sandbox,
    pub params: &'a SamplingParams,
}

/// A solved example shown to the model in few-shot prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub task_id: String,
    pub instruction: String,
    pub entry_point: String,
    pub solution: String,
}

const FIXTURE_SOLUTIONS: [(&str, &str); 5] = [
    (
        "is_palindrome",
        "def is_palindrome(s):\n    s = s.strip().lower()\n    return s == s[::-1]",
    ),
    (
        "reverse_words",
        "def reverse_words(string):\n    return \" \".join(reversed(string.split()))",
    ),
    (
        "opposite_Signs",
        "def opposite_Signs(n1, n2):\n    return (n1 ^ n2) < 0",
    ),
    (
        "sort_matrix",
        "def sort_matrix(M):\n    return sorted(M, key=sum)",
    ),
    (
        "remove_Occ",
        "def remove_Occ(s, ch):\n    first = s.find(ch)\n    if first == -1:\n        return s\n    s = s[:first] + s[first + 1:]\n    last = s.rfind(ch)\n    if last == -1:\n        return s\n    return s[:last] + s[last + 1:]",
    ),
];

/// Default few-shot exemplars: `count` built-in fixtures other than `exclude_id`.
pub fn default_exemplars(exclude_id: &str, count: usize) -> Vec<Exemplar> {
    let fixtures = builtin_fixtures();
    FIXTURE_SOLUTIONS
        .iter()
        .filter(|(id, _)| *id != exclude_id)
        .filter_map(|(id, solution)| {
            let task = fixtures.get(id)?;
            Some(Exemplar {
                task_id: task.id.clone(),
                instruction: task.instruction.clone(),
                entry_point: task.entry_point.clone(),
                solution: solution.to_string(),
            })
        })
        .take(count)
        .collect()
}

pub const DEFAULT_EXEMPLAR_COUNT: usize = 3;

fn render_exemplars(exemplars: &[Exemplar]) -> String {
    let mut out = String::from("Solved examples:\n");
    for (i, ex) in exemplars.iter().enumerate() {
        out.push_str(&format!(
            "\nExample {}:\nTask:\n{}\n\nFunction signature: {}\n\nSolution:\n<code>\n{}\n</code>\n",
            i + 1,
            ex.instruction,
            ex.entry_point,
            ex.solution
        ));
    }
    out.push_str("\nNow solve the following task.\n\n");
    out
}

/// Extracts executable source from a single-shot reply, or explains why none exists.
fn extract_code(reply: &ModelReply) -> Result<String, String> {
    let turn = parse_turn(&reply.text).map_err(|e| e.to_string())?;
    turn.executable()
        .map(str::to_string)
        .ok_or_else(|| "reply contains no code".to_string())
}

fn single_shot(
    task: &Task,
    ctx: StrategyContext<'_>,
    strategy: StrategyKind,
    messages: &[ChatMessage],
) -> StrategyResult {
    let (candidate, error) = match ctx.backend.complete(messages, ctx.params) {
        Ok(reply) => match extract_code(&reply) {
            Ok(code) => {
                let verdict = ctx.sandbox.run(&code, &task.tests);
                (
                    Candidate {
                        code,
                        verdict,
                        origin: Origin::SingleShot,
                    },
                    None,
                )
            }
            Err(reason) => (Candidate::failed(Origin::SingleShot, &reason), None),
        },
        Err(e) => (
            Candidate::failed(Origin::SingleShot, &e.to_string()),
            Some(e.to_string()),
        ),
    };
    let mut result = StrategyResult::new(task, strategy, vec![candidate], 0, 1);
    result.error = error;
    result
}

/// One completion, one parse, one execution.
pub fn zero_shot(task: &Task, ctx: StrategyContext<'_>) -> StrategyResult {
    let messages = render_task_prompt(task, &PromptTemplate::single_shot());
    single_shot(task, ctx, StrategyKind::ZeroShot, &messages)
}

/// Zero-shot with solved exemplars placed before the task.
pub fn few_shot(
    task: &Task,
    ctx: StrategyContext<'_>,
    exemplars: &[Exemplar],
) -> Result<StrategyResult, StrategyError> {
    if exemplars.is_empty() {
        return Err(StrategyError::NoExemplars);
    }
    if let Some(leak) = exemplars.iter().find(|e| e.task_id == task.id) {
        return Err(StrategyError::ExemplarLeak(leak.task_id.clone()));
    }
    let mut messages = render_task_prompt(task, &PromptTemplate::single_shot());
    let user = &mut messages[1].content;
    *user = format!("{}{}", render_exemplars(exemplars), user);
    Ok(single_shot(task, ctx, StrategyKind::FewShot, &messages))
}

/// Index of the earliest member of the largest group; `None` keys abstain.
pub fn vote<K: Eq + Hash>(keys: &[Option<K>]) -> usize {
    let mut groups: HashMap<&K, (usize, usize)> = HashMap::new();
    for (i, key) in keys.iter().enumerate() {
        if let Some(key) = key {
            groups.entry(key).or_insert((0, i)).0 += 1;
        }
    }
    groups
        .into_values()
        .max_by(|(count_a, first_a), (count_b, first_b)| {
            count_a.cmp(count_b).then(first_b.cmp(first_a))
        })
        .map_or(0, |(_, first)| first)
}

/// Line-wise trailing whitespace and surrounding blank lines removed.
pub fn normalize_code(code: &str) -> String {
    code.lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim_matches('\n')
        .to_string()
}

fn sampled(
    task: &Task,
    ctx: StrategyContext<'_>,
    strategy: StrategyKind,
    n: u32,
) -> Result<StrategyResult, StrategyError> {
    if n == 0 {
        return Err(StrategyError::ZeroSamples);
    }
    let messages = render_task_prompt(task, &PromptTemplate::single_shot());
    let replies = match ctx.backend.complete_n(&messages, ctx.params, n as usize) {
        Ok(replies) => replies,
        Err(e) => {
            let mut result = StrategyResult::new(
                task,
                strategy,
                vec![Candidate::failed(Origin::Sampled, &e.to_string())],
                0,
                n,
            );
            result.error = Some(e.to_string());
            return Ok(result);
        }
    };
    let candidates: Vec<Candidate> = replies
        .iter()
        .map(|reply| match extract_code(reply) {
            Ok(code) => Candidate {
                verdict: ctx.sandbox.run(&code, &task.tests),
                code,
                origin: Origin::Sampled,
            },
            Err(reason) => Candidate::failed(Origin::Sampled, &reason),
        })
        .collect();
    let chosen = match strategy {
        StrategyKind::SelfConsistency => vote(
            &candidates
                .iter()
                .map(|c| (!c.code.is_empty()).then(|| c.verdict.signature()))
                .collect::<Vec<_>>(),
        ),
        _ => vote(
            &candidates
                .iter()
                .map(|c| (!c.code.is_empty()).then(|| normalize_code(&c.code)))
                .collect::<Vec<_>>(),
        ),
    };
    Ok(StrategyResult::new(task, strategy, candidates, chosen, n))
}

/// `n` independent samples, executed, voted on by outcome signature.
pub fn self_consistency(task: &Task, ctx: StrategyContext<'_>, n: u32) -> Result<StrategyResult, StrategyError> {
    sampled(task, ctx, StrategyKind::SelfConsistency, n)
}

/// `n` independent samples, executed, voted on by normalized source text.
pub fn majority_voting(task: &Task, ctx: StrategyContext<'_>, n: u32) -> Result<StrategyResult, StrategyError> {
    sampled(task, ctx, StrategyKind::MajorityVoting, n)
}

/// One full agent episode; its final executed code is the single candidate.
pub fn codeact_agent(
    task: &Task,
    ctx: StrategyContext<'_>,
    budget: LoopBudget,
    template: &PromptTemplate,
) -> Result<(StrategyResult, Transcript), StrategyError> {
    budget.validate().map_err(StrategyError::Budget)?;
    let transcript = run_episode(task, ctx.backend, ctx.sandbox, budget, ctx.params, template);
    let candidate = match transcript.final_candidate() {
        Some((code, verdict)) => Candidate {
            code: code.to_string(),
            verdict: verdict.clone(),
            origin: Origin::AgentFinal,
        },
        None => Candidate::failed(Origin::AgentFinal, "episode produced no executed code"),
    };
    let mut result = StrategyResult::new(task, StrategyKind::CodeactAgent, vec![candidate], 0, 1);
    result.episode_status = Some(transcript.status);
    result.error = transcript.error.clone();
    Ok((result, transcript))
}

/// Strategy selection plus its knobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Samples for the voting strategies.
    pub samples: u32,
    pub budget: LoopBudget,
    pub exemplar_count: usize,
    pub template: PromptTemplate,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            samples: SamplingParams::default().num_samples,
            budget: LoopBudget::default(),
            exemplar_count: DEFAULT_EXEMPLAR_COUNT,
            template: PromptTemplate::agent(),
        }
    }
}

/// Runs the configured strategy on one task.
pub fn run_strategy(
    task: &Task,
    ctx: StrategyContext<'_>,
    config: &StrategyConfig,
) -> Result<(StrategyResult, Option<Transcript>), StrategyError> {
    match config.kind {
        StrategyKind::ZeroShot => Ok((zero_shot(task, ctx), None)),
        StrategyKind::FewShot => {
            let exemplars = default_exemplars(&task.id, config.exemplar_count);
            Ok((few_shot(task, ctx, &exemplars)?, None))
        }
        StrategyKind::SelfConsistency => Ok((self_consistency(task, ctx, config.samples)?, None)),
        StrategyKind::MajorityVoting => Ok((majority_voting(task, ctx, config.samples)?, None)),
        StrategyKind::CodeactAgent => {
            let (result, transcript) = codeact_agent(task, ctx, config.budget, &config.template)?;
            Ok((result, Some(transcript)))
        }
    }
}
