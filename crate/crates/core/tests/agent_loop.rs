use std::sync::Arc;

use codeact_core::agent::{
    parse_turn, run_episode, EpisodeStatus, InvalidTurn, LoopBudget, PromptTemplate,
};
use codeact_core::corpus::{builtin_fixtures, Task};
use codeact_core::gateway::{
    ChatBackend, Condition, Role, SamplingParams, ScriptEntry, ScriptedMock,
};
use codeact_core::sandbox::{CannedStatus, CannedVerdict, Sandbox, StubRunner};
use proptest::prelude::*;

const BUGGY: &str = "def is_palindrome(s):\n    return s + 1 == s";
const FIXED: &str = "def is_palindrome(s):\n    s = s.strip().lower()\n    return s == s[::-1]";

fn palindrome() -> Task {
    builtin_fixtures().get("is_palindrome").unwrap().clone()
}

fn stub() -> StubRunner {
    StubRunner::new()
        .with(FIXED, CannedVerdict::pass())
        .with(
            BUGGY,
            CannedVerdict::runtime_error("TypeError: can only concatenate str (not \"int\") to str"),
        )
}

fn sandbox(runner: StubRunner) -> Sandbox {
    Sandbox::new(Arc::new(runner), 5.0, 2).unwrap()
}

fn code_reply(code: &str) -> String {
    format!("<thought>পরিকল্পনা</thought>\n<code>\n{code}\n</code>")
}

fn run(mock: &ScriptedMock, budget: LoopBudget) -> codeact_core::agent::Transcript {
    run_episode(
        &palindrome(),
        mock,
        &sandbox(stub()),
        budget,
        &SamplingParams::default(),
        &PromptTemplate::agent(),
    )
}

#[test]
fn one_shot_success() {
    let mock = ScriptedMock::from_texts([code_reply(FIXED)]).unwrap();
    let t = run(&mock, LoopBudget::default());
    assert_eq!(t.status, EpisodeStatus::Solved);
    assert_eq!(t.iterations_used, 1);
    assert_eq!(t.retries_used, 0);
    assert!(t.turns.last().unwrap().observation.passed());
}

#[test]
fn type_error_feedback_drives_the_fix() {
    let mock = ScriptedMock::new(vec![
        ScriptEntry::reply(code_reply(BUGGY)),
        ScriptEntry::reply(code_reply(FIXED)).when(Condition::last_user_contains("TypeError")),
    ])
    .unwrap();
    let t = run(&mock, LoopBudget::default());
    assert_eq!(t.status, EpisodeStatus::Solved);
    assert_eq!(t.iterations_used, 2);
    assert!(t.turns[0].observation.rendered.contains("TypeError"));

    // The second request carries the first observation naming the exception.
    let calls = mock.calls();
    assert_eq!(calls.len(), 2);
    let second = &calls[1];
    assert_eq!(second.len(), 4);
    assert_eq!(second[2].role, Role::Assistant);
    assert_eq!(second[2].content, code_reply(BUGGY));
    assert_eq!(second[3].role, Role::User);
    assert!(second[3].content.contains("TypeError"));
}

#[test]
fn iteration_budget_exhausted_at_ten() {
    let mock = ScriptedMock::from_texts(vec![code_reply(BUGGY); 12]).unwrap();
    let t = run(&mock, LoopBudget::default());
    assert_eq!(t.status, EpisodeStatus::IterationBudgetExhausted);
    assert_eq!(t.iterations_used, 10);
    assert_eq!(t.turns.len(), 10);
    assert_eq!(mock.calls().len(), 10);
}

#[test]
fn retry_budget_exhausted_at_twenty_five() {
    let mock = ScriptedMock::from_texts(vec![String::new(); 30]).unwrap();
    let t = run(&mock, LoopBudget::default());
    assert_eq!(t.status, EpisodeStatus::RetryBudgetExhausted);
    assert_eq!(t.retries_used, 25);
    assert_eq!(t.iterations_used, 0);
    assert_eq!(mock.calls().len(), 25);
}

#[test]
fn empty_replies_are_retried_without_spending_iterations() {
    let mock = ScriptedMock::from_texts([String::new(), String::new(), code_reply(FIXED)]).unwrap();
    let t = run(&mock, LoopBudget::default());
    assert_eq!(t.status, EpisodeStatus::Solved);
    assert_eq!(t.retries_used, 2);
    assert_eq!(t.iterations_used, 1);
    // Invalid turns never enter the conversation.
    assert_eq!(mock.calls()[2].len(), 2);
}

#[test]
fn retry_pool_is_shared_across_iterations() {
    let mut script = Vec::new();
    for _ in 0..3 {
        script.push(String::new());
        script.push(String::new());
        script.push(code_reply(BUGGY));
    }
    let mock = ScriptedMock::from_texts(script).unwrap();
    let t = run(&mock, LoopBudget { max_iterations: 10, max_retries: 5 });
    assert_eq!(t.status, EpisodeStatus::RetryBudgetExhausted);
    assert_eq!(t.iterations_used, 2);
    assert_eq!(t.retries_used, 5);
}

#[test]
fn backend_errors_spend_retries_then_fail() {
    let mock = ScriptedMock::new(vec![ScriptEntry::error(500, "boom"); 3]).unwrap();
    let t = run(&mock, LoopBudget { max_iterations: 10, max_retries: 3 });
    assert_eq!(t.status, EpisodeStatus::BackendFailed);
    assert!(t.error.as_deref().unwrap().contains("500"));
}

#[test]
fn passing_answer_is_solved_failing_answer_is_terminal() {
    let mock = ScriptedMock::from_texts([format!("<answer>{FIXED}</answer>")]).unwrap();
    let t = run(&mock, LoopBudget::default());
    assert_eq!(t.status, EpisodeStatus::Solved);

    let mock = ScriptedMock::from_texts([
        format!("<answer>{BUGGY}</answer>"),
        code_reply(FIXED),
    ])
    .unwrap();
    let t = run(&mock, LoopBudget::default());
    assert_eq!(t.status, EpisodeStatus::AnswerUnverified);
    assert_eq!(t.iterations_used, 1);
    assert_eq!(mock.remaining(), 1);
}

#[test]
fn thought_only_turn_gets_a_nudge() {
    let mock = ScriptedMock::from_texts([
        "<thought>let me think</thought>".to_string(),
        code_reply(FIXED),
    ])
    .unwrap();
    let t = run(&mock, LoopBudget::default());
    assert_eq!(t.status, EpisodeStatus::Solved);
    assert_eq!(t.iterations_used, 2);
    assert!(t.turns[0].observation.verdict.is_none());
    assert!(t.turns[0].observation.rendered.contains("<code>"));
}

#[test]
fn timeout_verdict_is_fed_back() {
    let runner = stub().with("while True: pass", CannedVerdict::new(CannedStatus::Timeout));
    let mock = ScriptedMock::from_texts([code_reply("while True: pass"), code_reply(FIXED)]).unwrap();
    let t = run_episode(
        &palindrome(),
        &mock,
        &sandbox(runner),
        LoopBudget::default(),
        &SamplingParams::default(),
        &PromptTemplate::agent(),
    );
    assert_eq!(t.status, EpisodeStatus::Solved);
    assert!(t.turns[0].observation.rendered.contains("timeout"));
}

#[test]
fn transcript_serializes_as_one_json_line() {
    let mock = ScriptedMock::from_texts([code_reply(BUGGY), code_reply(FIXED)]).unwrap();
    let t = run(&mock, LoopBudget::default());
    let line = serde_json::to_string(&t).unwrap();
    assert!(!line.contains('\n'));
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["status"], "solved");
    assert_eq!(v["iterations_used"], 2);
    let turn = &v["turns"][0];
    for key in ["thought", "code", "answer", "observation"] {
        assert!(turn.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["turns"][0]["observation"]["verdict"]["status"], "runtime_error");
    let back: codeact_core::agent::Transcript = serde_json::from_str(&line).unwrap();
    assert_eq!(back, t);
}

/// Arbitrary mixes of tag fragments, fences and noise.
fn turn_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("<thought>".to_string()),
        Just("</thought>".to_string()),
        Just("<code>".to_string()),
        Just("</code>".to_string()),
        Just("<answer>".to_string()),
        Just("</answer>".to_string()),
        Just("```python\n".to_string()),
        Just("```".to_string()),
        Just("\n".to_string()),
        "[ -~]{0,12}",
        "\\PC{0,6}",
    ];
    proptest::collection::vec(piece, 0..24).prop_map(|parts| parts.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parse_turn_is_total(raw in turn_text()) {
        match parse_turn(&raw) {
            Ok(turn) => {
                prop_assert!(turn.thought.is_some() || turn.code.is_some() || turn.answer.is_some());
                prop_assert_eq!(turn.raw, raw);
            }
            Err(InvalidTurn::Empty) => prop_assert!(raw.trim().is_empty()),
            Err(InvalidTurn::NoContent) => {}
        }
    }

    #[test]
    fn episodes_terminate_within_budget(
        script in proptest::collection::vec(0u8..4, 1..40),
        max_iterations in 1u32..6,
        max_retries in 1u32..6,
    ) {
        let texts: Vec<String> = script
            .iter()
            .map(|kind| match kind {
                0 => String::new(),
                1 => code_reply(BUGGY),
                2 => "<thought>hmm</thought>".to_string(),
                _ => "no tags here".to_string(),
            })
            .collect();
        let mock = ScriptedMock::from_texts(texts).unwrap();
        let budget = LoopBudget { max_iterations, max_retries };
        let t = run(&mock, budget);
        prop_assert!(t.iterations_used <= max_iterations);
        prop_assert!(t.retries_used <= max_retries);
        prop_assert!(mock.calls().len() as u32 <= max_iterations + max_retries);
        prop_assert_eq!(t.turns.len() as u32, t.iterations_used);
        prop_assert_ne!(t.status, EpisodeStatus::Solved);
    }
}

#[test]
fn backend_trait_object_works() {
    let mock: Arc<dyn ChatBackend> = Arc::new(ScriptedMock::from_texts([code_reply(FIXED)]).unwrap());
    let t = run_episode(
        &palindrome(),
        mock.as_ref(),
        &sandbox(stub()),
        LoopBudget::default(),
        &SamplingParams::default(),
        &PromptTemplate::agent(),
    );
    assert!(t.solved());
}
