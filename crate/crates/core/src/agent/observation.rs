use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::sandbox::ExecutionVerdict;

/// Upper bound, in characters, on an observation shown to the model.
pub const OBSERVATION_CHAR_CAP: usize = 2000;
const HEAD_CHARS: usize = 1500;
const TAIL_CHARS: usize = 500;
const ELISION: &str = "\n... [output truncated] ...\n";

/// Execution feedback for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    /// Absent when the turn carried no code to run.
    pub verdict: Option<ExecutionVerdict>,
    pub rendered: String,
}

impl Observation {
    pub fn from_verdict(verdict: ExecutionVerdict) -> Self {
        let rendered = render_verdict(&verdict);
        Self {
            verdict: Some(verdict),
            rendered,
        }
    }

    pub fn no_code() -> Self {
        Self {
            verdict: None,
            rendered: "No code was found in your reply. Put the Python solution inside <code>...</code>."
                .to_string(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict.as_ref().is_some_and(ExecutionVerdict::passed)
    }
}

/// Status line, per-assertion results, then captured output; capped at
/// [`OBSERVATION_CHAR_CAP`] characters by keeping the head and tail.
pub fn render_verdict(verdict: &ExecutionVerdict) -> String {
    let mut out = String::new();
    let passed = verdict.per_test.iter().filter(|t| t.passed).count();
    let _ = writeln!(
        out,
        "Execution status: {} ({} ms)",
        verdict.status.as_str(),
        verdict.duration_ms
    );
    if !verdict.per_test.is_empty() {
        let _ = writeln!(out, "Tests passed: {passed}/{}", verdict.per_test.len());
        for t in &verdict.per_test {
            match (&t.error, t.passed) {
                (_, true) => {
                    let _ = writeln!(out, "[PASS] {}", t.test);
                }
                (Some(error), false) => {
                    let _ = writeln!(out, "[FAIL] {} -> {}", t.test, error.trim());
                }
                (None, false) => {
                    let _ = writeln!(out, "[FAIL] {}", t.test);
                }
            }
        }
    }
    if !verdict.stdout.trim().is_empty() {
        let _ = writeln!(out, "stdout:\n{}", verdict.stdout.trim_end());
    }
    if !verdict.stderr.trim().is_empty() {
        let _ = writeln!(out, "stderr:\n{}", verdict.stderr.trim_end());
    }
    truncate_middle(out.trim_end())
}

/// Keeps the first and last characters of `text` so the result fits the cap.
pub fn truncate_middle(text: &str) -> String {
    let count = text.chars().count();
    if count <= OBSERVATION_CHAR_CAP {
        return text.to_string();
    }
    let head: String = text.chars().take(HEAD_CHARS - ELISION.chars().count()).collect();
    let tail: String = text.chars().skip(count - TAIL_CHARS).collect();
    format!("{head}{ELISION}{tail}")
}
