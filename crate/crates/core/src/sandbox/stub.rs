use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{ExecutionRequest, Runner, RunnerOutcome, RunnerOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CannedStatus {
    Pass,
    AssertionFailure,
    RuntimeError,
    SyntaxError,
    Timeout,
    /// Runner dies mid-reply.
    Crash,
}

/// A canned runner result, expanded against the request's tests when replayed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CannedVerdict {
    pub status: CannedStatus,
    /// Per-assertion outcomes, in test order. May be shorter than the test list
    /// for runtime errors (execution stops at the raising test).
    #[serde(default)]
    pub passed: Option<Vec<bool>>,
    /// Error text attached to failing tests.
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default = "default_duration")]
    pub duration_ms: u64,
}

fn default_duration() -> u64 {
    1
}

impl CannedVerdict {
    pub fn new(status: CannedStatus) -> Self {
        Self {
            status,
            passed: None,
            error: None,
            stdout: String::new(),
            stderr: String::new(),
            duration_ms: default_duration(),
        }
    }

    pub fn pass() -> Self {
        Self::new(CannedStatus::Pass)
    }

    /// A runtime error raised while evaluating the first assertion.
    pub fn runtime_error(error: impl Into<String>) -> Self {
        Self {
            error: Some(error.into()),
            ..Self::new(CannedStatus::RuntimeError)
        }
    }

    pub fn assertion_failure(passed: Vec<bool>) -> Self {
        Self {
            passed: Some(passed),
            ..Self::new(CannedStatus::AssertionFailure)
        }
    }

    pub fn with_passed(mut self, passed: Vec<bool>) -> Self {
        self.passed = Some(passed);
        self
    }

    fn wire_status(&self) -> &'static str {
        match self.status {
            CannedStatus::Pass => "pass",
            CannedStatus::AssertionFailure => "assertion_failure",
            CannedStatus::RuntimeError => "runtime_error",
            CannedStatus::SyntaxError => "syntax_error",
            CannedStatus::Timeout | CannedStatus::Crash => unreachable!("not a wire status"),
        }
    }

    /// Renders the protocol message the real runner would emit for `tests`.
    fn to_wire(&self, tests: &[String]) -> String {
        let error = self.error.clone();
        let outcomes: Vec<(bool, Option<String>)> = match self.status {
            CannedStatus::Pass => tests.iter().map(|_| (true, None)).collect(),
            CannedStatus::SyntaxError => Vec::new(),
            CannedStatus::AssertionFailure => {
                let passed = self.passed.clone().unwrap_or_else(|| vec![false; tests.len()]);
                passed
                    .into_iter()
                    .map(|p| (p, (!p).then(|| error.clone().unwrap_or_else(|| "AssertionError".into()))))
                    .collect()
            }
            CannedStatus::RuntimeError => {
                let passed = self.passed.clone().unwrap_or_else(|| vec![false]);
                let last = passed.len().saturating_sub(1);
                passed
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| (p, (i == last && !p).then(|| error.clone().unwrap_or_default())))
                    .collect()
            }
            CannedStatus::Timeout | CannedStatus::Crash => unreachable!("handled by the runner"),
        };
        let per_test: Vec<_> = tests
            .iter()
            .zip(outcomes)
            .map(|(test, (passed, error))| json!({"test": test, "passed": passed, "error": error}))
            .collect();
        let stderr = match (&self.error, self.status) {
            (Some(e), CannedStatus::RuntimeError | CannedStatus::SyntaxError) if self.stderr.is_empty() => e.clone(),
            _ => self.stderr.clone(),
        };
        json!({
            "status": self.wire_status(),
            "per_test": per_test,
            "stdout": self.stdout,
            "stderr": stderr,
            "duration_ms": self.duration_ms,
        })
        .to_string()
    }
}

/// Hash key for a code string: SHA-256 of the trimmed source, hex encoded.
pub fn code_key(code: &str) -> String {
    hex::encode(Sha256::digest(code.trim().as_bytes()))
}

/// In-process runner replaying canned verdicts keyed by code hash.
///
/// It emits the same protocol bytes and exit codes as a real runner, so
/// results go through the normal classification path. Timeouts are simulated
/// without waiting.
#[derive(Debug, Clone)]
pub struct StubRunner {
    table: HashMap<String, CannedVerdict>,
    default: CannedVerdict,
}

impl Default for StubRunner {
    fn default() -> Self {
        Self::new()
    }
}

impl StubRunner {
    pub fn new() -> Self {
        Self {
            table: HashMap::new(),
            default: CannedVerdict::runtime_error(
                "NameError: stub runner has no canned verdict for this code",
            ),
        }
    }

    pub fn with(mut self, code: &str, verdict: CannedVerdict) -> Self {
        self.insert(code, verdict);
        self
    }

    pub fn insert(&mut self, code: &str, verdict: CannedVerdict) {
        self.table.insert(code_key(code), verdict);
    }

    pub fn with_default(mut self, verdict: CannedVerdict) -> Self {
        self.default = verdict;
        self
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Runner for StubRunner {
    fn run(&self, request: &ExecutionRequest) -> RunnerOutcome {
        let canned = self.table.get(&code_key(&request.code)).unwrap_or(&self.default);
        let output = match canned.status {
            CannedStatus::Timeout => {
                return RunnerOutcome {
                    output: RunnerOutput::TimedOut {
                        stdout: canned.stdout.as_bytes().to_vec(),
                        stderr: Vec::new(),
                    },
                    elapsed: request.timeout(),
                }
            }
            CannedStatus::Crash => RunnerOutput::Exited {
                exit_code: Some(1),
                stdout: br#"{"status": "pa"#.to_vec(),
                stderr: b"Segmentation fault".to_vec(),
            },
            _ => RunnerOutput::Exited {
                exit_code: Some(0),
                stdout: canned.to_wire(&request.tests).into_bytes(),
                stderr: Vec::new(),
            },
        };
        RunnerOutcome {
            output,
            elapsed: Duration::from_millis(canned.duration_ms),
        }
    }
}

#[derive(Deserialize)]
struct StubLine {
    code: String,
    #[serde(flatten)]
    verdict: CannedVerdict,
}

/// Parses a JSONL stub table: `{"code": "...", "status": "pass", ...}` per line.
pub fn parse_stub_table(text: &str) -> Result<StubRunner, String> {
    let mut runner = StubRunner::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: StubLine =
            serde_json::from_str(line).map_err(|e| format!("stub table line {}: {e}", i + 1))?;
        runner.insert(&parsed.code, parsed.verdict);
    }
    Ok(runner)
}

pub fn load_stub_table(path: impl AsRef<Path>) -> Result<StubRunner, String> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read stub table {}: {e}", path.display()))?;
    parse_stub_table(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{execute, VerdictStatus};

    fn req(code: &str, tests: &[&str]) -> ExecutionRequest {
        ExecutionRequest::new(code, tests.iter().map(|t| t.to_string()).collect(), 5.0).unwrap()
    }

    #[test]
    fn table_lookup() {
        let stub = StubRunner::new().with("X", CannedVerdict::pass());
        let v = execute(&req("X", &["assert a", "assert b"]), &stub);
        assert_eq!(v.status, VerdictStatus::Pass);
        assert_eq!(v.signature(), vec![true, true]);
    }

    #[test]
    fn key_ignores_surrounding_whitespace() {
        let stub = StubRunner::new().with("X", CannedVerdict::pass());
        assert_eq!(execute(&req("\nX\n  ", &["assert a"]), &stub).status, VerdictStatus::Pass);
    }

    #[test]
    fn unknown_code_gets_default_runtime_error() {
        let v = execute(&req("Y", &["assert a"]), &StubRunner::new());
        assert_eq!(v.status, VerdictStatus::RuntimeError);
        assert!(v.per_test[0].error.as_deref().unwrap().contains("NameError"));
    }

    #[test]
    fn simulated_timeout_does_not_wait() {
        let stub = StubRunner::new().with("loop", CannedVerdict::new(CannedStatus::Timeout));
        let started = std::time::Instant::now();
        let v = execute(&req("loop", &["assert True"]), &stub);
        assert!(started.elapsed() < Duration::from_secs(1));
        assert_eq!(v.status, VerdictStatus::Timeout);
        assert!(v.duration_ms >= 5000);
    }

    #[test]
    fn crash_and_syntax_error() {
        let stub = StubRunner::new()
            .with("boom", CannedVerdict::new(CannedStatus::Crash))
            .with("def f(:", CannedVerdict::new(CannedStatus::SyntaxError));
        assert_eq!(execute(&req("boom", &["assert 1"]), &stub).status, VerdictStatus::RunnerCrash);
        let v = execute(&req("def f(:", &["assert 1"]), &stub);
        assert_eq!(v.status, VerdictStatus::SyntaxError);
        assert!(v.per_test.is_empty());
    }

    #[test]
    fn partial_outcomes() {
        let stub = StubRunner::new()
            .with("a", CannedVerdict::assertion_failure(vec![true, false, true]))
            .with("r", CannedVerdict::runtime_error("TypeError: bad").with_passed(vec![true, false]));
        let v = execute(&req("a", &["assert 1", "assert 2", "assert 3"]), &stub);
        assert_eq!(v.status, VerdictStatus::AssertionFailure);
        assert_eq!(v.signature(), vec![true, false, true]);
        let v = execute(&req("r", &["assert 1", "assert 2", "assert 3"]), &stub);
        assert_eq!(v.signature(), vec![true, false]);
        assert_eq!(v.per_test[1].error.as_deref(), Some("TypeError: bad"));
    }

    #[test]
    fn table_file() {
        let text = concat!(
            r#"{"code": "def f(x): return x", "status": "pass"}"#, "\n",
            r#"{"code": "def f(x): return x + '1'", "status": "runtime_error", "error": "TypeError: can only concatenate str"}"#, "\n",
        );
        let stub = parse_stub_table(text).unwrap();
        assert_eq!(stub.len(), 2);
        assert!(parse_stub_table(r#"{"code": "x", "status": "maybe"}"#).is_err());
    }
}
