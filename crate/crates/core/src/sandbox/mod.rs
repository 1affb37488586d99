//! Out-of-process code execution.
//!
//! Generated code never runs inside the harness. A [`Runner`] ships an
//! [`ExecutionRequest`] to a sandbox runner over a one-shot JSON protocol and
//! [`execute`] turns whatever comes back (a protocol message, a crash, or a
//! timeout) into an [`ExecutionVerdict`].
//!
//! Wire protocol, one request per runner process:
//!
//! ```text
//! stdin : {"code": str, "tests": [str], "timeout_s": number}   then EOF
//! stdout: {"status": "pass"|"assertion_failure"|"runtime_error"|"syntax_error",
//!          "per_test": [{"test": str, "passed": bool, "error": str|null}],
//!          "stdout": str, "stderr": str, "duration_ms": int}
//! ```
//!
//! The runner exits 0 after writing its message. Any other exit code or a
//! malformed message is reported as `runner_crash`. The orchestrator owns the
//! timeout and kills the runner's whole process group when it expires.

mod process;
mod stub;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::limit::Semaphore;

pub use process::{ProcessRunner, RunnerCommand};
pub use stub::{load_stub_table, parse_stub_table, CannedStatus, CannedVerdict, StubRunner};

pub const DEFAULT_TIMEOUT_S: f64 = 5.0;

/// Extra wall time allowed past the timeout for killing and reaping the runner.
pub const KILL_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Error, PartialEq)]
pub enum SandboxError {
    #[error("execution request has empty code")]
    EmptyCode,
    #[error("timeout must be positive and finite, got {0}")]
    BadTimeout(f64),
}

/// The request body sent to the runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRequest {
    pub code: String,
    pub tests: Vec<String>,
    pub timeout_s: f64,
}

impl ExecutionRequest {
    pub fn new(code: impl Into<String>, tests: Vec<String>, timeout_s: f64) -> Result<Self, SandboxError> {
        let code = code.into();
        if code.trim().is_empty() {
            return Err(SandboxError::EmptyCode);
        }
        if !(timeout_s > 0.0 && timeout_s.is_finite()) {
            return Err(SandboxError::BadTimeout(timeout_s));
        }
        Ok(Self {
            code,
            tests,
            timeout_s,
        })
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    AssertionFailure,
    RuntimeError,
    SyntaxError,
    Timeout,
    RunnerCrash,
}

impl VerdictStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::AssertionFailure => "assertion_failure",
            Self::RuntimeError => "runtime_error",
            Self::SyntaxError => "syntax_error",
            Self::Timeout => "timeout",
            Self::RunnerCrash => "runner_crash",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: String,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionVerdict {
    pub status: VerdictStatus,
    pub per_test: Vec<TestOutcome>,
    pub stdout: String,
    pub stderr: String,
    pub duration_ms: u64,
}

impl ExecutionVerdict {
    /// True when the run passed and every assertion held.
    pub fn passed(&self) -> bool {
        self.status == VerdictStatus::Pass && self.per_test.iter().all(|t| t.passed)
    }

    /// Ordered per-assertion pass flags; the voting key for self-consistency.
    pub fn signature(&self) -> Vec<bool> {
        self.per_test.iter().map(|t| t.passed).collect()
    }

    pub fn runner_crash(reason: &str, stdout: String, stderr: String, duration_ms: u64) -> Self {
        let stderr = if stderr.is_empty() {
            format!("runner crash: {reason}")
        } else {
            format!("{stderr}\nrunner crash: {reason}")
        };
        Self {
            status: VerdictStatus::RunnerCrash,
            per_test: Vec::new(),
            stdout,
            stderr,
            duration_ms,
        }
    }

    /// Verdict for a sample that produced no code, so nothing was executed.
    pub fn skipped(reason: &str) -> Self {
        Self {
            status: VerdictStatus::RuntimeError,
            per_test: Vec::new(),
            stdout: String::new(),
            stderr: reason.to_string(),
            duration_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum WireStatus {
    Pass,
    AssertionFailure,
    RuntimeError,
    SyntaxError,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTest {
    test: String,
    passed: bool,
    error: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireReply {
    status: WireStatus,
    per_test: Vec<WireTest>,
    stdout: String,
    stderr: String,
    duration_ms: u64,
}

/// Maps one runner protocol message to a verdict. Never fails: protocol
/// violations become `runner_crash`.
pub fn classify(reply: &str) -> ExecutionVerdict {
    let wire: WireReply = match serde_json::from_str(reply) {
        Ok(wire) => wire,
        Err(e) => {
            return ExecutionVerdict::runner_crash(
                &format!("malformed protocol message: {e}"),
                String::new(),
                String::new(),
                0,
            )
        }
    };
    let per_test: Vec<TestOutcome> = wire
        .per_test
        .into_iter()
        .map(|t| TestOutcome {
            test: t.test,
            passed: t.passed,
            error: t.error,
        })
        .collect();
    let all_passed = per_test.iter().all(|t| t.passed);
    let status = match wire.status {
        WireStatus::Pass => VerdictStatus::Pass,
        WireStatus::AssertionFailure => VerdictStatus::AssertionFailure,
        WireStatus::RuntimeError => VerdictStatus::RuntimeError,
        WireStatus::SyntaxError => VerdictStatus::SyntaxError,
    };
    let violation = match status {
        VerdictStatus::Pass if !all_passed => Some("status pass with a failing test"),
        VerdictStatus::AssertionFailure if all_passed => {
            Some("status assertion_failure without a failing test")
        }
        VerdictStatus::SyntaxError if !per_test.is_empty() => {
            Some("status syntax_error with test outcomes")
        }
        _ => None,
    };
    if let Some(reason) = violation {
        return ExecutionVerdict::runner_crash(reason, wire.stdout, wire.stderr, wire.duration_ms);
    }
    ExecutionVerdict {
        status,
        per_test,
        stdout: wire.stdout,
        stderr: wire.stderr,
        duration_ms: wire.duration_ms,
    }
}

/// What a runner produced for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunnerOutput {
    Exited {
        exit_code: Option<i32>,
        stdout: Vec<u8>,
        stderr: Vec<u8>,
    },
    /// Killed by the orchestrator after the timeout expired.
    TimedOut { stdout: Vec<u8>, stderr: Vec<u8> },
    SpawnFailed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunnerOutcome {
    pub output: RunnerOutput,
    pub elapsed: Duration,
}

/// Something that can run one request to completion or timeout.
pub trait Runner: Send + Sync {
    fn run(&self, request: &ExecutionRequest) -> RunnerOutcome;
}

impl<R: Runner + ?Sized> Runner for Arc<R> {
    fn run(&self, request: &ExecutionRequest) -> RunnerOutcome {
        (**self).run(request)
    }
}

fn lossy(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Runs a request and classifies the result.
pub fn execute(request: &ExecutionRequest, runner: &dyn Runner) -> ExecutionVerdict {
    let outcome = runner.run(request);
    let elapsed_ms = outcome.elapsed.as_millis() as u64;
    let timeout_ms = (request.timeout_s * 1000.0).ceil() as u64;
    match outcome.output {
        RunnerOutput::SpawnFailed(reason) => ExecutionVerdict::runner_crash(
            &format!("failed to start runner: {reason}"),
            String::new(),
            String::new(),
            elapsed_ms,
        ),
        RunnerOutput::TimedOut { stdout, stderr } => timeout_verdict(
            lossy(&stdout),
            lossy(&stderr),
            elapsed_ms.max(timeout_ms),
            request.timeout_s,
        ),
        RunnerOutput::Exited {
            exit_code,
            stdout,
            stderr,
        } => {
            if elapsed_ms >= timeout_ms {
                return timeout_verdict(String::new(), lossy(&stderr), elapsed_ms, request.timeout_s);
            }
            if exit_code != Some(0) {
                let reason = match exit_code {
                    Some(code) => format!("runner exited with status {code}"),
                    None => "runner killed by signal".to_string(),
                };
                return ExecutionVerdict::runner_crash(&reason, lossy(&stdout), lossy(&stderr), elapsed_ms);
            }
            let mut verdict = classify(&lossy(&stdout));
            if verdict.status != VerdictStatus::RunnerCrash {
                if let Err(reason) = check_against_request(&verdict, request) {
                    return ExecutionVerdict::runner_crash(
                        &reason,
                        verdict.stdout,
                        verdict.stderr,
                        elapsed_ms,
                    );
                }
            }
            verdict.duration_ms = elapsed_ms;
            verdict
        }
    }
}

fn timeout_verdict(stdout: String, stderr: String, duration_ms: u64, timeout_s: f64) -> ExecutionVerdict {
    let note = format!("execution exceeded the {timeout_s} s time limit and was killed");
    ExecutionVerdict {
        status: VerdictStatus::Timeout,
        per_test: Vec::new(),
        stdout,
        stderr: if stderr.is_empty() { note } else { format!("{stderr}\n{note}") },
        duration_ms,
    }
}

fn check_against_request(verdict: &ExecutionVerdict, request: &ExecutionRequest) -> Result<(), String> {
    if verdict.per_test.len() > request.tests.len() {
        return Err(format!(
            "runner reported {} test outcomes for {} tests",
            verdict.per_test.len(),
            request.tests.len()
        ));
    }
    if verdict.status == VerdictStatus::Pass && verdict.per_test.len() != request.tests.len() {
        return Err("status pass without an outcome for every test".into());
    }
    for (outcome, test) in verdict.per_test.iter().zip(&request.tests) {
        if &outcome.test != test {
            return Err(format!("test outcome out of order: expected {test:?}, got {:?}", outcome.test));
        }
    }
    Ok(())
}

/// Default number of concurrently live runner processes.
pub fn default_pool_size() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// A runner plus a timeout and a bound on concurrent executions.
pub struct Sandbox {
    runner: Arc<dyn Runner>,
    timeout_s: f64,
    slots: Semaphore,
}

impl Sandbox {
    pub fn new(runner: Arc<dyn Runner>, timeout_s: f64, pool_size: usize) -> Result<Self, SandboxError> {
        if !(timeout_s > 0.0 && timeout_s.is_finite()) {
            return Err(SandboxError::BadTimeout(timeout_s));
        }
        Ok(Self {
            runner,
            timeout_s,
            slots: Semaphore::new(pool_size.max(1)),
        })
    }

    pub fn timeout_s(&self) -> f64 {
        self.timeout_s
    }

    /// Runs `code` against `tests`. Empty code is not sent to the runner.
    pub fn run(&self, code: &str, tests: &[String]) -> ExecutionVerdict {
        let request = match ExecutionRequest::new(code, tests.to_vec(), self.timeout_s) {
            Ok(request) => request,
            Err(e) => return ExecutionVerdict::skipped(&e.to_string()),
        };
        let _slot = self.slots.acquire();
        execute(&request, self.runner.as_ref())
    }
}
