use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{ExecutionRequest, Runner, RunnerOutcome, RunnerOutput, KILL_GRACE};

/// Environment variables passed through to the runner; everything else is dropped.
const ENV_ALLOWLIST: [&str; 3] = ["PATH", "LANG", "LC_ALL"];

const POLL_INTERVAL: Duration = Duration::from_millis(5);

/// Program and arguments used to launch one runner process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerCommand {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl RunnerCommand {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Splits a whitespace-separated command line such as `python3 -I runner.py`.
    pub fn parse(command_line: &str) -> Option<Self> {
        let mut parts = command_line.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect()))
    }
}

/// Spawns a fresh runner process per request.
///
/// Each process gets its own process group, an empty scratch directory as its
/// working directory and home, and an environment stripped to a small
/// allowlist. On timeout the whole group is killed with `SIGKILL`.
#[derive(Debug, Clone)]
pub struct ProcessRunner {
    command: RunnerCommand,
}

impl ProcessRunner {
    pub fn new(command: RunnerCommand) -> Self {
        // Resolve a relative program path now; the child runs in a scratch directory.
        let mut command = command;
        if command.program.components().count() > 1 && command.program.is_relative() {
            if let Ok(abs) = command.program.canonicalize() {
                command.program = abs;
            }
        }
        Self { command }
    }

    pub fn command(&self) -> &RunnerCommand {
        &self.command
    }

    fn spawn(&self, scratch: &std::path::Path) -> std::io::Result<Child> {
        let mut cmd = Command::new(&self.command.program);
        cmd.args(&self.command.args)
            .current_dir(scratch)
            .env_clear()
            .env("HOME", scratch)
            .env("TMPDIR", scratch)
            .env("PYTHONIOENCODING", "utf-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        for key in ENV_ALLOWLIST {
            if let Some(value) = std::env::var_os(key) {
                cmd.env(key, value);
            }
        }
        cmd.spawn()
    }
}

fn kill_group(pid: u32) {
    // SAFETY: killpg has no memory-safety preconditions; a stale group yields ESRCH.
    unsafe {
        libc::killpg(pid as libc::pid_t, libc::SIGKILL);
    }
}

fn drain<R: Read + Send + 'static>(mut source: R) -> mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = source.read_to_end(&mut buf);
        let _ = tx.send(buf);
    });
    rx
}

impl Runner for ProcessRunner {
    fn run(&self, request: &ExecutionRequest) -> RunnerOutcome {
        let start = Instant::now();
        let failed = |reason: String| RunnerOutcome {
            output: RunnerOutput::SpawnFailed(reason),
            elapsed: start.elapsed(),
        };
        let scratch = match tempfile::Builder::new().prefix("codeact-sandbox-").tempdir() {
            Ok(dir) => dir,
            Err(e) => return failed(format!("cannot create scratch dir: {e}")),
        };
        let mut child = match self.spawn(scratch.path()) {
            Ok(child) => child,
            Err(e) => return failed(format!("{}: {e}", self.command.program.display())),
        };
        let pid = child.id();
        debug!(pid, "runner spawned");

        let payload = request.to_wire();
        let mut stdin = child.stdin.take().expect("stdin piped");
        thread::spawn(move || {
            // A runner that exits without reading produces EPIPE here, which is fine.
            let _ = stdin.write_all(payload.as_bytes());
        });
        let stdout = drain(child.stdout.take().expect("stdout piped"));
        let stderr = drain(child.stderr.take().expect("stderr piped"));

        let timeout = request.timeout();
        let mut timed_out = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) => {}
                Err(e) => {
                    warn!(pid, "waiting on runner failed: {e}");
                    kill_group(pid);
                    break child.wait().ok();
                }
            }
            if start.elapsed() >= timeout {
                timed_out = true;
                kill_group(pid);
                break child.wait().ok();
            }
            thread::sleep(POLL_INTERVAL);
        };
        let elapsed = start.elapsed();
        // Stragglers in the group would otherwise hold the pipes open.
        kill_group(pid);

        let deadline = Instant::now() + KILL_GRACE;
        let collect = |rx: mpsc::Receiver<Vec<u8>>| {
            rx.recv_timeout(deadline.saturating_duration_since(Instant::now()))
                .unwrap_or_default()
        };
        let stdout = collect(stdout);
        let stderr = collect(stderr);

        let output = if timed_out {
            RunnerOutput::TimedOut { stdout, stderr }
        } else {
            RunnerOutput::Exited {
                exit_code: status.and_then(|s| s.code()),
                stdout,
                stderr,
            }
        };
        RunnerOutcome { output, elapsed }
    }
}
