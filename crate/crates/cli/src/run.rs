use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use codeact_core::agent::{PromptTemplate, Transcript};
use codeact_core::corpus::{builtin_fixtures, load_corpus, Corpus, CorpusFormat, Task};
use codeact_core::eval::{build_report, ResultRecord, RunReport};
use codeact_core::gateway::{
    load_script, ChatBackend, OpenAiCompatible, OpenAiConfig, ScriptedMock,
};
use codeact_core::sandbox::{
    default_pool_size, load_stub_table, ProcessRunner, Runner, RunnerCommand, Sandbox,
};
use codeact_core::strategy::{run_strategy, StrategyConfig, StrategyContext};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::config::{BackendKind, RunConfig, FIXTURES};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const CONFIG_FILE: &str = "config.resolved";
pub const META_FILE: &str = "run_meta.json";

/// One line of `transcripts.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub model: String,
    pub path: u32,
    #[serde(flatten)]
    pub transcript: Transcript,
}

/// Wall-clock facts kept out of the deterministic artifacts.
#[derive(Debug, Serialize)]
struct RunMeta {
    version: &'static str,
    started_at: String,
    finished_at: String,
    elapsed_s: f64,
    tasks_total: usize,
    tasks_run: usize,
    tasks_skipped: usize,
}

struct TaskOutput {
    records: Vec<ResultRecord>,
    transcripts: Vec<TranscriptRecord>,
}

pub fn load_tasks(corpus_path: &str) -> Result<Corpus> {
    if corpus_path == FIXTURES {
        return Ok(builtin_fixtures());
    }
    load_corpus(corpus_path, CorpusFormat::Jsonl)
        .with_context(|| format!("cannot load corpus {corpus_path}"))
}

fn build_backend(config: &RunConfig) -> Result<Box<dyn ChatBackend>> {
    match config.backend {
        BackendKind::Mock => {
            let path = config.script_path.as_ref().expect("validated");
            let script = load_script(path)
                .map_err(|e| anyhow!(e))
                .with_context(|| format!("cannot load mock script {}", path.display()))?;
            Ok(Box::new(ScriptedMock::new(script)?))
        }
        BackendKind::OpenaiCompatible => {
            let client = OpenAiCompatible::new(OpenAiConfig::new(&config.base_url, &config.model_name))?;
            client
                .probe()
                .with_context(|| format!("backend unreachable at {}", config.base_url))?;
            Ok(Box::new(client))
        }
    }
}

fn on_path(program: &Path) -> bool {
    if program.components().count() > 1 {
        return program.is_file();
    }
    std::env::var_os("PATH")
        .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
        .unwrap_or(false)
}

fn build_sandbox(config: &RunConfig) -> Result<Sandbox> {
    let runner: Arc<dyn Runner> = match (&config.runner, &config.stub_table) {
        (Some(line), _) => {
            let command = RunnerCommand::parse(line).ok_or_else(|| anyhow!("--runner is empty"))?;
            if !on_path(&command.program) {
                bail!("sandbox runner {} not found", command.program.display());
            }
            Arc::new(ProcessRunner::new(command))
        }
        (None, Some(path)) => Arc::new(
            load_stub_table(path)
                .map_err(|e| anyhow!(e))
                .with_context(|| format!("cannot load stub table {}", path.display()))?,
        ),
        (None, None) => bail!("no sandbox configured"),
    };
    Ok(Sandbox::new(runner, config.timeout_s, default_pool_size())?)
}

/// Reads the task ids already recorded in a previous run and drops any
/// incomplete tail so the files only hold whole tasks.
fn recover(out: &Path, config: &RunConfig) -> Result<HashSet<String>> {
    let results_path = out.join(RESULTS_FILE);
    let text = fs::read_to_string(&results_path)
        .with_context(|| format!("cannot read {}", results_path.display()))?;
    let mut lines: Vec<(&str, ResultRecord)> = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if !line.ends_with('\n') {
            warn!(line = i + 1, "dropping truncated record");
            break;
        }
        let record: ResultRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => bail!("{}:{}: unreadable record: {e}", results_path.display(), i + 1),
        };
        if record.model != config.model_name || record.result.strategy != config.strategy {
            bail!(
                "{} holds results for {} / {}, not {} / {}",
                results_path.display(),
                record.model,
                record.result.strategy,
                config.model_name,
                config.strategy
            );
        }
        lines.push((line, record));
    }
    let mut counts: HashMap<&str, u32> = HashMap::new();
    for (_, r) in &lines {
        *counts.entry(r.result.task_id.as_str()).or_default() += 1;
    }
    let done: HashSet<String> = counts
        .iter()
        .filter(|(_, &n)| n == config.num_paths)
        .map(|(id, _)| id.to_string())
        .collect();
    let kept: String = lines
        .iter()
        .filter(|(_, r)| done.contains(&r.result.task_id))
        .map(|(line, _)| *line)
        .collect();
    if kept.len() != text.len() {
        warn!("discarding partial task records from the previous run");
        replace(&results_path, &kept)?;
    }

    let transcripts_path = out.join(TRANSCRIPTS_FILE);
    if let Ok(text) = fs::read_to_string(&transcripts_path) {
        let kept: String = text
            .split_inclusive('\n')
            .filter(|line| line.ends_with('\n'))
            .filter(|line| {
                serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("task_id")?.as_str().map(|id| done.contains(id)))
                    .unwrap_or(false)
            })
            .collect();
        if kept.len() != text.len() {
            replace(&transcripts_path, &kept)?;
        }
    }
    Ok(done)
}

fn replace(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("cannot open {}", path.display()))
}

fn run_task(
    task: &Task,
    config: &RunConfig,
    strategy: &StrategyConfig,
    backend: &dyn ChatBackend,
    sandbox: &Sandbox,
) -> Result<TaskOutput> {
    let mut out = TaskOutput {
        records: Vec::new(),
        transcripts: Vec::new(),
    };
    for path in 0..config.num_paths {
        // Paths differ only by seed so repeated samples are independent.
        let mut params = config.sampling.clone();
        params.seed = params.seed.wrapping_add(i64::from(path));
        let ctx = StrategyContext {
            backend,
            sandbox,
            params: &params,
        };
        let (result, transcript) = run_strategy(task, ctx, strategy)
            .with_context(|| format!("task {}", task.id))?;
        info!(
            task = %task.id,
            path,
            passed = result.correct_c,
            samples = result.samples_n,
            "task finished"
        );
        out.records.push(ResultRecord {
            model: config.model_name.clone(),
            path,
            result,
        });
        if let Some(transcript) = transcript {
            out.transcripts.push(TranscriptRecord {
                model: config.model_name.clone(),
                path,
                transcript,
            });
        }
    }
    Ok(out)
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|item| serde_json::to_string(item).expect("record serializes") + "\n")
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ResultRecord = serde_json::from_str(line)
            .map_err(|e| anyhow!("schema mismatch at {}:{}: {e}", path.display(), i + 1))?;
        record
            .result
            .check()
            .map_err(|e| anyhow!("schema mismatch at {}:{}: {e}", path.display(), i + 1))?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_report(out: &Path, report: &RunReport) -> Result<()> {
    fs::write(out.join("report.md"), report.to_markdown())?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("report.json"), report.to_json() + "\n")?;
    Ok(())
}

/// Runs the configured strategy over the corpus and writes all artifacts.
pub fn cmd_run(config: &RunConfig, resume: bool) -> Result<RunReport> {
    let started = chrono::Utc::now();
    let clock = Instant::now();

    // Everything that can fail on configuration happens before the output directory is touched.
    let corpus = load_tasks(&config.corpus_path)?;
    let backend = build_backend(config)?;
    let sandbox = build_sandbox(config)?;
    let out = config.output_dir.clone();
    let results_path = out.join(RESULTS_FILE);
    let done = if results_path.exists() {
        if !resume {
            bail!(
                "{} already exists; pass --resume to continue that run or choose another --output",
                results_path.display()
            );
        }
        recover(&out, config)?
    } else {
        HashSet::new()
    };

    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), config.to_json())?;
    if done.is_empty() {
        File::create(out.join(TRANSCRIPTS_FILE))?;
    }
    let mut results = append(&results_path)?;
    let mut transcripts = append(&out.join(TRANSCRIPTS_FILE))?;

    let strategy = StrategyConfig {
        kind: config.strategy,
        samples: config.sampling.num_samples,
        budget: config.budget,
        exemplar_count: config.exemplar_count,
        template: PromptTemplate::agent(),
    };
    let pending: Vec<&Task> = corpus.tasks().iter().filter(|t| !done.contains(&t.id)).collect();
    if !done.is_empty() {
        info!(skipped = done.len(), remaining = pending.len(), "resuming");
    }

    let next = AtomicUsize::new(0);
    let workers = config.workers.min(pending.len()).max(1);
    let (tx, rx) = mpsc::channel::<(usize, Result<TaskOutput>)>();
    let mut failure: Option<anyhow::Error> = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending, strategy, backend, sandbox) =
                (&next, &pending, &strategy, backend.as_ref(), &sandbox);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = pending.get(i) else { break };
                let output = run_task(task, config, strategy, backend, sandbox);
                if tx.send((i, output)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder buffer: tasks are appended in corpus order, each in one write.
        let mut buffered: BTreeMap<usize, TaskOutput> = BTreeMap::new();
        let mut cursor = 0;
        for (i, output) in rx {
            match output {
                Ok(output) => {
                    buffered.insert(i, output);
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    next.store(pending.len(), Ordering::SeqCst);
                }
            }
            while failure.is_none() {
                let Some(output) = buffered.remove(&cursor) else { break };
                let written = transcripts
                    .write_all(jsonl(&output.transcripts).as_bytes())
                    .and_then(|_| results.write_all(jsonl(&output.records).as_bytes()))
                    .and_then(|_| results.flush());
                if let Err(e) = written {
                    failure = Some(anyhow!(e).context("cannot append results"));
                    next.store(pending.len(), Ordering::SeqCst);
                }
                cursor += 1;
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let records = read_records(&results_path)?;
    let report = build_report(&records, &config.ks)?;
    write_report(&out, &report)?;

    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION"),
        started_at: started.to_rfc3339(),
        finished_at: chrono::Utc::now().to_rfc3339(),
        elapsed_s: clock.elapsed().as_secs_f64(),
        tasks_total: corpus.len(),
        tasks_run: pending.len(),
        tasks_skipped: done.len(),
    };
    fs::write(out.join(META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(report)
}
