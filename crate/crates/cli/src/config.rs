//! Run configuration: defaults, optional JSON file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use codeact_core::agent::LoopBudget;
use codeact_core::gateway::SamplingParams;
use codeact_core::sandbox::DEFAULT_TIMEOUT_S;
use codeact_core::strategy::{StrategyKind, DEFAULT_EXEMPLAR_COUNT};
use serde::{Deserialize, Serialize};

/// Corpus path value that selects the built-in fixture tasks.
pub const FIXTURES: &str = "fixtures";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum BackendKind {
    OpenaiCompatible,
    Mock,
}

/// Everything a run needs. Serialized verbatim to `config.resolved`.
///
/// The API key is deliberately absent; it is read from the environment only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: String,
    pub backend: BackendKind,
    pub base_url: String,
    pub model_name: String,
    pub strategy: StrategyKind,
    pub sampling: SamplingParams,
    pub budget: LoopBudget,
    /// Independent repetitions per task, feeding pass@k.
    pub num_paths: u32,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub ks: Vec<u32>,
    pub timeout_s: f64,
    pub exemplar_count: usize,
    /// Mock backend script (JSONL).
    pub script_path: Option<PathBuf>,
    /// Command line that starts one sandbox runner process.
    pub runner: Option<String>,
    /// Canned verdicts keyed by code, used instead of a runner process.
    pub stub_table: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_path: FIXTURES.to_string(),
            backend: BackendKind::OpenaiCompatible,
            base_url: "http://localhost:8000".to_string(),
            model_name: "Qwen/Qwen3-8B".to_string(),
            strategy: StrategyKind::CodeactAgent,
            sampling: SamplingParams::default(),
            budget: LoopBudget::default(),
            num_paths: 1,
            workers: 4,
            output_dir: PathBuf::from("runs/latest"),
            ks: vec![1],
            timeout_s: DEFAULT_TIMEOUT_S,
            exemplar_count: DEFAULT_EXEMPLAR_COUNT,
            script_path: None,
            runner: None,
            stub_table: None,
        }
    }
}

/// Flag values that override the file and the defaults when present.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct RunOverrides {
    /// JSON file with the same schema as config.resolved
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus JSONL path, or "fixtures" for the built-in tasks
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    /// pass@k values to report; repeat or comma-separate
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<u32>,
    #[arg(long)]
    pub num_paths: Option<u32>,
    #[arg(long)]
    pub max_iterations: Option<u32>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub timeout_s: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub seed: Option<i64>,
    /// Samples per task for self_consistency and majority_voting
    #[arg(long)]
    pub samples: Option<u32>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Mock backend script (JSONL)
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Sandbox runner command line, e.g. "python3 -I runner.py"
    #[arg(long)]
    pub runner: Option<String>,
    /// Canned verdict table (JSONL) used instead of a runner process
    #[arg(long)]
    pub stub_table: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))
    }

    /// Defaults, then the config file if given, then flags.
    pub fn resolve(flags: &RunOverrides) -> Result<Self> {
        let mut config = match &flags.config {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        config.apply(flags);
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, f: &RunOverrides) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        set(&mut self.corpus_path, &f.corpus);
        set(&mut self.backend, &f.backend);
        set(&mut self.base_url, &f.base_url);
        set(&mut self.model_name, &f.model);
        set(&mut self.strategy, &f.strategy);
        if !f.k.is_empty() {
            self.ks = f.k.clone();
        }
        set(&mut self.num_paths, &f.num_paths);
        set(&mut self.budget.max_iterations, &f.max_iterations);
        set(&mut self.budget.max_retries, &f.max_retries);
        set(&mut self.timeout_s, &f.timeout_s);
        set(&mut self.sampling.temperature, &f.temperature);
        set(&mut self.sampling.top_p, &f.top_p);
        set(&mut self.sampling.max_tokens, &f.max_tokens);
        set(&mut self.sampling.seed, &f.seed);
        set(&mut self.sampling.num_samples, &f.samples);
        set(&mut self.workers, &f.workers);
        set(&mut self.output_dir, &f.output);
        if f.script.is_some() {
            self.script_path = f.script.clone();
        }
        if f.runner.is_some() {
            self.runner = f.runner.clone();
        }
        if f.stub_table.is_some() {
            self.stub_table = f.stub_table.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate().map_err(anyhow::Error::msg)?;
        self.budget.validate().map_err(anyhow::Error::msg)?;
        if self.num_paths == 0 {
            bail!("num_paths must be at least 1");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            bail!("timeout_s must be positive, got {}", self.timeout_s);
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            bail!("every k must be at least 1");
        }
        // Each path contributes one scored sample per task.
        if let Some(&k) = self.ks.iter().find(|&&k| k > self.num_paths) {
            bail!("k = {k} needs at least {k} samples per task; raise --num-paths (currently {})", self.num_paths);
        }
        if self.strategy == StrategyKind::FewShot && self.exemplar_count == 0 {
            bail!("few_shot needs exemplar_count >= 1");
        }
        if self.backend == BackendKind::Mock && self.script_path.is_none() {
            bail!("the mock backend needs --script");
        }
        match (&self.runner, &self.stub_table) {
            (None, None) => bail!("no sandbox configured: pass --runner or --stub-table"),
            (Some(_), Some(_)) => bail!("--runner and --stub-table are mutually exclusive"),
            _ => {}
        }
        if let Some(runner) = &self.runner {
            if runner.trim().is_empty() {
                bail!("--runner is empty");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stubbed() -> RunOverrides {
        RunOverrides {
            stub_table: Some("t.jsonl".into()),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::resolve(&stubbed()).unwrap();
        assert_eq!(c.sampling.temperature, 0.7);
        assert_eq!(c.sampling.top_p, 0.9);
        assert_eq!(c.sampling.max_tokens, 8192);
        assert_eq!(c.sampling.repetition_penalty, 1.05);
        assert_eq!(c.sampling.seed, 42);
        assert_eq!(c.sampling.best_of, 1);
        assert_eq!(c.sampling.num_samples, 5);
        assert_eq!(c.budget, LoopBudget { max_iterations: 10, max_retries: 25 });
        assert_eq!(c.timeout_s, 5.0);
        assert_eq!(c.ks, [1]);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"sampling": {"temperature": 0.2, "top_p": 0.5}, "workers": 2, "stub_table": "x"}"#).unwrap();
        let flags = RunOverrides {
            config: Some(path),
            temperature: Some(0.0),
            ..Default::default()
        };
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!(c.sampling.temperature, 0.0);
        assert_eq!(c.sampling.top_p, 0.5);
        assert_eq!(c.sampling.max_tokens, 8192);
        assert_eq!(c.workers, 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"api_key": "sk-nope"}"#).unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn invalid_combinations() {
        let mut flags = stubbed();
        flags.k = vec![5];
        assert!(RunConfig::resolve(&flags).unwrap_err().to_string().contains("num-paths"));
        flags.num_paths = Some(5);
        assert!(RunConfig::resolve(&flags).is_ok());

        let mut flags = stubbed();
        flags.backend = Some(BackendKind::Mock);
        assert!(RunConfig::resolve(&flags).unwrap_err().to_string().contains("--script"));

        assert!(RunConfig::resolve(&RunOverrides::default()).is_err());
        let mut flags = stubbed();
        flags.max_iterations = Some(0);
        assert!(RunConfig::resolve(&flags).is_err());
    }

    #[test]
    fn resolved_json_round_trips() {
        let c = RunConfig::resolve(&stubbed()).unwrap();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!(!c.to_json().to_lowercase().contains("key"));
    }
}
