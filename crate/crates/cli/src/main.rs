//! `codeact`: run prompting strategies over a code-generation benchmark and report pass@k.

mod config;
mod report;
mod run;

use std::io::{IsTerminal, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use codeact_core::corpus::lint_bytes;
use tracing_subscriber::EnvFilter;

use crate::config::{RunConfig, RunOverrides, FIXTURES};

#[derive(Parser)]
#[command(name = "codeact", version, about)]
struct Cli {
    /// More log output (repeat for more)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Run one strategy over a corpus and write transcripts, results and a report
    Run {
        #[command(flatten)]
        flags: RunOverrides,
        /// Continue a run whose results.jsonl already exists, skipping recorded tasks
        #[arg(long)]
        resume: bool,
        /// Print the resolved configuration and exit
        #[arg(long)]
        dry_run: bool,
    },
    /// Merge results.jsonl files into one comparison table
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        k: Vec<u32>,
        /// Directory for report.md, report.csv and report.json
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a corpus file without contacting any backend
    Validate {
        #[arg(long, default_value = FIXTURES)]
        corpus: String,
    },
    /// Print the built-in fixture tasks as JSONL
    Fixtures {
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
}

fn validate(corpus: &str) -> Result<ExitCode> {
    let bytes = if corpus == FIXTURES {
        codeact_core::corpus::builtin_fixtures().to_jsonl().into_bytes()
    } else {
        std::fs::read(corpus).with_context(|| format!("cannot read {corpus}"))?
    };
    let (ok, diagnostics) = lint_bytes(&bytes);
    if diagnostics.is_empty() {
        println!("{ok} tasks OK");
        return Ok(ExitCode::SUCCESS);
    }
    for d in &diagnostics {
        println!("{corpus}: {d}");
    }
    println!("{ok} tasks OK, {} problems", diagnostics.len());
    Ok(ExitCode::FAILURE)
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            flags,
            resume,
            dry_run,
        } => {
            let config = RunConfig::resolve(&flags)?;
            if dry_run {
                print!("{}", config.to_json());
                return Ok(ExitCode::SUCCESS);
            }
            let report = run::cmd_run(&config, resume)?;
            print!("{}", report.to_markdown());
            eprintln!("artifacts written to {}", config.output_dir.display());
        }
        Command::Report { results, k, output } => {
            let report = report::cmd_report(&results, &k, output.as_deref())?;
            print!("{}", report.to_markdown());
        }
        Command::Validate { corpus } => return validate(&corpus),
        Command::Fixtures { output } => {
            let text = codeact_core::corpus::builtin_fixtures().to_jsonl();
            match output {
                Some(path) => std::fs::write(&path, text)
                    .with_context(|| format!("cannot write {}", path.display()))?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match real_main(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
