use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use codeact_core::eval::{build_report, RunReport};

use crate::run::{read_records, write_report};

/// Merges results files from separate runs into one comparison table.
pub fn cmd_report(inputs: &[PathBuf], ks: &[u32], output: Option<&Path>) -> Result<RunReport> {
    if inputs.is_empty() {
        bail!("no results files given");
    }
    // Each (model, strategy) pair must come from exactly one input.
    let mut owner: HashMap<(String, String), usize> = HashMap::new();
    let mut all = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let records = read_records(input)?;
        for record in &records {
            let key = (record.model.clone(), record.result.strategy.to_string());
            let first = *owner.entry(key.clone()).or_insert(i);
            if first != i {
                bail!(
                    "{} / {} appears in both {} and {}; refusing to merge",
                    key.0,
                    key.1,
                    inputs[first].display(),
                    input.display()
                );
            }
        }
        all.extend(records);
    }
    if all.is_empty() {
        bail!("results files contain no records");
    }
    let report = build_report(&all, ks).context("cannot score results")?;
    if let Some(dir) = output {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_report(dir, &report)?;
    }
    Ok(report)
}
