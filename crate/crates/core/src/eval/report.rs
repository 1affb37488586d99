use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{pass_at_k_aggregate, EvalError, SampleTally};
use crate::strategy::StrategyResult;

/// One line of `results.jsonl`: a strategy result tagged with its model and sample path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub model: String,
    /// Index of the independent repetition this result belongs to.
    pub path: u32,
    #[serde(flatten)]
    pub result: StrategyResult,
}

/// Score for one (model, strategy, k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub strategy: String,
    pub k: u32,
    pub score: f64,
    pub task_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub strategy: String,
    pub task_count: usize,
    /// Score per requested k, aligned with [`RunReport::ks`].
    pub scores: Vec<f64>,
}

/// Strategy comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub ks: Vec<u32>,
    pub rows: Vec<ReportRow>,
}

/// Tallies for one (model, strategy) group.
#[derive(Debug, Clone, PartialEq)]
pub struct TallyGroup {
    pub model: String,
    pub strategy: String,
    pub tallies: Vec<SampleTally>,
}

/// Folds result records into per-task tallies grouped by (model, strategy).
///
/// Repeated paths for the same task add up. Groups keep first-seen order.
pub fn tally_records(records: &[ResultRecord]) -> Vec<TallyGroup> {
    let mut groups: Vec<TallyGroup> = Vec::new();
    let mut group_index: HashMap<(String, String), usize> = HashMap::new();
    let mut task_index: HashMap<(usize, String), usize> = HashMap::new();
    for record in records {
        let strategy = record.result.strategy.as_str().to_string();
        let key = (record.model.clone(), strategy.clone());
        let g = *group_index.entry(key).or_insert_with(|| {
            groups.push(TallyGroup {
                model: record.model.clone(),
                strategy,
                tallies: Vec::new(),
            });
            groups.len() - 1
        });
        let (n, c) = record.result.scored_tally();
        let tallies = &mut groups[g].tallies;
        let t = *task_index
            .entry((g, record.result.task_id.clone()))
            .or_insert_with(|| {
                tallies.push(SampleTally {
                    task_id: record.result.task_id.clone(),
                    n: 0,
                    c: 0,
                });
                tallies.len() - 1
            });
        tallies[t].n += n;
        tallies[t].c += c;
    }
    groups
}

/// Builds the report from tally groups. Rows are ordered by model (first
/// seen), then by score at the first k, descending.
pub fn build_report_from_tallies(groups: &[TallyGroup], ks: &[u32]) -> Result<RunReport, EvalError> {
    if ks.is_empty() {
        return Err(EvalError::ZeroK);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for group in groups {
        let scores = ks
            .iter()
            .map(|&k| pass_at_k_aggregate(&group.tallies, k))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(ReportRow {
            model: group.model.clone(),
            strategy: group.strategy.clone(),
            task_count: group.tallies.len(),
            scores,
        });
    }
    let mut model_order: HashMap<String, usize> = HashMap::new();
    for row in &rows {
        let next = model_order.len();
        model_order.entry(row.model.clone()).or_insert(next);
    }
    rows.sort_by(|a, b| {
        model_order[&a.model]
            .cmp(&model_order[&b.model])
            .then(b.scores[0].total_cmp(&a.scores[0]))
    });
    Ok(RunReport {
        ks: ks.to_vec(),
        rows,
    })
}

pub fn build_report(records: &[ResultRecord], ks: &[u32]) -> Result<RunReport, EvalError> {
    build_report_from_tallies(&tally_records(records), ks)
}

#[derive(Serialize)]
struct JsonReport<'a> {
    rows: &'a [MetricRow],
}

impl RunReport {
    /// One row per (model, strategy, k).
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        self.rows
            .iter()
            .flat_map(|row| {
                self.ks.iter().zip(&row.scores).map(|(&k, &score)| MetricRow {
                    model: row.model.clone(),
                    strategy: row.strategy.clone(),
                    k,
                    score,
                    task_count: row.task_count,
                })
            })
            .collect()
    }

    /// Markdown table with scores as percentages to one decimal place.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Model | Method |");
        for k in &self.ks {
            out.push_str(&format!(" pass@{k} (%) |"));
        }
        out.push_str(" Tasks |\n|---|---|");
        for _ in &self.ks {
            out.push_str("---:|");
        }
        out.push_str("---:|\n");
        for row in &self.rows {
            out.push_str(&format!("| {} | {} |", escape_md(&row.model), escape_md(&row.strategy)));
            for score in &row.scores {
                out.push_str(&format!(" {} |", format_percent(*score)));
            }
            out.push_str(&format!(" {} |\n", row.task_count));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in self.metric_rows() {
            writer.serialize(&row).expect("in-memory csv write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    /// `{"rows": [{model, strategy, k, score, task_count}, ...]}`
    pub fn to_json(&self) -> String {
        let rows = self.metric_rows();
        serde_json::to_string_pretty(&JsonReport { rows: &rows }).expect("report serializes")
    }
}

pub fn format_percent(score: f64) -> String {
    format!("{:.1}", score * 100.0)
}

fn escape_md(text: &str) -> String {
    text.replace('|', "\\|")
}
