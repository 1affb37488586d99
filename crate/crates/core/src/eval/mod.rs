//! pass@k estimation and report rendering.

mod pass_at_k;
mod report;

pub use pass_at_k::{pass_at_k, pass_at_k_aggregate, pass_at_k_single, EvalError, SampleTally};
pub use report::{
    build_report, build_report_from_tallies, format_percent, tally_records, MetricRow, ReportRow,
    ResultRecord, RunReport, TallyGroup,
};
