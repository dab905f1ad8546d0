//! Evaluation protocol, experiment configuration and reporting.

mod config;
mod protocol;
mod report;
mod stats;

pub use config::{ClassSplitConfig, ExperimentConfig, Method, ProtocolConfig, ReportConfig};
pub use protocol::{aggregate, dataset_task, evaluate_tasks, run_protocol, MethodRun, ProtocolOutput, Runner, TaskResult};
pub use report::{
    accuracy_csv, emit_report, summarize, CdDiagram, CdMethod, PairWtl, ReportSummary, ACCURACY_FILE, CD_FILE,
    SUMMARY_FILE,
};
pub use stats::{
    cliques, friedman_statistic, nemenyi_cd, rank_descending, wtl_counts, Friedman, RankTable, Wtl, WTL_TOLERANCE,
};
