//! Experiment orchestration: configs, the acquisition loop, reports and the
//! command line.

mod cli;
mod config;
mod report;
mod run;

pub use cli::{run_cli, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
pub use config::{
    ArchConfig, DatasetSpec, ExperimentConfig, ImbalanceSpec, InitChoice, MethodConfig, Precision, PretrainConfig,
};
pub use report::{aggregate, aggregate_files, mean_std, read_report, write_summary, ReportRow, SummaryRow};
pub use run::{
    evaluate_ensemble, pretrain_body, run_experiment, write_outcome, AbortedArm, ConfusionMatrix, PerClassRow,
    PretrainRow, RunOutcome, SelectionLine, ABORTED_FILE, CONFIG_FILE, CONFUSION_DIR, PER_CLASS_FILE, PRETRAIN_FILE,
    REPORT_FILE, SELECTIONS_FILE, SUMMARY_FILE,
};

#[cfg(test)]
mod tests;
