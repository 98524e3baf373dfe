//! Slide-level metrics, bootstrap intervals, paired tests and the evaluation report.

mod bootstrap;
mod metrics;
mod report;
mod stats;

pub use bootstrap::{bootstrap_ci, bootstrap_ci_with, percentile, uniform_resample, BootstrapResult, Interval};
pub use metrics::{
    argmax, balanced_accuracy, binary_auroc, confusion_matrix, macro_auroc, macro_f1, Metric, PredictionSet,
};
pub use report::{compare, evaluate, Comparison, EvalReport, Evaluation, MetricTable, StatsTable};
pub use stats::{bh_adjust, paired_t_test, Degenerate, TTest};
