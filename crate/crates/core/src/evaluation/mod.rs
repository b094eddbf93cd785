//! Metrics, cross-validation splits, protocol runners and sweeps.

mod folds;
mod metrics;
mod protocol;

pub use folds::{kfold_split, Fold};
pub use metrics::{metrics, summarize, Cell, ConfusionCounts, Metrics, MetricsReport, ReportRow, Summary};
pub use protocol::{
    audit_disjoint, run_inter_subject, run_inter_subject_target, run_intra_subject, sweep_channel_schemes,
    sweep_time_kernels, Dataset, InterRun, KernelSweep, ProtocolConfig, ProtocolReport, SchemeSweep, SubjectData,
};
