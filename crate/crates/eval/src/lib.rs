//! Binary classification metrics, ROC/AUC and plain-text report files.

pub mod error;
pub mod metrics;
pub mod report;
pub mod roc;

pub use error::{EvalError, Result};
pub use metrics::{compute_metrics, confusion, ClassMetrics, ConfusionCounts, MetricsReport};
pub use report::{emit_report, format_metrics, format_roc, parse_metrics, parse_roc, read_metrics, read_roc};
pub use roc::{roc_auc, RocCurve, RocPoint};
