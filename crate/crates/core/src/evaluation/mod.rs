//! Metrics, ablation runs, and result tables.

pub mod ablation;
pub mod metrics;
pub mod report;

pub use ablation::{ablation_for_seed, aggregate, panel_ablation, run_ablation, tuned_vote, AblationConfig, PanelSplit, VariantScore};
pub use metrics::{confusion, macro_f1, mean_std, Confusion};
pub use report::{EvalReport, EvalRow, REPORT_COLUMNS, ZERO_DIVISION_NOTE};
