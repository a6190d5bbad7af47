//! Soft-voting ensemble and policy search over its weights.

mod optimize;
mod policy;
mod soft_vote;

pub use optimize::{
    optimize_weights, write_trace_csv, write_weight_report, OptimizeConfig, OptimizeResult, TraceRow,
    WeightReportRow, DEFAULT_EPISODES_PER_UPDATE, DEFAULT_RL_STEPS,
};
pub use policy::{
    clipped_objective, gaussian_log_prob, surrogate, surrogate_gradient, Episode, UpdateStats, WeightPolicy,
    WeightSample, DEFAULT_BASELINE_DECAY, DEFAULT_CLIP_EPS, DEFAULT_PASSES, DEFAULT_POLICY_LR, LOG_STD_RANGE,
};
pub use soft_vote::{soft_vote, vote_macro_f1, LogitPanel, Vote, WeightVector, SIMPLEX_TOLERANCE};
