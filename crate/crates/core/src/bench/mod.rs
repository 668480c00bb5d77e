//! Multi-seed experiment harness and the statistics used to compare methods.

pub mod harness;
pub mod probe;
pub mod stats;

pub use harness::{
    diag_windows, lr_sweep, pair_correlation, paired_jobs, paired_seed_correlation, run_jobs, run_seed, run_with_seeds,
    saturation_report, sparse_q_report, summarize, CurvePoint, Job, LrRow, PairedCorrelation, RunOptions, RunOutput,
    RunRecord, SaturationReport, SparseQPoint, SATURATION_LEVEL, STUCK_FRACTION,
};
pub use probe::{evaluate_policy, evaluation_seeds, random_action_probe, ProbeRow};
pub use stats::{eval_gain_ratio, pearson, performance_profile, summarize_scores, variance_decomposition, ProfilePoint, SummaryStats, VarDecomp};
