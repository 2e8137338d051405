//! Depth and pose metrics, the skip-k protocol and report assembly.

mod metrics;
mod protocol;
mod report;
mod trend;

pub use metrics::{depth_metrics, fit_scale_shift, pose_metrics, DepthFit, DepthFrame, DepthMetrics, PoseMetrics};
pub use protocol::{
    evaluate_nodes, node_estimates, protocol_inputs, run_skip_protocol, Method, NodeEstimate, Predictor,
    SequenceReport, SkipPlan, TauError,
};
pub use report::{
    evaluate_method, run_ablation, write_csv, write_json, AblationReport, AblationRow, Aggregate, MetricsReport,
};
pub use trend::{run_trend, synth_sequences, trend_check, TrendCheck, TrendOutcome, TrendRecipe};
