//! Stability-aware clustering, per-cluster characteristic mixtures, typical
//! scenario selection, coverage and distance-based stability prediction.

mod cluster;
mod labels;
mod run;
mod typical;

pub use cluster::{cluster_scenarios, silhouette, ClusterModel, AUTO_K, KMEANS_MAX_ITERATIONS, KMEANS_RESTARTS};
pub use labels::{
    evaluate_predictions, StabilityClass, StageMetrics, TSI_UNSTABLE_BELOW, V_SEVERITY_UNSTABLE_ABOVE,
};
pub use run::{
    characteristic_matrix, characterize_scenarios, classes, embed_network, index_matrix, predict_scenarios,
    resolve_fault, run_pipeline, simulate_scenarios, EvaluatedBatch, FaultChoice, PipelineOutcome,
    PredictionReport, PredictionRow, RunSettings, REPORT_SCHEMA_VERSION, TSI_COLUMN,
};
pub use typical::{
    build_typical_set, coverage_rate, fit_cluster_gmms, mahalanobis, max_pairwise_distance, select_typical,
    weighted_mahalanobis, Coverage, IndexRange, TypicalCluster, TypicalScenarioSet, DEFAULT_COVERAGE_THRESHOLD,
    DEFAULT_MAX_COMPONENTS, MIN_MIXTURE_MEMBERS, TYPICAL_SET_SCHEMA_VERSION,
};
