//! Manifest ingestion, splits, stage-1 training, feature fusion, stage-2
//! training and evaluation reporting.

mod config;
mod fusion;
mod metrics;
mod records;
mod run;
mod split;

pub use fusion::{
    assemble_fused, assemble_true_labels, clinician_rows, fused_feature_specs, FusedRow, FusionMode, FUSION_VERSION,
};
pub use metrics::{
    aggregate, compute_metrics, f1_score, metrics_csv_rows, AggregateReport, ClassAggregate, ClassMetrics,
    EvaluationReport, MeanStd,
};
pub use records::{
    class_counts, load_manifest, manifest_header, resolve_image, stratum_of, write_manifest, ClinicianSchema,
    ClinicianType, ClinicianVariable, Outcome, WoundRecord, CLINICIAN_SCHEMA_VERSION,
};
pub use split::{kfold, largest_remainder, stratified_split, SplitIndices, SplitSpec};
pub use config::{env_overrides, DataConfig, FusionConfig, RunConfig, ENV_PREFIX};
pub use run::{
    derive_seed, evaluate_run, fit_outcome_model, load_ensemble, load_image_tensor, load_run_models, outcome_report,
    predict_image, predict_indices, predict_run, read_json, rgb_to_tensor, run_crossval, run_pipeline, stage1_reports, stage1_specs,
    train_stage1, CrossvalReport, LeakageAudit, LeakageReport, ModelSpec, PredictionRecord, RunInfo, RunLog,
    RunReport, SplitIds, SplitSummary, TestEvaluation, TrainingSummary, BASELINE_GBM_FILE, CONFIG_FILE, CROSSVAL_FILE,
    GBM_FILE, HEATMAP_DIR, LEAKAGE_FILE, LOG_FILE, METRICS_FILE, MODELS_DIR, PREDICT_BATCH, REPORT_FILE,
    RUN_FILE, RUN_FORMAT_VERSION, SPLITS_FILE, TEST_MANIFEST_FILE, TEST_REPORT_FILE,
};
