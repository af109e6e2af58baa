//! Config files, run registry and the end-to-end pipeline.

mod config;
mod registry;
mod runner;

pub use config::{
    DataSection, ExperimentConfig, ModelKind, ModelSection, ModelSpec, ResolvedConfig, SchemaKind,
    TrainSection,
};
pub use registry::{content_hash, ExperimentRecord, Registry, REGISTRY_ENV, REGISTRY_FILE};
pub use runner::{
    build_model, load_series, prepare_data, run_compare, run_evaluation, run_export_plot_data,
    run_prepare, run_training, CheckpointManifest, PreparedData, RunOutcome, SegmentInfo,
    SplitManifest, CHECKPOINT_FILE, HISTORY_FILE, MANIFEST_FILE, METRICS_FILE, PREDICTIONS_FILE,
    RESOLVED_FILE,
};
