//! End-to-end driver: manifest and proposal ingestion, then train, embed,
//! index, retrieve, evaluate and collage stages that hand artifacts to each
//! other through files in one output directory.

mod config;
mod manifest;
mod stages;

pub use config::{
    ConfigError, ConfigKey, MaskMode, PipelineConfig, Settings, CONFIG_KEYS, SEED_ENV,
};
pub use manifest::{split_dataset, Manifest, ManifestError, ManifestRecord, Split};
pub use stages::{
    ingest, load_records, representatives, run_pipeline, run_stage, Artifacts, IngestOptions,
    IngestedProposal, PipelineError, Stage, StageError, StageTiming,
};
