//! Runs of the ListOps tagger: configuration, datasets, checkpoints and training.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod train;

pub use checkpoint::{Checkpoint, TrainingState};
pub use config::{Profile, RunConfig, PRESETS};
pub use data::{read_manifest, read_split, write_dataset, Manifest};
pub use train::{score, train, train_on, EpochRecord, Metrics, Prediction, RunSummary, Tagger};
