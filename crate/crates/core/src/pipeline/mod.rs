//! Windowing, training, detection and persistence.

mod config;
mod detect;
mod model;
mod persist;
mod train;
mod windows;

pub use config::{RunConfig, ThresholdStrategy};
pub use detect::{adapt_and_score, detect, select_threshold, DetectionReport};
pub use model::{EpochRecord, ExpansionRecord, Model, TrainingHistory, MODEL_VERSION};
pub use persist::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use train::{combined_objective, train, Objective, StepOutcome, Trainer};
pub use windows::{make_windows, partition_segments, Scaler, WindowSet, WindowedSegment};
