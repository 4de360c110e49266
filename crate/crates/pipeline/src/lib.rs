//! Dataset handling, feature caching, checkpoints, training loops and the
//! subcommands behind the `distillfuse` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod prepare;
pub mod synth;
pub mod train;

pub use checkpoint::{load_model, save_model, Checkpoint, Model, ModelKind, QuantizedAudioTeacher};
pub use commands::{run_command, Command};
pub use config::RunConfig;
pub use dataset::{load_dataset, DatasetManifest, Entry, Split};
pub use error::{PipelineError, Result};
pub use evaluate::{evaluate_model, Evaluation};
pub use prepare::{load_prepared, preprocess, Example, FeatureNorm, PreparedData};
pub use synth::{synth_cues, synth_generate, Cues};
