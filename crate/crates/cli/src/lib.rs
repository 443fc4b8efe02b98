//! Reproducible experiments on synthetic scenes: bundle synthesis,
//! correspondence preprocessing, triangulation, training, evaluation and the
//! noise ablation, each reading and writing one output directory.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_ablate_noise, cmd_eval, cmd_preprocess, cmd_synth, cmd_train, cmd_triangulate, load_bundle, load_scene,
    AblationRow, CloudSummary, Layout, SynthSummary, TrainSummary,
};
pub use config::{key_listing, ExperimentConfig, Precision};
pub use error::CliError;
