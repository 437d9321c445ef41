//! Correlation alignment (CORAL) for unsupervised domain adaptation on
//! feature vectors.
//!
//! The crate implements the full method end to end:
//!
//! * [`coral`] — batch covariance, the CORAL loss
//!   `‖C_S - C_T‖²_F / (4 d²)`, and its analytic gradients with respect to
//!   both feature batches;
//! * [`net`] — a small feed-forward classifier with explicit forward and
//!   backward passes, tap points for attaching CORAL penalties to layer
//!   activations, and SGD with momentum and weight decay;
//! * [`trainer`] — dual-stream joint training (classification loss on
//!   labeled source batches, CORAL losses between source and target
//!   activations through shared parameters), lambda calibration, and
//!   metrics logging;
//! * [`data`] — synthetic domain-shift generation, CSV ingestion, and
//!   deterministic batching;
//! * [`gradcheck`] — central-finite-difference verification of every
//!   analytic gradient;
//! * [`experiment`] / [`config`] — reproducible file-level runs driven by a
//!   flat key=value config whose hash is embedded in every artifact.
//!
//! Everything is `f64`, seeded, and deterministic: identical configs produce
//! byte-identical metrics logs and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod coral;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod matrix;
pub mod net;
pub mod plot;
pub mod trainer;

pub use config::ExperimentConfig;
pub use coral::{coral_distance, coral_grad, coral_loss, covariance, frobenius_sq, CoralGrad, Covariance};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use net::{class_loss_and_grad, init_network, LabelBatch, Network, Velocity};
pub use trainer::{
    calibrate_lambda, evaluate, joint_loss, run_experiment, run_source_only, train_step,
    DomainBatch, MetricsRecord, TrainConfig,
};
