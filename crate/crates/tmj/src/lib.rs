//! File formats, parallel training, the experiment harness, the `tmj`
//! command line and the HTTP service around `tmj-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod manifest;
pub mod model;
pub mod plot;
pub mod service;

pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use model::{PredictRequest, PredictResponse, TrainedModel};
