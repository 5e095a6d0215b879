//! Allocation-only core of the TMJ involvement pipeline.
//!
//! Everything in this crate is pure computation over in-memory data: the
//! longitudinal cohort model and its synthetic generator, feature
//! engineering, the three sampling strategies, a CART random forest,
//! split-conformal RAPS prediction sets, path-dependent TreeSHAP and the
//! classification metrics. File formats, parallel training, the CLI and
//! the HTTP service live in the `tmj` companion crate.

#![no_std]

extern crate alloc;

pub mod cohort;
pub mod conformal;
pub mod explain;
pub mod forest;
pub mod matrix;
pub mod metrics;
pub mod preprocess;
pub mod rng;
pub mod sampling;
pub mod schema;
pub mod synth;

pub use cohort::{Cohort, CohortError, CohortSummary, ExamRecord, Gender, Label, Patient, Value};
pub use conformal::{CalibratedThreshold, ConformalConfig, ConformalError, PredictionSet};
pub use explain::{Attribution, ExplainError, SummaryData};
pub use forest::{Forest, ForestError, ForestHyperparams, Tree};
pub use matrix::Matrix;
pub use metrics::{ClassMetrics, MetricsError};
pub use preprocess::{EncoderState, PreprocessError, SplitAssignment};
pub use sampling::{RawSampleSet, SampleSet, StrategyTag};
pub use schema::{FeatureKind, FeatureSchema, FeatureSpec, SchemaError, Side};
pub use synth::SynthesisConfig;
