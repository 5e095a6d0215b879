//! Feature engineering fitted on training rows only.
//!
//! Fixed order per row: drug classification, left/right merging, age/gender
//! deviation of the growth-dependent measurements, scalar embedding of
//! nominal variables, then z-scoring of every retained column.

pub mod deviation;
pub mod drug;
pub mod embedding;
pub mod encoder;
pub mod sides;
pub mod split;

use alloc::string::String;
use thiserror::Error;

pub use deviation::{age_gender_deviation, ReferenceTable};
pub use drug::{classify_drug, DrugClass, DrugMap};
pub use encoder::{fit_encoders, EncoderState, LayoutEntry, PreprocessOptions, Source};
pub use sides::merge_sides;
pub use split::{split_patients, split_rows, RowSplit, SplitAssignment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("no training rows")]
    Empty,
    #[error("unmapped drug token `{0}`")]
    UnmappedDrug(String),
    #[error("need at least 3 patients to split, found {0}")]
    TooFewPatients(usize),
    #[error("split fractions must be non-negative and sum to 1")]
    Fractions,
    #[error("row has {found} exam blocks, encoder expects {expected}")]
    BlockCount { expected: usize, found: usize },
    #[error("row has {found} values per block, encoder expects {expected}")]
    Width { expected: usize, found: usize },
    #[error("unsupported encoder format version {0}")]
    Version(u32),
}
