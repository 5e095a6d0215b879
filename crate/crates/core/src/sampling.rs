//! Sampling strategies that flatten a longitudinal cohort into rows: every
//! exam independently, exams grouped by time since the first visit, and
//! exams augmented with the values of previous visits.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, ExamRecord, Gender, Label, Patient, Value};
use crate::matrix::Matrix;
use crate::schema::{FeatureSchema, SchemaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum StrategyTag {
    Iid,
    Temporal { segment: usize },
    Lagged { k: usize },
}

impl StrategyTag {
    pub fn lags(&self) -> usize {
        match self {
            StrategyTag::Lagged { k } => *k,
            _ => 0,
        }
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyTag::Iid => f.write_str("iid"),
            StrategyTag::Temporal { segment } => write!(f, "temporal segment {segment}"),
            StrategyTag::Lagged { k } => write!(f, "lagged k={k}"),
        }
    }
}

/// Raw values of one examination, aligned with the sample set's base features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBlock {
    pub age: f64,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub patient_id: String,
    pub exam_index: usize,
    pub gender: Gender,
    pub exam_time: f64,
    /// Block 0 is the current exam, block `j` the exam `j` visits earlier.
    pub blocks: Vec<RawBlock>,
    pub label: Label,
}

/// Rows of raw values produced by a strategy, before feature engineering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSampleSet {
    /// Schema restricted to the base feature subset.
    pub schema: FeatureSchema,
    pub lags: usize,
    pub strategy: StrategyTag,
    pub rows: Vec<RawRow>,
    /// Exams beyond the last boundary that were clamped into the last segment.
    pub clamped: usize,
}

pub fn lag_suffix(name: &str, block: usize) -> String {
    if block == 0 {
        String::from(name)
    } else {
        format!("{name}_lag{block}")
    }
}

impl RawSampleSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn base_features(&self) -> Vec<String> {
        self.schema.names()
    }

    /// Raw column count: base features times `lags + 1`.
    pub fn d(&self) -> usize {
        self.schema.len() * (self.lags + 1)
    }

    pub fn feature_names(&self) -> Vec<String> {
        let base = self.base_features();
        (0..=self.lags).flat_map(|b| base.iter().map(move |n| lag_suffix(n, b))).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Rows whose patient passes `keep`, preserving order.
    pub fn filter_patients(&self, mut keep: impl FnMut(&str) -> bool) -> RawSampleSet {
        RawSampleSet {
            schema: self.schema.clone(),
            lags: self.lags,
            strategy: self.strategy,
            rows: self.rows.iter().filter(|r| keep(&r.patient_id)).cloned().collect(),
            clamped: self.clamped,
        }
    }

    pub fn select(&self, idx: &[usize]) -> RawSampleSet {
        RawSampleSet {
            schema: self.schema.clone(),
            lags: self.lags,
            strategy: self.strategy,
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            clamped: self.clamped,
        }
    }
}

/// Encoded design matrix with labels and per-row provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub x: Matrix,
    pub y: Vec<Label>,
    pub feature_names: Vec<String>,
    /// (patient_id, exam_index) per row
    pub provenance: Vec<(String, usize)>,
    pub strategy: StrategyTag,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn d(&self) -> usize {
        self.feature_names.len()
    }
}

fn block(exam: &ExamRecord, base: &[String]) -> RawBlock {
    RawBlock { age: exam.age_at_exam, values: base.iter().map(|n| exam.value(n).clone()).collect() }
}

fn row(p: &Patient, i: usize, lags: usize, base: &[String]) -> RawRow {
    let e = &p.exams[i];
    RawRow {
        patient_id: p.patient_id.clone(),
        exam_index: i,
        gender: p.gender,
        exam_time: e.exam_time,
        blocks: (0..=lags).map(|j| block(&p.exams[i - j], base)).collect(),
        label: e.label,
    }
}

fn restricted(cohort: &Cohort, subset: &[String]) -> Result<(FeatureSchema, Vec<String>), SchemaError> {
    let schema = cohort.schema().restrict(subset)?;
    let names = schema.names();
    Ok((schema, names))
}

/// One row per examination.
pub fn make_iid(cohort: &Cohort, subset: &[String]) -> Result<RawSampleSet, SchemaError> {
    let (schema, base) = restricted(cohort, subset)?;
    let rows = cohort
        .patients()
        .iter()
        .flat_map(|p| (0..p.exams.len()).map(move |i| (p, i)))
        .map(|(p, i)| row(p, i, 0, &base))
        .collect();
    Ok(RawSampleSet { schema, lags: 0, strategy: StrategyTag::Iid, rows, clamped: 0 })
}

/// Segment index for an exam time under half-open intervals
/// `[0,b0), [b0,b1), …, [b_{n-2}, ∞)`. The second value is true when the
/// time lies beyond the last boundary and was clamped.
pub fn segment_of(t: f64, boundaries: &[f64]) -> (usize, bool) {
    let n = boundaries.len();
    for (i, &b) in boundaries.iter().enumerate().take(n.saturating_sub(1)) {
        if t < b {
            return (i, false);
        }
    }
    (n - 1, t >= boundaries[n - 1])
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("segment boundaries must be positive and strictly increasing")]
    Boundaries,
    #[error("lag count must be at least 1")]
    Lag,
}

/// Splits exams by years since the patient's first exam. With the default
/// boundaries `[2, 5, 15]` the segments are `[0,2)`, `[2,5)` and `[5,∞)`;
/// exams at or after 15 years are clamped into the last segment and counted.
pub fn make_temporal_segments(
    cohort: &Cohort,
    boundaries: &[f64],
    subset: &[String],
) -> Result<Vec<RawSampleSet>, SamplingError> {
    if boundaries.is_empty()
        || boundaries[0] <= 0.0
        || boundaries.windows(2).any(|w| w[1] <= w[0])
        || boundaries.iter().any(|b| !b.is_finite())
    {
        return Err(SamplingError::Boundaries);
    }
    let (schema, base) = restricted(cohort, subset)?;
    let mut sets: Vec<RawSampleSet> = (0..boundaries.len())
        .map(|s| RawSampleSet {
            schema: schema.clone(),
            lags: 0,
            strategy: StrategyTag::Temporal { segment: s },
            rows: Vec::new(),
            clamped: 0,
        })
        .collect();
    for p in cohort.patients() {
        for (i, e) in p.exams.iter().enumerate() {
            let (s, clamped) = segment_of(e.exam_time, boundaries);
            sets[s].rows.push(row(p, i, 0, &base));
            if clamped {
                sets[s].clamped += 1;
            }
        }
    }
    Ok(sets)
}

/// Each exam with index `i ≥ k` becomes a row holding the values of exams
/// `i, i-1, …, i-k`. Patients with `e` exams contribute `max(0, e-k)` rows.
pub fn make_lagged(cohort: &Cohort, k: usize, subset: &[String]) -> Result<RawSampleSet, SamplingError> {
    if k == 0 {
        return Err(SamplingError::Lag);
    }
    let (schema, base) = restricted(cohort, subset)?;
    let rows = cohort
        .patients()
        .iter()
        .flat_map(|p| (k..p.exams.len()).map(move |i| (p, i)))
        .map(|(p, i)| row(p, i, k, &base))
        .collect();
    Ok(RawSampleSet { schema, lags: k, strategy: StrategyTag::Lagged { k }, rows, clamped: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Patient;
    use crate::schema::FeatureSubset;
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn cohort(counts: &[usize], times: Option<Vec<f64>>) -> Cohort {
        let schema = FeatureSchema::default_schema();
        let patients = counts
            .iter()
            .enumerate()
            .map(|(pi, &n)| {
                let id = format!("p{pi}");
                Patient {
                    patient_id: id.clone(),
                    gender: Gender::Female,
                    exams: (0..n)
                        .map(|i| {
                            let mut values = BTreeMap::new();
                            values.insert("openingmm".into(), Value::Real(40.0 + i as f64));
                            ExamRecord {
                                patient_id: id.clone(),
                                exam_time: times.as_ref().map_or(i as f64, |t| t[i]),
                                age_at_exam: 7.0 + i as f64,
                                values,
                                label: Label::Tmj0,
                            }
                        })
                        .collect(),
                }
            })
            .collect();
        Cohort::new(schema, patients).unwrap()
    }

    #[test]
    fn iid_one_row_per_exam() {
        let c = cohort(&[3, 5], None);
        let expert = c.schema().subset(FeatureSubset::Expert);
        let s = make_iid(&c, &expert).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.d(), 26);
        let empty = Cohort::empty(FeatureSchema::default_schema());
        assert_eq!(make_iid(&empty, &expert).unwrap().len(), 0);
    }

    #[test]
    fn segment_boundaries() {
        let b = [2.0, 5.0, 15.0];
        assert_eq!(segment_of(0.0, &b), (0, false));
        assert_eq!(segment_of(1.9, &b), (0, false));
        assert_eq!(segment_of(2.0, &b), (1, false));
        assert_eq!(segment_of(4.99, &b), (1, false));
        assert_eq!(segment_of(5.0, &b), (2, false));
        assert_eq!(segment_of(16.2, &b), (2, true));
    }

    #[test]
    fn clamp_counter() {
        let c = cohort(&[3], Some(vec![0.0, 1.9, 16.2]));
        let expert = c.schema().subset(FeatureSubset::Expert);
        let segs = make_temporal_segments(&c, &[2.0, 5.0, 15.0], &expert).unwrap();
        assert_eq!(segs.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![2, 0, 1]);
        assert_eq!(segs[2].clamped, 1);
        assert!(make_temporal_segments(&c, &[2.0, 2.0], &expert).is_err());
    }

    #[test]
    fn lag_rows_and_width() {
        let c = cohort(&[3, 2], None);
        let expert = c.schema().subset(FeatureSubset::Expert);
        let l1 = make_lagged(&c, 1, &expert).unwrap();
        assert_eq!(l1.len(), 3);
        assert_eq!(l1.d(), 52);
        let l2 = make_lagged(&c, 2, &expert).unwrap();
        assert_eq!(l2.len(), 1);
        assert_eq!(l2.d(), 78);
        assert_eq!(l2.feature_names()[26], "asybasis_lag1");
        // lag block holds the previous exam
        let r = &l1.rows[0];
        let oi = l1.base_features().iter().position(|n| n == "openingmm").unwrap();
        assert_eq!(r.blocks[0].values[oi], Value::Real(41.0));
        assert_eq!(r.blocks[1].values[oi], Value::Real(40.0));
        assert_eq!(make_lagged(&c, 0, &expert), Err(SamplingError::Lag));
    }
}
