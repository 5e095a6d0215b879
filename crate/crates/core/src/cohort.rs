//! Longitudinal cohort model: patients, their time-ordered examinations and
//! the per-examination TMJ label.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{FeatureKind, FeatureSchema, FeatureSpec, DRUG_FEATURE};

/// Reserved category for tokens outside the declared set (lenient mode).
pub const UNKNOWN_CATEGORY: &str = "__unknown__";
pub const MIN_EXAMS: usize = 2;
pub const MAX_EXAMS: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "TMJ0")]
    Tmj0,
    #[serde(rename = "TMJ1")]
    Tmj1,
}

impl Label {
    pub fn from_bool(involved: bool) -> Self {
        if involved {
            Label::Tmj1
        } else {
            Label::Tmj0
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Tmj0
        } else {
            Label::Tmj1
        }
    }

    pub fn other(self) -> Self {
        Self::from_index(1 - self.index())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Tmj0 => "TMJ0",
            Label::Tmj1 => "TMJ1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Some(Gender::Female),
            "male" | "m" => Some(Gender::Male),
            _ => None,
        }
    }
}

/// A raw recorded value, before any feature engineering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Missing,
    /// Binary (0/1) or ordinal level.
    Level(u32),
    Category(String),
    Real(f64),
}

impl Value {
    /// Token form used in CSV files; reals keep full round-trip precision.
    pub fn to_token(&self) -> String {
        match self {
            Value::Missing => String::new(),
            Value::Level(l) => l.to_string(),
            Value::Category(c) => c.clone(),
            Value::Real(r) => alloc::format!("{r:?}"),
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValueError {
    #[error("unknown category `{token}` for feature `{feature}`")]
    UnknownCategory { feature: String, token: String },
    #[error("invalid value `{token}` for feature `{feature}`: {reason}")]
    Invalid { feature: String, token: String, reason: &'static str },
}

fn category_ok(spec: &FeatureSpec, categories: &[String], token: &str) -> bool {
    if categories.iter().any(|c| c == token) {
        return true;
    }
    // medication combinations are written as `a+b`
    spec.name == DRUG_FEATURE
        && token.contains('+')
        && token.split('+').all(|part| categories.iter().any(|c| c == part.trim()))
}

/// Parses a raw token against a feature spec. Empty tokens are missing.
/// In lenient mode unknown categories map to [`UNKNOWN_CATEGORY`].
pub fn parse_value(spec: &FeatureSpec, token: &str, strict: bool) -> Result<Value, ValueError> {
    let token = token.trim();
    if token.is_empty() {
        return Ok(Value::Missing);
    }
    let invalid = |reason| ValueError::Invalid { feature: spec.name.clone(), token: token.to_string(), reason };
    match &spec.kind {
        FeatureKind::Binary | FeatureKind::Ordinal { .. } => {
            let levels = spec.kind.level_count().unwrap_or(2);
            let level: u32 = token.parse().map_err(|_| invalid("expected an integer level"))?;
            if level >= levels {
                return Err(invalid("level out of range"));
            }
            Ok(Value::Level(level))
        }
        FeatureKind::Nominal { categories } => {
            if category_ok(spec, categories, token) {
                Ok(Value::Category(token.to_string()))
            } else if strict {
                Err(ValueError::UnknownCategory { feature: spec.name.clone(), token: token.to_string() })
            } else {
                Ok(Value::Category(UNKNOWN_CATEGORY.to_string()))
            }
        }
        FeatureKind::Continuous { .. } => {
            let v: f64 = token.parse().map_err(|_| invalid("expected a real number"))?;
            if !v.is_finite() {
                return Err(invalid("non-finite real"));
            }
            Ok(Value::Real(v))
        }
    }
}

/// Checks an already-typed value against its spec.
pub fn check_value(spec: &FeatureSpec, value: &Value) -> Result<(), ValueError> {
    let invalid = |reason| ValueError::Invalid { feature: spec.name.clone(), token: value.to_token(), reason };
    match (&spec.kind, value) {
        (_, Value::Missing) => Ok(()),
        (FeatureKind::Binary | FeatureKind::Ordinal { .. }, Value::Level(l)) => {
            if *l < spec.kind.level_count().unwrap_or(2) {
                Ok(())
            } else {
                Err(invalid("level out of range"))
            }
        }
        (FeatureKind::Nominal { categories }, Value::Category(c)) => {
            if c == UNKNOWN_CATEGORY || category_ok(spec, categories, c) {
                Ok(())
            } else {
                Err(ValueError::UnknownCategory { feature: spec.name.clone(), token: c.clone() })
            }
        }
        (FeatureKind::Continuous { .. }, Value::Real(r)) => {
            if r.is_finite() {
                Ok(())
            } else {
                Err(invalid("non-finite real"))
            }
        }
        _ => Err(invalid("value type does not match feature kind")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamRecord {
    pub patient_id: String,
    /// Years since the patient's first examination.
    pub exam_time: f64,
    pub age_at_exam: f64,
    pub values: BTreeMap<String, Value>,
    pub label: Label,
}

impl ExamRecord {
    pub fn value(&self, name: &str) -> &Value {
        self.values.get(name).unwrap_or(&Value::Missing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub gender: Gender,
    pub exams: Vec<ExamRecord>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("patient `{patient}`: duplicate or decreasing exam_time {time}")]
    Ordering { patient: String, time: f64 },
    #[error("patient `{patient}`: first exam must have exam_time 0, found {time}")]
    FirstExamTime { patient: String, time: f64 },
    #[error("patient `{patient}`: {count} exams, expected between {MIN_EXAMS} and {MAX_EXAMS}")]
    ExamCount { patient: String, count: usize },
    #[error("duplicate patient `{0}`")]
    DuplicatePatient(String),
    #[error("patient `{patient}`: record carries patient id `{found}`")]
    PatientMismatch { patient: String, found: String },
    #[error("patient `{patient}`: invalid {field}")]
    InvalidField { patient: String, field: &'static str },
}

/// Immutable validated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    schema: FeatureSchema,
    patients: Vec<Patient>,
}

impl Cohort {
    /// Validates and builds a cohort. Exams are expected time-ordered.
    pub fn new(schema: FeatureSchema, patients: Vec<Patient>) -> Result<Self, CohortError> {
        let specs = schema.by_name();
        let mut ids = BTreeSet::new();
        for p in &patients {
            if !ids.insert(p.patient_id.as_str()) {
                return Err(CohortError::DuplicatePatient(p.patient_id.clone()));
            }
            if !(MIN_EXAMS..=MAX_EXAMS).contains(&p.exams.len()) {
                return Err(CohortError::ExamCount { patient: p.patient_id.clone(), count: p.exams.len() });
            }
            let first = p.exams[0].exam_time;
            if first != 0.0 {
                return Err(CohortError::FirstExamTime { patient: p.patient_id.clone(), time: first });
            }
            let mut prev = f64::NEG_INFINITY;
            for e in &p.exams {
                if e.patient_id != p.patient_id {
                    return Err(CohortError::PatientMismatch {
                        patient: p.patient_id.clone(),
                        found: e.patient_id.clone(),
                    });
                }
                if !e.exam_time.is_finite() || e.exam_time < 0.0 {
                    return Err(CohortError::InvalidField { patient: p.patient_id.clone(), field: "exam_time" });
                }
                if !e.age_at_exam.is_finite() || e.age_at_exam < 0.0 {
                    return Err(CohortError::InvalidField { patient: p.patient_id.clone(), field: "age_at_exam" });
                }
                if e.exam_time <= prev {
                    return Err(CohortError::Ordering { patient: p.patient_id.clone(), time: e.exam_time });
                }
                prev = e.exam_time;
                for (k, v) in &e.values {
                    let spec = specs.get(k.as_str()).ok_or_else(|| CohortError::UnknownFeature(k.clone()))?;
                    check_value(spec, v)?;
                }
            }
        }
        Ok(Self { schema, patients })
    }

    pub fn empty(schema: FeatureSchema) -> Self {
        Self { schema, patients: Vec::new() }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn record_count(&self) -> usize {
        self.patients.iter().map(|p| p.exams.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = (&Patient, &ExamRecord)> {
        self.patients.iter().flat_map(|p| p.exams.iter().map(move |e| (p, e)))
    }

    pub fn patient(&self, id: &str) -> Option<&Patient> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    pub fn into_parts(self) -> (FeatureSchema, Vec<Patient>) {
        (self.schema, self.patients)
    }
}

/// Label counts for one time bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BucketCount {
    pub records: usize,
    pub tmj1: usize,
}

impl BucketCount {
    pub fn prevalence(&self) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            self.tmj1 as f64 / self.records as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CohortSummary {
    pub patients: usize,
    pub records: usize,
    pub female: usize,
    pub male: usize,
    /// exam count → number of patients
    pub exam_count_histogram: BTreeMap<usize, usize>,
    pub tmj1_records: usize,
    /// prevalence of TMJ1 over all records
    pub prevalence: f64,
    /// [0,2), [2,5), [5,∞) years since first exam
    pub by_time_bucket: [BucketCount; 3],
}

pub fn time_bucket(t: f64) -> usize {
    if t < 2.0 {
        0
    } else if t < 5.0 {
        1
    } else {
        2
    }
}

pub fn cohort_summary(cohort: &Cohort) -> CohortSummary {
    let mut s = CohortSummary::default();
    for p in cohort.patients() {
        s.patients += 1;
        match p.gender {
            Gender::Female => s.female += 1,
            Gender::Male => s.male += 1,
        }
        *s.exam_count_histogram.entry(p.exams.len()).or_default() += 1;
        for e in &p.exams {
            s.records += 1;
            let b = &mut s.by_time_bucket[time_bucket(e.exam_time)];
            b.records += 1;
            if e.label == Label::Tmj1 {
                s.tmj1_records += 1;
                b.tmj1 += 1;
            }
        }
    }
    s.prevalence = if s.records == 0 { 0.0 } else { s.tmj1_records as f64 / s.records as f64 };
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureSchema;
    use alloc::vec;

    fn exam(pid: &str, t: f64, label: Label) -> ExamRecord {
        ExamRecord { patient_id: pid.into(), exam_time: t, age_at_exam: 8.0 + t, values: BTreeMap::new(), label }
    }

    #[test]
    fn summary_counts() {
        let p = Patient {
            patient_id: "p1".into(),
            gender: Gender::Female,
            exams: vec![exam("p1", 0.0, Label::Tmj0), exam("p1", 1.0, Label::Tmj0), exam("p1", 3.0, Label::Tmj1)],
        };
        let c = Cohort::new(FeatureSchema::default_schema(), vec![p]).unwrap();
        let s = cohort_summary(&c);
        assert_eq!(s.patients, 1);
        assert_eq!(s.records, 3);
        assert_eq!(s.female, 1);
        assert_eq!(s.tmj1_records, 1);
        assert!((s.prevalence - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.by_time_bucket[0], BucketCount { records: 2, tmj1: 0 });
        assert_eq!(s.by_time_bucket[1], BucketCount { records: 1, tmj1: 1 });
    }

    #[test]
    fn empty_summary() {
        let c = Cohort::empty(FeatureSchema::default_schema());
        assert_eq!(cohort_summary(&c), CohortSummary::default());
    }

    #[test]
    fn rejects_duplicate_times_and_unknown_features() {
        let p = Patient {
            patient_id: "p".into(),
            gender: Gender::Male,
            exams: vec![exam("p", 0.0, Label::Tmj0), exam("p", 0.0, Label::Tmj0)],
        };
        let err = Cohort::new(FeatureSchema::default_schema(), vec![p]).unwrap_err();
        assert!(matches!(err, CohortError::Ordering { .. }));

        let mut e = exam("q", 0.0, Label::Tmj0);
        e.values.insert("nonexistent".into(), Value::Level(1));
        let p = Patient { patient_id: "q".into(), gender: Gender::Male, exams: vec![e, exam("q", 1.0, Label::Tmj0)] };
        let err = Cohort::new(FeatureSchema::default_schema(), vec![p]).unwrap_err();
        assert_eq!(err, CohortError::UnknownFeature("nonexistent".into()));
    }

    #[test]
    fn parse_tokens() {
        let s = FeatureSchema::default_schema();
        let profile = s.get("profile").unwrap();
        assert_eq!(parse_value(profile, "convex", true), Ok(Value::Category("convex".into())));
        assert!(matches!(parse_value(profile, "zigzag", true), Err(ValueError::UnknownCategory { .. })));
        assert_eq!(parse_value(profile, "zigzag", false), Ok(Value::Category(UNKNOWN_CATEGORY.into())));
        assert_eq!(parse_value(profile, "", true), Ok(Value::Missing));
        let pain = s.get("painmoveleft").unwrap();
        assert_eq!(parse_value(pain, "2", true), Ok(Value::Level(2)));
        assert!(parse_value(pain, "3", true).is_err());
        let mm = s.get("openingmm").unwrap();
        assert_eq!(parse_value(mm, "45.5", true), Ok(Value::Real(45.5)));
        assert!(parse_value(mm, "NaN", true).is_err());
        let drug = s.get("drug").unwrap();
        assert!(parse_value(drug, "etanercept+methotrexate", true).is_ok());
        assert!(parse_value(drug, "etanercept+snakeoil", true).is_err());
    }
}
