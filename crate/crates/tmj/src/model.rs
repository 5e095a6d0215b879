//! The serialized model and single-exam prediction.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tmj_core::cohort::parse_value;
use tmj_core::conformal::{self, predict_set, CalibratedThreshold, ConformalConfig};
use tmj_core::explain::forest_shap;
use tmj_core::forest::argmax;
use tmj_core::rng::{self, domain};
use tmj_core::sampling::RawBlock;
use tmj_core::schema::FeatureSubset;
use tmj_core::{EncoderState, ExamRecord, FeatureSchema, Forest, Gender, Label, Patient, StrategyTag, Value};

use crate::error::{Error, Result};
use crate::io;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Bound on `|base + Σ attributions − p1|` for every emitted explanation.
pub const LOCAL_ACCURACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub fractions: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub tool_version: String,
    pub strategy: StrategyTag,
    pub feature_subset: FeatureSubset,
    pub segment_boundaries: Vec<f64>,
    pub encoder: EncoderState,
    pub forest: Forest,
    pub conformal: ConformalConfig,
    pub threshold: CalibratedThreshold,
    /// Kept so the threshold can be recomputed for another α.
    pub calibration_scores: Vec<f64>,
    pub schema_hash: String,
    pub split: SplitInfo,
    pub train_report_digest: String,
}

#[derive(Serialize)]
struct SchemaIdentity<'a> {
    features: &'a FeatureSchema,
    previous_exams_required: usize,
}

/// Hash of the canonical JSON of the raw input schema and lag count.
pub fn schema_hash(encoder: &EncoderState) -> String {
    let id = SchemaIdentity { features: &encoder.schema, previous_exams_required: encoder.lags };
    io::sha256_hex(&serde_json::to_vec(&id).expect("serializable"))
}

/// Seed of the randomization draws for test rows and requests.
pub fn prediction_seed(cfg: &ConformalConfig) -> u64 {
    rng::derive_seed(cfg.seed, domain::CONFORMAL, u64::MAX)
}

impl TrainedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(self).expect("serializable");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<TrainedModel> {
        let m: TrainedModel =
            serde_json::from_slice(bytes).map_err(|e| Error::Validation(format!("{source}: {e}")))?;
        m.validate().map_err(|e| Error::Validation(format!("{source}: {e}")))?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        Self::from_bytes(&io::read_file(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.to_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::validation(format!("unsupported model format version {}", self.format_version)));
        }
        self.forest.validate()?;
        if self.forest.n_features() != self.encoder.d() {
            return Err(Error::validation(format!(
                "forest expects {} features, encoder produces {}",
                self.forest.n_features(),
                self.encoder.d()
            )));
        }
        if self.threshold.score_definition_version != conformal::SCORE_VERSION {
            return Err(Error::validation(format!(
                "threshold uses score version {}, expected {}",
                self.threshold.score_definition_version,
                conformal::SCORE_VERSION
            )));
        }
        if self.schema_hash != schema_hash(&self.encoder) {
            return Err(Error::validation("schema hash does not match the encoder schema"));
        }
        self.conformal.validate()?;
        Ok(())
    }

    pub fn previous_exams_required(&self) -> usize {
        self.encoder.lags
    }

    /// Recalibrates at another miscoverage level from the stored scores.
    pub fn with_alpha(&self, alpha: f64) -> Result<TrainedModel> {
        let cfg = ConformalConfig { alpha, ..self.conformal };
        let threshold = conformal::calibrate_scores(&self.calibration_scores, &cfg)?;
        Ok(TrainedModel { conformal: cfg, threshold, ..self.clone() })
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            strategy: self.strategy.to_string(),
            strategy_tag: self.strategy,
            feature_subset: self.feature_subset,
            alpha: self.conformal.alpha,
            lambda_reg: self.conformal.lambda_reg,
            k_reg: self.conformal.k_reg,
            randomized: self.conformal.randomized,
            tau_hat: self.threshold.tau_hat,
            n_calib: self.threshold.n_calib,
            schema_hash: self.schema_hash.clone(),
            train_report_digest: self.train_report_digest.clone(),
            version: self.tool_version.clone(),
            d: self.encoder.d(),
            previous_exams_required: self.previous_exams_required(),
            n_trees: self.forest.trees.len(),
        }
    }

    /// Probabilities, conformal set and attributions for one request.
    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, PredictError> {
        let row = self.request_row(req)?;
        let x = self.encoder.transform_row(&row).map_err(|e| PredictError::Internal(e.to_string()))?;
        let probs = self.forest.predict_proba(&x).map_err(|e| PredictError::Internal(e.to_string()))?;
        let u = conformal::row_uniform(prediction_seed(&self.conformal), 0);
        let set = predict_set(probs, &self.threshold, &self.conformal, u)
            .map_err(|e| PredictError::Internal(e.to_string()))?;
        let attr = forest_shap(&self.forest, &x).map_err(|e| PredictError::Internal(e.to_string()))?;
        let raw = self.encoder.merged_values(&row).map_err(|e| PredictError::Internal(e.to_string()))?;

        let gap = (attr.base_value + attr.per_feature.iter().sum::<f64>() - probs[1]).abs();
        if !(gap <= LOCAL_ACCURACY_TOL) {
            return Err(PredictError::Internal(format!("local accuracy gap {gap:e}")));
        }
        if !set.is_prefix_of(probs) {
            return Err(PredictError::Internal("prediction set is not a prefix of the ranked labels".into()));
        }
        if set.labels.is_empty() && !self.conformal.allow_empty_sets {
            return Err(PredictError::Internal("empty prediction set".into()));
        }

        let attributions = self
            .encoder
            .merged_layout
            .iter()
            .zip(&attr.per_feature)
            .zip(&raw)
            .map(|((col, &shap_value), v)| FeatureAttribution {
                feature: col.name.clone(),
                shap_value,
                raw_value: io::value_to_json(v),
            })
            .collect();
        Ok(PredictResponse {
            probabilities: probs,
            point_label: argmax(probs),
            prediction_set: set.labels,
            alpha: self.conformal.alpha,
            attributions,
            base_value: attr.base_value,
            model_info: ResponseModelInfo {
                strategy: self.strategy.to_string(),
                d: self.encoder.d(),
                schema_hash: self.schema_hash.clone(),
                version: self.tool_version.clone(),
            },
        })
    }

    /// Request for exam `exam` of `patient`, carrying as many previous exams
    /// as the model needs.
    pub fn request_for_exam(&self, patient: &Patient, exam: usize) -> Result<PredictRequest> {
        let lags = self.previous_exams_required();
        if exam >= patient.exams.len() {
            return Err(Error::validation(format!(
                "patient `{}` has {} exams, no exam {exam}",
                patient.patient_id,
                patient.exams.len()
            )));
        }
        if exam < lags {
            return Err(Error::validation(format!("exam {exam} has fewer than the {lags} previous exams the model needs")));
        }
        let values = |e: &ExamRecord| -> BTreeMap<String, serde_json::Value> {
            self.encoder
                .schema
                .entries
                .iter()
                .map(|s| (s.name.clone(), io::value_to_json(e.value(&s.name))))
                .filter(|(_, v)| !v.is_null())
                .collect()
        };
        let current = &patient.exams[exam];
        Ok(PredictRequest {
            values: values(current),
            gender: patient.gender.as_str().to_string(),
            age_years: current.age_at_exam,
            previous_exams: (1..=lags)
                .map(|j| {
                    let e = &patient.exams[exam - j];
                    ExamInput { values: values(e), age_years: e.age_at_exam }
                })
                .collect(),
        })
    }

    fn request_row(&self, req: &PredictRequest) -> Result<tmj_core::sampling::RawRow, PredictError> {
        let lags = self.previous_exams_required();
        if req.previous_exams.len() != lags {
            return Err(PredictError::LagBlocks { expected: lags, found: req.previous_exams.len() });
        }
        let mut errors = Vec::new();
        let gender = Gender::parse(&req.gender);
        if gender.is_none() {
            errors.push(FieldError::new("gender", format!("expected `female` or `male`, got `{}`", req.gender)));
        }
        let mut blocks = Vec::with_capacity(lags + 1);
        blocks.push(self.block(&req.values, req.age_years, "", &mut errors));
        for (j, exam) in req.previous_exams.iter().enumerate() {
            let prefix = format!("previous_exams[{j}].");
            blocks.push(self.block(&exam.values, exam.age_years, &prefix, &mut errors));
        }
        match gender {
            Some(g) if errors.is_empty() => Ok(self.encoder.raw_row(g, blocks)),
            _ => Err(PredictError::Fields(errors)),
        }
    }

    fn block(
        &self,
        values: &BTreeMap<String, serde_json::Value>,
        age: f64,
        prefix: &str,
        errors: &mut Vec<FieldError>,
    ) -> RawBlock {
        let schema = &self.encoder.schema;
        if !(age.is_finite() && age >= 0.0) {
            errors.push(FieldError::new(format!("{prefix}age_years"), "must be a finite non-negative number"));
        }
        for name in values.keys() {
            if schema.get(name).is_none() {
                errors.push(FieldError::new(format!("{prefix}{name}"), "unknown feature for this model"));
            }
        }
        let values = schema
            .entries
            .iter()
            .map(|spec| {
                let Some(raw) = values.get(&spec.name) else { return Value::Missing };
                let field = format!("{prefix}{}", spec.name);
                let token = match raw {
                    serde_json::Value::Null => String::new(),
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Bool(b) => (*b as u8).to_string(),
                    _ => {
                        errors.push(FieldError::new(field, "expected a string, number or null"));
                        return Value::Missing;
                    }
                };
                parse_value(spec, &token, true).unwrap_or_else(|e| {
                    errors.push(FieldError::new(field, e.to_string()));
                    Value::Missing
                })
            })
            .collect();
        RawBlock { age, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub strategy: String,
    pub strategy_tag: StrategyTag,
    pub feature_subset: FeatureSubset,
    pub alpha: f64,
    pub lambda_reg: f64,
    pub k_reg: usize,
    pub randomized: bool,
    pub tau_hat: f64,
    pub n_calib: usize,
    pub schema_hash: String,
    pub train_report_digest: String,
    pub version: String,
    pub d: usize,
    pub previous_exams_required: usize,
    pub n_trees: usize,
}

/// Values of one previous examination, most recent first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExamInput {
    #[serde(default)]
    pub values: BTreeMap<String, serde_json::Value>,
    pub age_years: f64,
}

/// Raw values of the current exam; omitted features are missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub values: BTreeMap<String, serde_json::Value>,
    pub gender: String,
    pub age_years: f64,
    #[serde(default)]
    pub previous_exams: Vec<ExamInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub shap_value: f64,
    /// Value after drug grouping and side merging.
    pub raw_value: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseModelInfo {
    pub strategy: String,
    pub d: usize,
    pub schema_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    /// `[p(TMJ0), p(TMJ1)]`
    pub probabilities: [f64; 2],
    pub point_label: Label,
    pub prediction_set: Vec<Label>,
    pub alpha: f64,
    /// In encoded column order.
    pub attributions: Vec<FeatureAttribution>,
    pub base_value: f64,
    pub model_info: ResponseModelInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("invalid request: {}", .0.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; "))]
    Fields(Vec<FieldError>),
    #[error("model needs {expected} previous exams, request has {found}")]
    LagBlocks { expected: usize, found: usize },
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl From<PredictError> for Error {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Internal(_) => Error::Internal(e.to_string()),
            _ => Error::Validation(e.to_string()),
        }
    }
}
