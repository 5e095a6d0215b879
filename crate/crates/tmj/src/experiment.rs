//! End-to-end experiments: split, sample, encode, fit, calibrate, evaluate
//! and explain, plus the strategy comparison table.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tmj_core::conformal::{self, ConformalConfig, PredictionSet};
use tmj_core::explain::{self, Attribution, FeatureImportance, SummaryData};
use tmj_core::forest::{self, argmax, Tree};
use tmj_core::metrics::{compute_metrics, Confusion};
use tmj_core::preprocess::{fit_encoders, split_patients, DrugMap, PreprocessOptions, SplitAssignment};
use tmj_core::sampling::{make_iid, make_lagged, make_temporal_segments, RawSampleSet};
use tmj_core::schema::FeatureSubset;
use tmj_core::{Cohort, Forest, ForestHyperparams, Label, Matrix, SampleSet, StrategyTag};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{self, SplitInfo, TrainedModel, LOCAL_ACCURACY_TOL, MODEL_FORMAT_VERSION, TOOL_VERSION};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEGMENT_BOUNDARIES: [f64; 3] = [2.0, 5.0, 15.0];
/// Features listed in the report's top-feature table.
const TOP_FEATURES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: StrategyTag,
    pub features: FeatureSubset,
    pub segment_boundaries: Vec<f64>,
    pub split_fractions: [f64; 3],
    pub split_seed: u64,
    /// Test rows explained for the summary; all when unset.
    pub shap_rows: Option<usize>,
    pub forest: ForestHyperparams,
    pub conformal: ConformalConfig,
    pub preprocess: PreprocessOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyTag::Temporal { segment: 0 },
            features: FeatureSubset::Expert,
            segment_boundaries: DEFAULT_SEGMENT_BOUNDARIES.to_vec(),
            split_fractions: [0.8, 0.1, 0.1],
            split_seed: 0,
            shap_rows: None,
            forest: ForestHyperparams::default(),
            conformal: ConformalConfig::default(),
            preprocess: PreprocessOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Sets every seed of the pipeline at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.split_seed = seed;
        self.forest.seed = seed;
        self.conformal.seed = seed;
        self.preprocess.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partitions {
    pub train_rows: usize,
    pub calib_rows: usize,
    pub test_rows: usize,
    pub train_patients: usize,
    pub calib_patients: usize,
    pub test_patients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: Label,
    /// Test rows with this true label.
    pub support: usize,
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub degenerate: bool,
    /// Share of rows of this true class whose set contains it.
    pub coverage: f64,
    pub mean_set_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalReport {
    pub alpha: f64,
    pub lambda_reg: f64,
    pub k_reg: usize,
    pub randomized: bool,
    pub allow_empty_sets: bool,
    pub tau_hat: f64,
    pub tau_capped: bool,
    pub n_calib: usize,
    pub marginal_coverage: f64,
    pub mean_set_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub forest: u64,
    pub conformal: u64,
    pub preprocess: u64,
}

/// Test-set performance of one strategy; no timestamps, so equal seeds give
/// byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub report_schema_version: u32,
    pub tool_version: String,
    pub strategy: String,
    pub strategy_tag: StrategyTag,
    pub feature_subset: FeatureSubset,
    /// Rows produced by the strategy over the whole cohort.
    pub n: usize,
    /// Raw input columns: base features times `k + 1`.
    pub d: usize,
    /// Columns after side merging and zero-variance removal.
    pub d_encoded: usize,
    pub partitions: Partitions,
    pub classes: [ClassReport; 2],
    pub macro_f1: f64,
    pub conformal: ConformalReport,
    pub forest: ForestHyperparams,
    pub oob_accuracy: Option<f64>,
    pub preprocess: PreprocessOptions,
    pub seeds: Seeds,
    pub segment_boundaries: Option<Vec<f64>>,
    pub clamped_exams: usize,
    pub dropped_columns: Vec<String>,
    pub warnings: Vec<String>,
    pub shap_rows: usize,
    pub top_features: Vec<FeatureImportance>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Vec<u8> {
        io::to_json_pretty(self)
    }
}

pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub model: TrainedModel,
    pub summary: SummaryData,
}

/// Rows of one strategy over the whole cohort.
pub fn strategy_rows(cohort: &Cohort, strategy: StrategyTag, features: FeatureSubset, boundaries: &[f64]) -> Result<RawSampleSet> {
    let subset = cohort.schema().subset(features);
    let set = match strategy {
        StrategyTag::Iid => make_iid(cohort, &subset)?,
        StrategyTag::Lagged { k } => make_lagged(cohort, k, &subset)?,
        StrategyTag::Temporal { segment } => {
            let mut sets = make_temporal_segments(cohort, boundaries, &subset)?;
            if segment >= sets.len() {
                return Err(Error::validation(format!(
                    "segment {segment} out of range: {} boundaries give {} segments",
                    boundaries.len(),
                    sets.len()
                )));
            }
            sets.swap_remove(segment)
        }
    };
    if set.is_empty() {
        return Err(Error::validation(format!("strategy `{strategy}` produced an empty segment")));
    }
    Ok(set)
}

pub fn split_cohort(cohort: &Cohort, fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    Ok(split_patients(cohort.patients().iter().map(|p| p.patient_id.as_str()), fractions, seed)?)
}

/// Train, calibration and test rows, each non-empty.
pub fn partition(rows: &RawSampleSet, split: &SplitAssignment) -> Result<[RawSampleSet; 3]> {
    let parts = [&split.train_ids, &split.calib_ids, &split.test_ids].map(|ids| rows.filter_patients(|p| ids.contains(p)));
    for (set, name) in parts.iter().zip(["training", "calibration", "test"]) {
        if set.is_empty() {
            return Err(Error::validation(format!("strategy `{}` has no {name} rows", rows.strategy)));
        }
    }
    Ok(parts)
}

/// Grows the trees in parallel; the result does not depend on the thread count.
pub fn fit_forest(x: &Matrix, y: &[Label], hp: &ForestHyperparams, names: Vec<String>) -> Result<Forest> {
    let weights = forest::prepare_fit(x, y, hp)?;
    let trees: Vec<Tree> = (0..hp.n_trees).into_par_iter().map(|t| forest::fit_tree(x, y, hp, weights, t)).collect();
    Ok(Forest::assemble(trees, x, y, hp, weights, names))
}

pub fn predict_all(forest: &Forest, x: &Matrix) -> Result<Vec<[f64; 2]>> {
    (0..x.rows()).into_par_iter().map(|i| forest.predict_proba(x.row(i)).map_err(Error::from)).collect()
}

/// Attributions for every row, each checked for local accuracy.
pub fn explain_rows(forest: &Forest, x: &Matrix) -> Result<Vec<Attribution>> {
    (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let a = explain::forest_shap(forest, x.row(i))?;
            let gap = a.local_accuracy_gap();
            if !(gap <= LOCAL_ACCURACY_TOL) {
                return Err(Error::Internal(format!("local accuracy gap {gap:e} on row {i}")));
            }
            Ok(a)
        })
        .collect()
}

pub fn summarize(forest: &Forest, x: &Matrix) -> Result<SummaryData> {
    let attrs = explain_rows(forest, x)?;
    Ok(explain::summarize_attributions(&forest.feature_names, x, &attrs)?)
}

/// Conformal sets for a batch; row `i` uses draw `i` of the prediction stream.
pub fn prediction_sets(probs: &[[f64; 2]], model: &TrainedModel) -> Result<Vec<PredictionSet>> {
    let seed = model::prediction_seed(&model.conformal);
    let sets = probs
        .iter()
        .enumerate()
        .map(|(i, p)| conformal::predict_set(*p, &model.threshold, &model.conformal, conformal::row_uniform(seed, i)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    for (s, p) in sets.iter().zip(probs) {
        if !s.is_prefix_of(*p) || (s.labels.is_empty() && !model.conformal.allow_empty_sets) {
            return Err(Error::Internal(format!("prediction set {:?} violates the set contract for {p:?}", s.labels)));
        }
    }
    Ok(sets)
}

/// Fits encoders, forest and threshold on the training and calibration rows.
pub fn fit_model(
    train: &RawSampleSet,
    calib: &RawSampleSet,
    cfg: &ExperimentConfig,
    drug_map: &DrugMap,
) -> Result<(TrainedModel, SampleSet)> {
    let encoder = fit_encoders(train, drug_map, &cfg.preprocess)?;
    let train_set = encoder.transform(train)?;
    let forest = fit_forest(&train_set.x, &train_set.y, &cfg.forest, encoder.feature_names())?;
    let calib_set = encoder.transform(calib)?;
    let probs = predict_all(&forest, &calib_set.x)?;
    let (threshold, scores) = conformal::calibrate(&probs, &calib_set.y, &cfg.conformal)?;
    let model = TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        strategy: train.strategy,
        feature_subset: cfg.features,
        segment_boundaries: cfg.segment_boundaries.clone(),
        schema_hash: model::schema_hash(&encoder),
        encoder,
        forest,
        conformal: cfg.conformal,
        threshold,
        calibration_scores: scores,
        split: SplitInfo { seed: cfg.split_seed, fractions: cfg.split_fractions },
        train_report_digest: String::new(),
    };
    Ok((model, train_set))
}

/// Scores a fitted model on the test partition of its own strategy rows.
pub fn assess(
    model: &TrainedModel,
    rows: &RawSampleSet,
    parts: &[RawSampleSet; 3],
    shap_rows: Option<usize>,
) -> Result<(ExperimentReport, SummaryData)> {
    let test = model.encoder.transform(&parts[2])?;
    let probs = predict_all(&model.forest, &test.x)?;
    let preds: Vec<Label> = probs.iter().copied().map(argmax).collect();
    let metrics = compute_metrics(&test.y, &preds)?;
    let sets = prediction_sets(&probs, model)?;
    let diag = conformal::evaluate_sets(&sets, &test.y)?;

    let n_explain = shap_rows.map_or(test.len(), |k| k.min(test.len()));
    let idx: Vec<usize> = (0..n_explain).collect();
    let summary = summarize(&model.forest, &test.x.select_rows(&idx))?;

    let patients = |s: &RawSampleSet| s.rows.iter().map(|r| r.patient_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    let classes = [Label::Tmj0, Label::Tmj1].map(|l| {
        let c = metrics.class(l);
        ClassReport {
            label: l,
            support: diag.class_counts[l.index()],
            precision: c.precision,
            sensitivity: c.sensitivity,
            f1: c.f1,
            confusion: c.confusion,
            degenerate: c.degenerate,
            coverage: diag.coverage[l.index()],
            mean_set_size: diag.mean_set_size[l.index()],
        }
    });
    let cfg = &model.conformal;
    let report = ExperimentReport {
        report_schema_version: REPORT_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        strategy: model.strategy.to_string(),
        strategy_tag: model.strategy,
        feature_subset: model.feature_subset,
        n: rows.len(),
        d: rows.d(),
        d_encoded: model.encoder.d(),
        partitions: Partitions {
            train_rows: parts[0].len(),
            calib_rows: parts[1].len(),
            test_rows: parts[2].len(),
            train_patients: patients(&parts[0]),
            calib_patients: patients(&parts[1]),
            test_patients: patients(&parts[2]),
        },
        classes,
        macro_f1: metrics.macro_f1,
        conformal: ConformalReport {
            alpha: cfg.alpha,
            lambda_reg: cfg.lambda_reg,
            k_reg: cfg.k_reg,
            randomized: cfg.randomized,
            allow_empty_sets: cfg.allow_empty_sets,
            tau_hat: model.threshold.tau_hat,
            tau_capped: model.threshold.capped,
            n_calib: model.threshold.n_calib,
            marginal_coverage: diag.marginal_coverage,
            mean_set_size: diag.mean_set_size_overall,
        },
        forest: model.forest.hyperparams,
        oob_accuracy: model.forest.oob_estimate,
        preprocess: model.encoder.options.clone(),
        seeds: Seeds {
            split: model.split.seed,
            forest: model.forest.hyperparams.seed,
            conformal: cfg.seed,
            preprocess: model.encoder.options.seed,
        },
        segment_boundaries: matches!(model.strategy, StrategyTag::Temporal { .. }).then(|| model.segment_boundaries.clone()),
        clamped_exams: rows.clamped,
        dropped_columns: model.encoder.dropped.clone(),
        warnings: model.encoder.warnings.clone(),
        shap_rows: n_explain,
        top_features: summary.ranking.iter().take(TOP_FEATURES).cloned().collect(),
    };
    Ok((report, summary))
}

pub fn run_experiment(cohort: &Cohort, cfg: &ExperimentConfig, drug_map: &DrugMap) -> Result<ExperimentOutput> {
    let rows = strategy_rows(cohort, cfg.strategy, cfg.features, &cfg.segment_boundaries)?;
    let split = split_cohort(cohort, cfg.split_fractions, cfg.split_seed)?;
    let parts = partition(&rows, &split)?;
    let (mut model, _) = fit_model(&parts[0], &parts[1], cfg, drug_map)?;
    let (report, summary) = assess(&model, &rows, &parts, cfg.shap_rows)?;
    model.train_report_digest = io::sha256_hex(&report.to_json());
    Ok(ExperimentOutput { report, model, summary })
}

/// Re-derives the model's strategy rows and split from `cohort` and scores
/// the held-out test partition exactly as training did.
pub fn evaluate_model(model: &TrainedModel, cohort: &Cohort, shap_rows: Option<usize>) -> Result<(ExperimentReport, SummaryData)> {
    let rows = strategy_rows(cohort, model.strategy, model.feature_subset, &model.segment_boundaries)?;
    let split = split_cohort(cohort, model.split.fractions, model.split.seed)?;
    let parts = partition(&rows, &split)?;
    assess(model, &rows, &parts, shap_rows)
}

/// All reports of a comparison run over one shared patient split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub report_schema_version: u32,
    pub tool_version: String,
    pub split_seed: u64,
    pub reports: Vec<ExperimentReport>,
}

/// Runs every config with the split seed of the first; a temporal config
/// expands to one experiment per segment.
pub fn compare_strategies(cohort: &Cohort, configs: &[ExperimentConfig], drug_map: &DrugMap) -> Result<ComparisonReport> {
    let first = configs.first().ok_or_else(|| Error::validation("no strategy configs to compare"))?;
    let split_seed = first.split_seed;
    let mut runs = Vec::new();
    for cfg in configs {
        let mut cfg = ExperimentConfig { split_seed, split_fractions: first.split_fractions, ..cfg.clone() };
        match cfg.strategy {
            StrategyTag::Temporal { .. } => {
                for segment in 0..cfg.segment_boundaries.len() {
                    cfg.strategy = StrategyTag::Temporal { segment };
                    runs.push(cfg.clone());
                }
            }
            _ => runs.push(cfg),
        }
    }
    let reports = runs
        .iter()
        .map(|cfg| run_experiment(cohort, cfg, drug_map).map(|o| o.report))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport { report_schema_version: REPORT_SCHEMA_VERSION, tool_version: TOOL_VERSION.to_string(), split_seed, reports })
}

/// Table with the columns Strategy, N, d, Class, Precision, Sensitivity,
/// F1m, Coverage and Set size; two rows per report.
pub fn render_table(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>6} {:>4}  {:<5} {:>9} {:>11} {:>7} {:>8} {:>8}",
        "Strategy", "N", "d", "Class", "Precision", "Sensitivity", "F1m", "Coverage", "Set size"
    );
    for r in reports {
        for (i, c) in r.classes.iter().enumerate() {
            let (name, n, d, f1m) = if i == 0 {
                (r.strategy.as_str(), r.n.to_string(), r.d.to_string(), format!("{:.4}", r.macro_f1))
            } else {
                ("", String::new(), String::new(), String::new())
            };
            let _ = writeln!(
                out,
                "{:<20} {:>6} {:>4}  {:<5} {:>9.4} {:>11.4} {:>7} {:>8.4} {:>8.4}",
                name, n, d, c.label.to_string(), c.precision, c.sensitivity, f1m, c.coverage, c.mean_set_size
            );
        }
    }
    out
}
