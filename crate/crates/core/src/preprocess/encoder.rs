//! Fitted preprocessing state and the row transform.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::deviation::ReferenceTable;
use super::drug::DrugMap;
use super::embedding::{fit_scalar_embeddings, EmbeddingParams};
use super::sides::merge_pair;
use super::PreprocessError;
use crate::cohort::{Gender, Label, Value};
use crate::matrix::Matrix;
use crate::sampling::{lag_suffix, RawBlock, RawRow, RawSampleSet, SampleSet, StrategyTag};
use crate::schema::{FeatureKind, FeatureSchema, DRUG_FEATURE};

pub const ENCODER_FORMAT_VERSION: u32 = 1;

/// Columns whose z-score standard deviation falls below this are dropped.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessOptions {
    /// Unmapped drug tokens are an error when set, `None` otherwise.
    pub strict_drugs: bool,
    pub deviation_features: Vec<String>,
    pub min_bucket_count: usize,
    pub embedding_epochs: usize,
    pub embedding_learning_rate: f64,
    pub seed: u64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            strict_drugs: true,
            deviation_features: alloc::vec!["openingmm".into(), "protrusionmm".into()],
            min_bucket_count: 5,
            embedding_epochs: 200,
            embedding_learning_rate: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Source {
    Passthrough { feature: String },
    Merged { left: String, right: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// Binary/ordinal level or continuous value.
    Numeric,
    /// Continuous value expressed as deviation from the gender/age mean.
    Deviation,
    /// Nominal category mapped through its scalar embedding.
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    /// Final column name, lag-suffixed for earlier exams.
    pub name: String,
    /// Merged feature name within one exam block.
    pub base: String,
    pub block: usize,
    pub source: Source,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub format_version: u32,
    pub lags: usize,
    /// Schema restricted to the raw base features.
    pub schema: FeatureSchema,
    pub drug_map: DrugMap,
    pub options: PreprocessOptions,
    /// Retained columns in output order.
    pub merged_layout: Vec<LayoutEntry>,
    /// Aligned with `merged_layout`.
    pub zscore_params: Vec<ZScore>,
    /// Per nominal column: category → integer code.
    pub label_maps: BTreeMap<String, BTreeMap<String, u32>>,
    /// Per nominal column: category → scalar embedding.
    pub embeddings: BTreeMap<String, BTreeMap<String, f64>>,
    /// Per deviation feature.
    pub reference_tables: BTreeMap<String, ReferenceTable>,
    /// Columns removed for zero training variance.
    pub dropped: Vec<String>,
    /// Embeddings replaced by label codes (single-class training labels).
    pub embedding_fallback: bool,
    pub warnings: Vec<String>,
}

/// Per-block merged layout in schema order of the first side seen.
fn block_layout(schema: &FeatureSchema, opts: &PreprocessOptions) -> Vec<(String, Source, ColumnKind)> {
    let pairs = schema.mirror_pairs();
    let mut out = Vec::new();
    let mut done = alloc::collections::BTreeSet::new();
    for e in &schema.entries {
        let (base, source) = match &e.mirror_of {
            None => (e.name.clone(), Source::Passthrough { feature: e.name.clone() }),
            Some(_) => {
                let p = pairs.iter().find(|p| p.left == e.name || p.right == e.name).expect("valid pair");
                (p.merged.clone(), Source::Merged { left: p.left.clone(), right: p.right.clone() })
            }
        };
        if !done.insert(base.clone()) {
            continue;
        }
        let kind = match &e.kind {
            FeatureKind::Nominal { .. } => ColumnKind::Nominal,
            FeatureKind::Continuous { .. } if opts.deviation_features.contains(&base) => ColumnKind::Deviation,
            _ => ColumnKind::Numeric,
        };
        out.push((base, source, kind));
    }
    out
}

struct Prepared {
    /// Merged raw values per block, `blocks × block_layout`.
    merged: Vec<Vec<Value>>,
    fell_back: bool,
}

fn prepare_block(
    block: &RawBlock,
    schema: &FeatureSchema,
    layout: &[(String, Source, ColumnKind)],
    drugs: &DrugMap,
    strict: bool,
) -> Result<(Vec<Value>, bool), PreprocessError> {
    if block.values.len() != schema.len() {
        return Err(PreprocessError::Width { expected: schema.len(), found: block.values.len() });
    }
    let get = |name: &str| -> &Value {
        let i = schema.index_of(name).expect("layout feature in schema");
        &block.values[i]
    };
    let mut fell_back = false;
    let mut out = Vec::with_capacity(layout.len());
    for (base, source, _) in layout {
        let v = match source {
            Source::Passthrough { feature } => get(feature).clone(),
            Source::Merged { left, right } => {
                let spec = schema.get(left).expect("pair in schema");
                merge_pair(spec, get(left), get(right))
            }
        };
        let v = if base == DRUG_FEATURE {
            let token = match &v {
                Value::Category(c) => c.as_str(),
                _ => "",
            };
            let (class, fb) = drugs.classify(token, strict)?;
            fell_back |= fb;
            Value::Category(class.as_str().to_string())
        } else {
            v
        };
        out.push(v);
    }
    Ok((out, fell_back))
}

fn prepare_row(
    row: &RawRow,
    lags: usize,
    schema: &FeatureSchema,
    layout: &[(String, Source, ColumnKind)],
    drugs: &DrugMap,
    strict: bool,
) -> Result<Prepared, PreprocessError> {
    if row.blocks.len() != lags + 1 {
        return Err(PreprocessError::BlockCount { expected: lags + 1, found: row.blocks.len() });
    }
    let mut merged = Vec::with_capacity(row.blocks.len());
    let mut fell_back = false;
    for b in &row.blocks {
        let (m, fb) = prepare_block(b, schema, layout, drugs, strict)?;
        fell_back |= fb;
        merged.push(m);
    }
    Ok(Prepared { merged, fell_back })
}

fn numeric(v: &Value) -> Option<f64> {
    match v {
        Value::Level(l) => Some(*l as f64),
        Value::Real(r) => Some(*r),
        _ => None,
    }
}

fn category(v: &Value) -> Option<&str> {
    match v {
        Value::Category(c) => Some(c),
        _ => None,
    }
}

/// Fits every statistic on `train` only.
pub fn fit_encoders(
    train: &RawSampleSet,
    drug_map: &DrugMap,
    options: &PreprocessOptions,
) -> Result<EncoderState, PreprocessError> {
    if train.rows.is_empty() {
        return Err(PreprocessError::Empty);
    }
    let schema = &train.schema;
    let lags = train.lags;
    let layout = block_layout(schema, options);
    let mut warnings = Vec::new();

    let prepared: Vec<Prepared> = train
        .rows
        .iter()
        .map(|r| prepare_row(r, lags, schema, &layout, drug_map, options.strict_drugs))
        .collect::<Result<_, _>>()?;
    let fallback_rows = prepared.iter().filter(|p| p.fell_back).count();
    if fallback_rows > 0 {
        warnings.push(format!("{fallback_rows} training rows had unmapped drug tokens classified as None"));
    }

    // gender/age reference tables, pooled over all exam blocks
    let mut reference_tables = BTreeMap::new();
    for (li, (base, _, kind)) in layout.iter().enumerate() {
        if *kind != ColumnKind::Deviation {
            continue;
        }
        let samples = train.rows.iter().zip(&prepared).flat_map(|(r, p)| {
            r.blocks.iter().zip(&p.merged).filter_map(move |(b, m)| numeric(&m[li]).map(|v| (r.gender, b.age, v)))
        });
        reference_tables.insert(base.clone(), ReferenceTable::fit(samples, options.min_bucket_count));
    }

    // full column list over blocks
    let columns: Vec<LayoutEntry> = (0..=lags)
        .flat_map(|block| {
            layout.iter().map(move |(base, source, kind)| LayoutEntry {
                name: lag_suffix(base, block),
                base: base.clone(),
                block,
                source: source.clone(),
                kind: *kind,
            })
        })
        .collect();
    let width = layout.len();

    // label maps
    let mut label_maps: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    let nominal_cols: Vec<usize> =
        columns.iter().enumerate().filter(|(_, c)| c.kind == ColumnKind::Nominal).map(|(i, _)| i).collect();
    for &ci in &nominal_cols {
        let (block, li) = (ci / width, ci % width);
        let mut cats: alloc::collections::BTreeSet<&str> = alloc::collections::BTreeSet::new();
        for p in &prepared {
            if let Some(c) = category(&p.merged[block][li]) {
                cats.insert(c);
            }
        }
        let map = cats.into_iter().enumerate().map(|(i, c)| (c.to_string(), i as u32)).collect();
        label_maps.insert(columns[ci].name.clone(), map);
    }

    // scalar embeddings
    let y: Vec<f64> = train.rows.iter().map(|r| if r.label == Label::Tmj1 { 1.0 } else { 0.0 }).collect();
    let positives = y.iter().filter(|v| **v > 0.5).count();
    let embedding_fallback = positives == 0 || positives == y.len();
    let mut embeddings: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    if embedding_fallback {
        warnings.push("training labels contain a single class; nominal features use label codes".into());
        for &ci in &nominal_cols {
            let name = &columns[ci].name;
            let emb = label_maps[name].iter().map(|(c, code)| (c.clone(), *code as f64)).collect();
            embeddings.insert(name.clone(), emb);
        }
    } else if !nominal_cols.is_empty() {
        let cardinality: Vec<usize> = nominal_cols.iter().map(|ci| label_maps[&columns[*ci].name].len()).collect();
        let codes: Vec<Vec<Option<u32>>> = prepared
            .iter()
            .map(|p| {
                nominal_cols
                    .iter()
                    .map(|&ci| {
                        let (block, li) = (ci / width, ci % width);
                        category(&p.merged[block][li]).map(|c| label_maps[&columns[ci].name][c])
                    })
                    .collect()
            })
            .collect();
        let params = EmbeddingParams {
            epochs: options.embedding_epochs,
            learning_rate: options.embedding_learning_rate,
            init_scale: 0.01,
            seed: options.seed,
        };
        let fitted = fit_scalar_embeddings(&codes, &cardinality, &y, params);
        for (k, &ci) in nominal_cols.iter().enumerate() {
            let name = &columns[ci].name;
            let emb = label_maps[name].iter().map(|(c, code)| (c.clone(), fitted[k][*code as usize])).collect();
            embeddings.insert(name.clone(), emb);
        }
    }

    let mut state = EncoderState {
        format_version: ENCODER_FORMAT_VERSION,
        lags,
        schema: schema.clone(),
        drug_map: drug_map.clone(),
        options: options.clone(),
        merged_layout: columns,
        zscore_params: Vec::new(),
        label_maps,
        embeddings,
        reference_tables,
        dropped: Vec::new(),
        embedding_fallback,
        warnings,
    };

    // z-score over pre-scaled values; NaN marks missing/unseen
    let ncols = state.merged_layout.len();
    let mut sums = alloc::vec![(0.0f64, 0usize); ncols];
    let pre: Vec<Vec<f64>> =
        train.rows.iter().zip(&prepared).map(|(r, p)| state.prescale(r, p)).collect();
    for row in &pre {
        for (c, v) in row.iter().enumerate() {
            if !v.is_nan() {
                sums[c].0 += v;
                sums[c].1 += 1;
            }
        }
    }
    let means: Vec<f64> = sums.iter().map(|(s, n)| if *n == 0 { 0.0 } else { s / *n as f64 }).collect();
    let mut sq = alloc::vec![0.0f64; ncols];
    for row in &pre {
        for (c, v) in row.iter().enumerate() {
            if !v.is_nan() {
                let d = v - means[c];
                sq[c] += d * d;
            }
        }
    }
    let mut layout_kept = Vec::new();
    let mut params = Vec::new();
    for (c, entry) in state.merged_layout.iter().enumerate() {
        // missing entries sit at the mean and count towards the spread
        let std = if sums[c].1 == 0 { 0.0 } else { libm::sqrt(sq[c] / pre.len() as f64) };
        if std < MIN_STD {
            state.dropped.push(entry.name.clone());
        } else {
            layout_kept.push(entry.clone());
            params.push(ZScore { mean: means[c], std });
        }
    }
    state.merged_layout = layout_kept;
    state.zscore_params = params;
    Ok(state)
}

impl EncoderState {
    pub fn feature_names(&self) -> Vec<String> {
        self.merged_layout.iter().map(|c| c.name.clone()).collect()
    }

    pub fn d(&self) -> usize {
        self.merged_layout.len()
    }

    fn block_layout(&self) -> Vec<(String, Source, ColumnKind)> {
        block_layout(&self.schema, &self.options)
    }

    /// Values after deviation and embedding, before z-scoring; NaN = missing.
    fn prescale(&self, row: &RawRow, p: &Prepared) -> Vec<f64> {
        let layout = self.block_layout();
        self.merged_layout
            .iter()
            .map(|col| {
                let li = layout.iter().position(|(b, _, _)| *b == col.base).expect("column in layout");
                let v = &p.merged[col.block][li];
                match col.kind {
                    ColumnKind::Numeric => numeric(v).unwrap_or(f64::NAN),
                    ColumnKind::Deviation => match numeric(v) {
                        Some(x) => {
                            let age = row.blocks[col.block].age;
                            let table = &self.reference_tables[&col.base];
                            super::deviation::age_gender_deviation(x, row.gender, age, table)
                        }
                        None => f64::NAN,
                    },
                    ColumnKind::Nominal => category(v)
                        .and_then(|c| self.embeddings.get(&col.name).and_then(|m| m.get(c)).copied())
                        .unwrap_or(f64::NAN),
                }
            })
            .collect()
    }

    fn prepare(&self, row: &RawRow) -> Result<Prepared, PreprocessError> {
        if self.format_version != ENCODER_FORMAT_VERSION {
            return Err(PreprocessError::Version(self.format_version));
        }
        prepare_row(row, self.lags, &self.schema, &self.block_layout(), &self.drug_map, self.options.strict_drugs)
    }

    /// Encodes one row; missing values and unseen categories become 0.0.
    pub fn transform_row(&self, row: &RawRow) -> Result<Vec<f64>, PreprocessError> {
        let p = self.prepare(row)?;
        Ok(self
            .prescale(row, &p)
            .into_iter()
            .zip(&self.zscore_params)
            .map(|(v, z)| if v.is_nan() { 0.0 } else { (v - z.mean) / z.std })
            .collect())
    }

    /// Merged (pre-encoding) raw value for each retained column.
    pub fn merged_values(&self, row: &RawRow) -> Result<Vec<Value>, PreprocessError> {
        let p = self.prepare(row)?;
        let layout = self.block_layout();
        Ok(self
            .merged_layout
            .iter()
            .map(|col| {
                let li = layout.iter().position(|(b, _, _)| *b == col.base).expect("column in layout");
                p.merged[col.block][li].clone()
            })
            .collect())
    }

    pub fn transform_rows(&self, rows: &[RawRow]) -> Result<Matrix, PreprocessError> {
        let mut m = Matrix::from_vec(0, self.d(), Vec::new());
        for r in rows {
            m.push_row(&self.transform_row(r)?);
        }
        Ok(m)
    }

    /// Encodes a raw sample set into a design matrix with provenance.
    pub fn transform(&self, set: &RawSampleSet) -> Result<SampleSet, PreprocessError> {
        Ok(SampleSet {
            x: self.transform_rows(&set.rows)?,
            y: set.labels(),
            feature_names: self.feature_names(),
            provenance: set.rows.iter().map(|r| (r.patient_id.clone(), r.exam_index)).collect(),
            strategy: set.strategy,
        })
    }

    /// Builds a row from raw value blocks (current exam first).
    pub fn raw_row(&self, gender: Gender, blocks: Vec<RawBlock>) -> RawRow {
        RawRow {
            patient_id: String::new(),
            exam_index: 0,
            gender,
            exam_time: 0.0,
            blocks,
            label: Label::Tmj0,
        }
    }

    pub fn strategy_lags(tag: StrategyTag) -> usize {
        tag.lags()
    }
}
