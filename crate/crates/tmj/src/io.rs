//! File formats: cohort CSV, schema and drug-map JSON, sample-set export and
//! SHAP summary CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tmj_core::cohort::parse_value;
use tmj_core::explain::{FeatureImportance, SummaryPoint};
use tmj_core::preprocess::DrugMap;
use tmj_core::{Cohort, ExamRecord, FeatureSchema, Gender, Label, Patient, SampleSet, Value};

use crate::error::{Error, Result};

/// Fixed leading columns of the cohort CSV.
pub const COHORT_COLUMNS: [&str; 5] = ["patient_id", "gender", "exam_time_years", "age_years", "label"];
/// Optional per-row validity flag; rows with `0` or `false` are dropped.
pub const VALID_COLUMN: &str = "valid";

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &to_json_pretty(value))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    let schema: FeatureSchema = read_json(path)?;
    schema.validate().map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    Ok(schema)
}

pub fn load_drug_map(path: &Path) -> Result<DrugMap> {
    read_json(path)
}

fn line_err(source: &str, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("{source}:{line}: {msg}"))
}

fn csv_err(source: &str, e: csv::Error) -> Error {
    match e.position() {
        Some(p) => line_err(source, p.line(), e),
        None => Error::Validation(format!("{source}: {e}")),
    }
}

pub fn load_cohort(path: &Path, schema: &FeatureSchema, strict: bool) -> Result<Cohort> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(file, schema, strict, &path.display().to_string())
}

/// Parses a cohort CSV. Rows are grouped by patient in order of first
/// appearance and sorted by exam time. `source` prefixes error messages.
pub fn read_cohort<R: Read>(reader: R, schema: &FeatureSchema, strict: bool, source: &str) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_err(source, e))?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut fixed = [0usize; 5];
    for (slot, name) in fixed.iter_mut().zip(COHORT_COLUMNS) {
        *slot = col(name).ok_or_else(|| line_err(source, 1, format!("missing column `{name}`")))?;
    }
    let valid = col(VALID_COLUMN);
    let mut features = Vec::new();
    for (i, h) in header.iter().enumerate() {
        let h = h.trim();
        if COHORT_COLUMNS.contains(&h) || h == VALID_COLUMN {
            continue;
        }
        let spec = schema.get(h).ok_or_else(|| line_err(source, 1, format!("unknown feature `{h}`")))?;
        if features.iter().any(|(_, s): &(usize, &tmj_core::FeatureSpec)| s.name == h) {
            return Err(line_err(source, 1, format!("duplicate column `{h}`")));
        }
        features.push((i, spec));
    }

    let mut order: Vec<String> = Vec::new();
    let mut by_patient: BTreeMap<String, (Gender, Vec<ExamRecord>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(source, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        if let Some(v) = valid {
            match field(v).to_ascii_lowercase().as_str() {
                "0" | "false" => continue,
                "" | "1" | "true" => {}
                other => return Err(line_err(source, line, format!("invalid `valid` flag `{other}`"))),
            }
        }
        let pid = field(fixed[0]).to_string();
        if pid.is_empty() {
            return Err(line_err(source, line, "empty patient_id"));
        }
        let gender = Gender::parse(field(fixed[1]))
            .ok_or_else(|| line_err(source, line, format!("invalid gender `{}`", field(fixed[1]))))?;
        let real = |i: usize, name: &str| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| line_err(source, line, format!("invalid {name} `{}`", field(i))))
        };
        let exam_time = real(fixed[2], "exam_time_years")?;
        let age = real(fixed[3], "age_years")?;
        let label = match field(fixed[4]) {
            "0" | "TMJ0" => Label::Tmj0,
            "1" | "TMJ1" => Label::Tmj1,
            other => return Err(line_err(source, line, format!("invalid label `{other}`"))),
        };
        let mut values = BTreeMap::new();
        for (i, spec) in &features {
            let v = parse_value(spec, field(*i), strict).map_err(|e| line_err(source, line, e))?;
            values.insert(spec.name.clone(), v);
        }
        let entry = by_patient.entry(pid.clone()).or_insert_with(|| {
            order.push(pid.clone());
            (gender, Vec::new())
        });
        if entry.0 != gender {
            return Err(line_err(source, line, format!("patient `{pid}` changes gender")));
        }
        entry.1.push(ExamRecord { patient_id: pid, exam_time, age_at_exam: age, values, label });
    }
    let patients = order
        .into_iter()
        .map(|pid| {
            let (gender, mut exams) = by_patient.remove(&pid).expect("recorded patient");
            exams.sort_by(|a, b| a.exam_time.total_cmp(&b.exam_time));
            Patient { patient_id: pid, gender, exams }
        })
        .collect();
    Cohort::new(schema.clone(), patients).map_err(|e| Error::Validation(format!("{source}: {e}")))
}

pub fn write_cohort<W: Write>(w: W, cohort: &Cohort) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let names = cohort.schema().names();
    let header: Vec<&str> = COHORT_COLUMNS.iter().copied().chain(names.iter().map(String::as_str)).collect();
    let internal = |e: csv::Error| Error::Internal(format!("csv write: {e}"));
    wtr.write_record(&header).map_err(internal)?;
    for p in cohort.patients() {
        for e in &p.exams {
            let mut row = vec![
                p.patient_id.clone(),
                p.gender.as_str().to_string(),
                format!("{:?}", e.exam_time),
                format!("{:?}", e.age_at_exam),
                e.label.index().to_string(),
            ];
            row.extend(names.iter().map(|n| e.value(n).to_token()));
            wtr.write_record(&row).map_err(internal)?;
        }
    }
    wtr.flush().map_err(|e| Error::Internal(format!("csv flush: {e}")))
}

pub fn cohort_to_csv(cohort: &Cohort) -> Vec<u8> {
    let mut buf = Vec::new();
    write_cohort(&mut buf, cohort).expect("in-memory write");
    buf
}

pub fn save_cohort(path: &Path, cohort: &Cohort) -> Result<()> {
    write_file(path, &cohort_to_csv(cohort))
}

/// Encoded design matrix with `__patient_id,__exam_index` provenance columns.
pub fn sample_set_to_csv(set: &SampleSet) -> Vec<u8> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["__patient_id".to_string(), "__exam_index".to_string()];
    header.extend(set.feature_names.iter().cloned());
    header.push("label".into());
    wtr.write_record(&header).expect("in-memory write");
    for (i, (pid, exam)) in set.provenance.iter().enumerate() {
        let mut row = vec![pid.clone(), exam.to_string()];
        row.extend(set.x.row(i).iter().map(|v| format!("{v:?}")));
        row.push(set.y[i].index().to_string());
        wtr.write_record(&row).expect("in-memory write");
    }
    wtr.into_inner().expect("in-memory flush")
}

pub fn ranking_to_csv(ranking: &[FeatureImportance]) -> Vec<u8> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["feature", "mean_abs_shap", "rank"]).expect("in-memory write");
    for r in ranking {
        wtr.write_record([r.feature.clone(), format!("{:?}", r.mean_abs_shap), r.rank.to_string()])
            .expect("in-memory write");
    }
    wtr.into_inner().expect("in-memory flush")
}

pub fn points_to_csv(points: &[SummaryPoint]) -> Vec<u8> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["feature", "row_index", "shap_value", "feature_value"]).expect("in-memory write");
    for p in points {
        wtr.write_record([
            p.feature.clone(),
            p.row_index.to_string(),
            format!("{:?}", p.shap_value),
            format!("{:?}", p.feature_value),
        ])
        .expect("in-memory write");
    }
    wtr.into_inner().expect("in-memory flush")
}

/// Reads the long-form summary CSV written by [`points_to_csv`].
pub fn read_points(path: &Path) -> Result<Vec<SummaryPoint>> {
    let bytes = read_file(path)?;
    let source = path.display().to_string();
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let header = rdr.headers().map_err(|e| csv_err(&source, e))?.clone();
    let expected = ["feature", "row_index", "shap_value", "feature_value"];
    if header.iter().map(str::trim).ne(expected) {
        return Err(line_err(&source, 1, format!("expected header `{}`", expected.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&source, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| line_err(&source, line, format!("invalid {what}"));
        out.push(SummaryPoint {
            feature: rec[0].trim().to_string(),
            row_index: rec[1].trim().parse().map_err(|_| bad("row_index"))?,
            shap_value: rec[2].trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| bad("shap_value"))?,
            feature_value: rec[3].trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| bad("feature_value"))?,
        });
    }
    Ok(out)
}

/// JSON form of a raw value: null, integer level, string or number.
pub fn value_to_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Missing => serde_json::Value::Null,
        Value::Level(l) => (*l).into(),
        Value::Category(c) => c.clone().into(),
        Value::Real(r) => serde_json::Number::from_f64(*r).map_or(serde_json::Value::Null, Into::into),
    }
}
