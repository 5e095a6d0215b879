//! Synthetic longitudinal cohorts with configurable label dynamics and
//! feature signal.
//!
//! Labels evolve per patient (baseline prevalence at the first exam, then a
//! per-year onset hazard). Every feature is driven by a standard normal
//! latent whose mean is shifted by its configured effect when the exam is
//! TMJ1. Mirrored features share part of their noise.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, CohortError, ExamRecord, Gender, Label, Patient, Value, MAX_EXAMS, MIN_EXAMS};
use crate::preprocess::drug::{DrugClass, DrugMap};
use crate::rng::{self, domain};
use crate::schema::{FeatureKind, FeatureSchema, Side, DRUG_FEATURE, TARGET_ADJACENT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExamCountShape {
    Uniform,
    /// Shifted geometric truncated to `[min, max]` with the given untruncated mean.
    Geometric { mean: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExamCountSpec {
    pub min: usize,
    pub max: usize,
    pub shape: ExamCountShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDynamics {
    pub baseline_prevalence: f64,
    pub onset_hazard_per_year: f64,
    pub persistence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub n_patients: usize,
    pub female_fraction: f64,
    pub exams_per_patient: ExamCountSpec,
    pub horizon_years: f64,
    pub label_dynamics: LabelDynamics,
    /// Raw feature name → shift of its latent between TMJ0 and TMJ1.
    pub signal_spec: BTreeMap<String, f64>,
    pub side_correlation: f64,
    pub rng_seed: u64,
    pub mean_visit_interval_years: f64,
    pub first_exam_age: (f64, f64),
    pub missing_rate: f64,
}

fn default_interval() -> f64 {
    1.0
}

fn default_first_age() -> (f64, f64) {
    (2.0, 14.0)
}

fn default_missing() -> f64 {
    0.02
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthesis config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: &'static str },
    #[error("signal_spec names unknown feature `{0}`")]
    UnknownSignalFeature(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

const EXPERT_SIGNAL: &[(&str, f64)] = &[
    ("krepitationleft", 0.8),
    ("krepitationright", 0.8),
    ("laterpalpleft", 0.7),
    ("laterpalpright", 0.7),
    ("laterotrusionleftmm", -0.6),
    ("laterotrusionrightmm", -0.6),
    ("openingmm", -0.9),
    ("opening", 0.6),
    ("painmoveleft", 0.6),
    ("painmoveright", 0.6),
    ("protrusion", 0.5),
    ("protrusionmm", -0.5),
    ("translationleft", -0.4),
    ("translationright", -0.4),
    ("chewingfunction", 0.4),
    ("asybasis", 0.4),
    ("drug", 0.5),
    ("involvementstatus", 1.0),
];

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n_patients: 1035,
            female_fraction: 690.0 / 1035.0,
            exams_per_patient: ExamCountSpec {
                min: MIN_EXAMS,
                max: MAX_EXAMS,
                shape: ExamCountShape::Geometric { mean: 6154.0 / 1035.0 },
            },
            horizon_years: 25.0,
            label_dynamics: LabelDynamics { baseline_prevalence: 0.3, onset_hazard_per_year: 0.08, persistence: true },
            signal_spec: EXPERT_SIGNAL.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            side_correlation: 0.6,
            rng_seed: 7,
            mean_visit_interval_years: default_interval(),
            first_exam_age: default_first_age(),
            missing_rate: default_missing(),
        }
    }
}

impl SynthesisConfig {
    /// Strong, label-driven signal on the expert features.
    pub fn high_signal() -> Self {
        let mut cfg = Self::default();
        cfg.signal_spec = EXPERT_SIGNAL.iter().map(|(k, v)| (k.to_string(), 2.5 * v)).collect();
        cfg.label_dynamics.baseline_prevalence = 0.4;
        cfg
    }

    /// Labels independent of every feature, classes balanced.
    pub fn no_signal() -> Self {
        let mut cfg = Self::default();
        cfg.signal_spec.clear();
        cfg.label_dynamics = LabelDynamics { baseline_prevalence: 0.5, onset_hazard_per_year: 0.0, persistence: true };
        cfg
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "high-signal" => Some(Self::high_signal()),
            "no-signal" => Some(Self::no_signal()),
            _ => None,
        }
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), SynthError> {
        let invalid = |field, reason| Err(SynthError::Invalid { field, reason });
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_patients == 0 {
            return invalid("n_patients", "must be at least 1");
        }
        if !prob(self.female_fraction) {
            return invalid("female_fraction", "must lie in [0, 1]");
        }
        let e = &self.exams_per_patient;
        if e.min < MIN_EXAMS || e.max > MAX_EXAMS || e.min > e.max {
            return invalid("exams_per_patient", "bounds must satisfy 2 <= min <= max <= 17");
        }
        if let ExamCountShape::Geometric { mean } = e.shape {
            if !(mean.is_finite() && mean >= e.min as f64) {
                return invalid("exams_per_patient", "geometric mean must be finite and at least min");
            }
        }
        if !(self.horizon_years.is_finite() && self.horizon_years > 0.0) {
            return invalid("horizon_years", "must be positive");
        }
        let d = &self.label_dynamics;
        if !prob(d.baseline_prevalence) {
            return invalid("label_dynamics.baseline_prevalence", "must lie in [0, 1]");
        }
        if !(d.onset_hazard_per_year.is_finite() && d.onset_hazard_per_year >= 0.0) {
            return invalid("label_dynamics.onset_hazard_per_year", "must be finite and non-negative");
        }
        if !prob(self.side_correlation) {
            return invalid("side_correlation", "must lie in [0, 1]");
        }
        if !(self.mean_visit_interval_years.is_finite() && self.mean_visit_interval_years > 0.0) {
            return invalid("mean_visit_interval_years", "must be positive");
        }
        let (a, b) = self.first_exam_age;
        if !(a.is_finite() && b.is_finite() && 0.0 <= a && a <= b) {
            return invalid("first_exam_age", "must be a finite range 0 <= low <= high");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return invalid("missing_rate", "must lie in [0, 1)");
        }
        for (k, v) in &self.signal_spec {
            if schema.get(k).is_none() {
                return Err(SynthError::UnknownSignalFeature(k.clone()));
            }
            if !v.is_finite() {
                return invalid("signal_spec", "effects must be finite");
            }
        }
        Ok(())
    }
}

fn exam_count(cfg: &ExamCountSpec, r: &mut rng::Rng) -> usize {
    match cfg.shape {
        ExamCountShape::Uniform => r.random_range(cfg.min..=cfg.max),
        ExamCountShape::Geometric { mean } => {
            let p = 1.0 / (mean - cfg.min as f64 + 1.0);
            let span = cfg.max - cfg.min;
            // inverse CDF of the geometric truncated to 0..=span
            let tail = libm::pow(1.0 - p, (span + 1) as f64);
            let u: f64 = r.random::<f64>() * (1.0 - tail);
            let k = if p >= 1.0 { 0.0 } else { libm::floor(libm::log1p(-u) / libm::log1p(-p)) };
            cfg.min + (k as usize).min(span)
        }
    }
}

fn exam_times(n: usize, cfg: &SynthesisConfig, r: &mut rng::Rng) -> Vec<f64> {
    let exp = Exp::new(1.0 / cfg.mean_visit_interval_years).expect("positive rate");
    let mut times = Vec::with_capacity(n);
    let mut t = 0.0;
    times.push(t);
    for _ in 1..n {
        t += 0.05 + exp.sample(r);
        times.push(t);
    }
    let last = times[n - 1];
    if last > cfg.horizon_years {
        let s = cfg.horizon_years / last;
        times.iter_mut().for_each(|t| *t *= s);
    }
    times
}

fn labels(times: &[f64], d: &LabelDynamics, r: &mut rng::Rng) -> Vec<Label> {
    let mut out = Vec::with_capacity(times.len());
    let mut cur = r.random::<f64>() < d.baseline_prevalence;
    out.push(Label::from_bool(cur));
    for w in times.windows(2) {
        let p = 1.0 - libm::exp(-d.onset_hazard_per_year * (w[1] - w[0]));
        let flip = r.random::<f64>() < p;
        if !cur {
            cur = flip;
        } else if !d.persistence && flip {
            cur = false;
        }
        out.push(Label::from_bool(cur));
    }
    out
}

fn bin(z: f64, cuts: &[f64]) -> u32 {
    cuts.iter().filter(|c| z > **c).count() as u32
}

fn cuts_for(levels: u32) -> Vec<f64> {
    // first level carries about 70% of TMJ0 mass, the rest split evenly
    (1..levels).map(|i| 0.5 + (i - 1) as f64 * 0.9).collect()
}

struct Context<'a> {
    schema: &'a FeatureSchema,
    drugs_by_class: Vec<Vec<String>>,
    cfg: &'a SynthesisConfig,
}

impl Context<'_> {
    fn continuous(&self, name: &str, z: f64, gender: Gender, age: f64) -> f64 {
        let male = matches!(gender, Gender::Male) as u8 as f64;
        let (mean, sd) = match name {
            "openingmm" => (30.0 + 1.3 * age.min(16.0) + 2.0 * male, 5.0),
            "protrusionmm" => (4.0 + 0.25 * age.min(16.0) + 0.5 * male, 1.5),
            "laterotrusionleftmm" | "laterotrusionrightmm" => (8.0, 2.0),
            "incisaloverjet" | "overjet" => (3.0, 1.5),
            "overbite" => (2.5, 1.5),
            _ => (5.0, 1.5),
        };
        let v = mean + sd * z;
        let v = if name == "overbite" { v } else { v.max(0.0) };
        libm::round(v * 10.0) / 10.0
    }

    fn drug(&self, z: f64, r: &mut rng::Rng) -> Value {
        let class = bin(z, &[0.0, 0.6, 1.1, 1.6]) as usize;
        let pool = &self.drugs_by_class[class];
        let Some(first) = pool.choose(r) else { return Value::Category("none".into()) };
        if class == 4 && r.random::<f64>() < 0.3 {
            if let Some(co) = self.drugs_by_class[3].choose(r) {
                return Value::Category(format!("{co}+{first}"));
            }
        }
        Value::Category(first.clone())
    }

    fn exam_values(&self, label: Label, gender: Gender, age: f64, r: &mut rng::Rng) -> BTreeMap<String, Value> {
        let y = label.index() as f64;
        let rho = self.cfg.side_correlation;
        let mut shared: BTreeMap<&str, f64> = BTreeMap::new();
        let mut out = BTreeMap::new();
        for spec in &self.schema.entries {
            // the left entry of each mirror pair draws the shared noise
            let own: f64 = r.sample(StandardNormal);
            let noise = match (&spec.side, &spec.mirror_of) {
                (Side::Right, Some(partner)) => match shared.get(partner.as_str()) {
                    Some(s) => rho * s + libm::sqrt(1.0 - rho * rho) * own,
                    None => {
                        shared.insert(spec.name.as_str(), own);
                        own
                    }
                },
                (Side::Left, Some(partner)) => match shared.get(partner.as_str()) {
                    Some(s) => rho * s + libm::sqrt(1.0 - rho * rho) * own,
                    None => {
                        shared.insert(spec.name.as_str(), own);
                        own
                    }
                },
                _ => own,
            };
            let effect = self.cfg.signal_spec.get(&spec.name).copied().unwrap_or(0.0);
            let z = noise + effect * y;
            let missing = spec.name != DRUG_FEATURE
                && spec.name != TARGET_ADJACENT
                && r.random::<f64>() < self.cfg.missing_rate;
            let value = if missing {
                Value::Missing
            } else {
                match &spec.kind {
                    FeatureKind::Binary => Value::Level(bin(z, &[1.0])),
                    FeatureKind::Ordinal { levels } => Value::Level(bin(z, &cuts_for(*levels))),
                    FeatureKind::Nominal { .. } if spec.name == DRUG_FEATURE => self.drug(z, r),
                    FeatureKind::Nominal { categories } => {
                        let k = bin(z, &cuts_for(categories.len() as u32)) as usize;
                        Value::Category(categories[k.min(categories.len() - 1)].clone())
                    }
                    FeatureKind::Continuous { .. } => Value::Real(self.continuous(&spec.name, z, gender, age)),
                }
            };
            out.insert(spec.name.clone(), value);
        }
        out
    }
}

/// Generates a cohort over the shipped default schema.
pub fn generate_synthetic_cohort(cfg: &SynthesisConfig) -> Result<Cohort, SynthError> {
    generate_with_schema(cfg, FeatureSchema::default_schema())
}

pub fn generate_with_schema(cfg: &SynthesisConfig, schema: FeatureSchema) -> Result<Cohort, SynthError> {
    cfg.validate(&schema)?;
    let map = DrugMap::default_map();
    let mut drugs_by_class = alloc::vec![Vec::new(); DrugClass::ALL.len()];
    if let Some(spec) = schema.get(DRUG_FEATURE) {
        if let FeatureKind::Nominal { categories } = &spec.kind {
            for c in categories {
                if let Some(class) = map.get(c) {
                    drugs_by_class[class as usize].push(c.clone());
                }
            }
        }
    }
    let n = cfg.n_patients;
    let n_female = libm::round(cfg.female_fraction * n as f64) as usize;
    let mut genders: Vec<Gender> = (0..n).map(|i| if i < n_female { Gender::Female } else { Gender::Male }).collect();
    genders.shuffle(&mut rng::stream(cfg.rng_seed, domain::COHORT, 0));

    let ctx = Context { schema: &schema, drugs_by_class, cfg };
    let width = (n.max(1).ilog10() + 1).max(4) as usize;
    let mut patients = Vec::with_capacity(n);
    for (i, gender) in genders.into_iter().enumerate() {
        let mut r = rng::stream(cfg.rng_seed, domain::PATIENT, i as u64);
        let count = exam_count(&cfg.exams_per_patient, &mut r);
        let times = exam_times(count, cfg, &mut r);
        let labels = labels(&times, &cfg.label_dynamics, &mut r);
        let (lo, hi) = cfg.first_exam_age;
        let first_age = if hi > lo { r.random_range(lo..hi) } else { lo };
        let patient_id = format!("P{i:0width$}");
        let exams = times
            .iter()
            .zip(&labels)
            .map(|(&t, &label)| {
                let age = first_age + t;
                ExamRecord {
                    patient_id: patient_id.clone(),
                    exam_time: t,
                    age_at_exam: age,
                    values: ctx.exam_values(label, gender, age, &mut r),
                    label,
                }
            })
            .collect();
        patients.push(Patient { patient_id, gender, exams });
    }
    Ok(Cohort::new(schema, patients)?)
}
