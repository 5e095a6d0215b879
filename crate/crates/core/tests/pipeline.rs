use tmj_core::preprocess::{fit_encoders, split_patients, DrugMap, PreprocessOptions};
use tmj_core::sampling::make_iid;
use tmj_core::schema::FeatureSubset;
use tmj_core::synth::{generate_synthetic_cohort, SynthesisConfig};
use tmj_core::{Gender, Label};

fn cohort() -> tmj_core::Cohort {
    generate_synthetic_cohort(&SynthesisConfig { n_patients: 150, rng_seed: 21, ..Default::default() }).unwrap()
}

#[test]
fn test_rows_never_influence_encoders() {
    let c = cohort();
    let raw = make_iid(&c, &c.schema().subset(FeatureSubset::Expert)).unwrap();
    let split = split_patients(c.patients().iter().map(|p| p.patient_id.as_str()), [0.8, 0.1, 0.1], 3).unwrap();
    let train = raw.filter_patients(|p| split.train_ids.contains(p));
    let test = raw.filter_patients(|p| split.test_ids.contains(p));
    let opts = PreprocessOptions { seed: 5, ..Default::default() };
    let enc = fit_encoders(&train, &DrugMap::default_map(), &opts).unwrap();

    // same training rows with altered test rows: identical state
    let mut noisy = raw.clone();
    for r in noisy.rows.iter_mut().filter(|r| split.test_ids.contains(&r.patient_id)) {
        r.label = r.label.other();
        r.blocks[0].age += 3.0;
    }
    let enc2 = fit_encoders(&noisy.filter_patients(|p| split.train_ids.contains(p)), &DrugMap::default_map(), &opts).unwrap();
    assert_eq!(serde_json::to_string(&enc).unwrap(), serde_json::to_string(&enc2).unwrap());

    // per-row transform: permuting or dropping test rows leaves others unchanged
    let full = enc.transform(&test).unwrap();
    let idx: Vec<usize> = (0..test.len()).rev().step_by(2).collect();
    let part = enc.transform(&test.select(&idx)).unwrap();
    for (k, &i) in idx.iter().enumerate() {
        assert_eq!(part.x.row(k), full.x.row(i));
    }
}

#[test]
fn training_columns_are_standardized() {
    let c = cohort();
    let raw = make_iid(&c, &c.schema().subset(FeatureSubset::All)).unwrap();
    let enc = fit_encoders(&raw, &DrugMap::default_map(), &PreprocessOptions::default()).unwrap();
    let s = enc.transform(&raw).unwrap();
    assert_eq!(s.d(), enc.d());
    for col in 0..s.d() {
        let v = s.x.column(col);
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1e-9, "{} mean {m}", s.feature_names[col]);
        assert!((sd - 1.0).abs() < 1e-9, "{} sd {sd}", s.feature_names[col]);
    }
    assert!(!s.feature_names.iter().any(|n| n == "involvementstatus"));
}

#[test]
fn encoder_serialization_is_deterministic() {
    let c = cohort();
    let raw = make_iid(&c, &c.schema().subset(FeatureSubset::Expert)).unwrap();
    let opts = PreprocessOptions { seed: 8, ..Default::default() };
    let a = serde_json::to_string(&fit_encoders(&raw, &DrugMap::default_map(), &opts).unwrap()).unwrap();
    let b = serde_json::to_string(&fit_encoders(&raw, &DrugMap::default_map(), &opts).unwrap()).unwrap();
    assert_eq!(a, b);
    let back: tmj_core::EncoderState = serde_json::from_str(&a).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), a);
}

#[test]
fn generated_signal_is_visible() {
    let c = generate_synthetic_cohort(&SynthesisConfig { n_patients: 400, ..SynthesisConfig::high_signal() }).unwrap();
    let mut sums = [(0.0, 0usize); 2];
    for (p, e) in c.records() {
        if let tmj_core::Value::Real(v) = e.value("openingmm") {
            let k = e.label.index();
            let adj = if p.gender == Gender::Male { v - 2.0 } else { *v };
            sums[k].0 += adj - 1.3 * e.age_at_exam.min(16.0);
            sums[k].1 += 1;
        }
    }
    let m0 = sums[0].0 / sums[0].1 as f64;
    let m1 = sums[1].0 / sums[1].1 as f64;
    assert!(m0 - m1 > 5.0, "{m0} vs {m1}");
    let female = c.patients().iter().filter(|p| p.gender == Gender::Female).count();
    assert_eq!(female, (400.0f64 * 690.0 / 1035.0).round() as usize);
    assert!(c.records().any(|(_, e)| e.label == Label::Tmj1));
}
