use std::collections::BTreeSet;

use proptest::prelude::*;
use serde_json::json;
use tmj::config::{merge, ConfigFile};
use tmj::experiment::{compare_strategies, partition, run_experiment, split_cohort, strategy_rows, ExperimentConfig};
use tmj::io;
use tmj::TrainedModel;
use tmj_core::preprocess::DrugMap;
use tmj_core::schema::{FeatureSchema, FeatureSubset};
use tmj_core::synth::{generate_synthetic_cohort, SynthesisConfig};
use tmj_core::{Cohort, StrategyTag};

fn cohort(preset: &str, patients: usize, seed: u64) -> Cohort {
    let mut cfg = SynthesisConfig::preset(preset).unwrap();
    cfg.n_patients = patients;
    cfg.rng_seed = seed;
    generate_synthetic_cohort(&cfg).unwrap()
}

fn config(strategy: StrategyTag, seed: u64, trees: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { strategy, ..ExperimentConfig::default() };
    cfg.set_seed(seed);
    cfg.forest.n_trees = trees;
    cfg.shap_rows = Some(10);
    cfg
}

#[test]
fn same_seed_same_bytes() {
    let c = cohort("high-signal", 80, 3);
    let map = DrugMap::default_map();
    let cfg = config(StrategyTag::Lagged { k: 1 }, 9, 12);
    let a = run_experiment(&c, &cfg, &map).unwrap();
    let b = run_experiment(&c, &cfg, &map).unwrap();
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.model.to_bytes(), b.model.to_bytes());

    let other = run_experiment(&c, &config(StrategyTag::Lagged { k: 1 }, 10, 12), &map).unwrap();
    assert_ne!(a.model.to_bytes(), other.model.to_bytes());
}

#[test]
fn partitions_never_share_patients() {
    let c = cohort("default", 120, 5);
    for strategy in [StrategyTag::Iid, StrategyTag::Temporal { segment: 1 }, StrategyTag::Lagged { k: 2 }] {
        let rows = strategy_rows(&c, strategy, FeatureSubset::Expert, &[2.0, 5.0, 15.0]).unwrap();
        let split = split_cohort(&c, [0.8, 0.1, 0.1], 77).unwrap();
        let parts = partition(&rows, &split).unwrap();
        let ids: Vec<BTreeSet<&str>> = parts.iter().map(|p| p.rows.iter().map(|r| r.patient_id.as_str()).collect()).collect();
        assert!(ids[0].is_disjoint(&ids[1]) && ids[0].is_disjoint(&ids[2]) && ids[1].is_disjoint(&ids[2]));
        assert_eq!(parts.iter().map(|p| p.rows.len()).sum::<usize>(), rows.rows.len());
        assert!(ids[0].iter().all(|id| split.train_ids.contains(*id)));
    }
}

#[test]
fn lagged_dimension_counts_raw_blocks() {
    let c = cohort("high-signal", 60, 1);
    let map = DrugMap::default_map();
    for (k, d) in [(1, 52), (2, 78)] {
        let out = run_experiment(&c, &config(StrategyTag::Lagged { k }, 1, 5), &map).unwrap();
        assert_eq!(out.report.d, d);
        assert_eq!(out.model.previous_exams_required(), k);
    }
}

#[test]
fn comparison_expands_temporal_segments_over_one_split() {
    let c = cohort("high-signal", 70, 2);
    let mut first = config(StrategyTag::Iid, 4, 5);
    first.split_seed = 123;
    let configs = [first, config(StrategyTag::Temporal { segment: 0 }, 8, 5)];
    let cmp = compare_strategies(&c, &configs, &DrugMap::default_map()).unwrap();
    let names: Vec<&str> = cmp.reports.iter().map(|r| r.strategy.as_str()).collect();
    assert_eq!(names, ["iid", "temporal segment 0", "temporal segment 1", "temporal segment 2"]);
    assert!(cmp.reports.iter().all(|r| r.seeds.split == 123));
    assert_eq!(cmp.reports[1].seeds.forest, 8);
}

#[test]
fn no_signal_cohort_scores_near_chance() {
    let c = cohort("no-signal", 900, 21);
    let mut cfg = config(StrategyTag::Iid, 21, 60);
    cfg.forest.min_samples_leaf = 5;
    let out = run_experiment(&c, &cfg, &DrugMap::default_map()).unwrap();
    assert!((out.report.macro_f1 - 0.5).abs() < 0.1, "macro F1 {}", out.report.macro_f1);
}

#[test]
fn high_signal_cohort_separates_classes() {
    let c = cohort("high-signal", 300, 6);
    let out = run_experiment(&c, &config(StrategyTag::Iid, 6, 40), &DrugMap::default_map()).unwrap();
    assert!(out.report.macro_f1 > 0.9, "macro F1 {}", out.report.macro_f1);
    assert!(out.report.conformal.marginal_coverage > 0.8);
}

#[test]
fn model_round_trips_through_bytes() {
    let c = cohort("high-signal", 50, 8);
    let out = run_experiment(&c, &config(StrategyTag::Lagged { k: 1 }, 3, 6), &DrugMap::default_map()).unwrap();
    let bytes = out.model.to_bytes();
    let back = TrainedModel::from_bytes(&bytes, "memory").unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let p = &c.patients()[0];
    let req = out.model.request_for_exam(p, 1).unwrap();
    assert_eq!(out.model.predict(&req).unwrap(), back.predict(&req).unwrap());
    assert!(TrainedModel::from_bytes(&bytes[..bytes.len() / 2], "memory").is_err());
}

#[test]
fn manifest_parameters_load_as_config() {
    let dir = tempfile::tempdir().unwrap();
    let params = json!({"experiment": {"strategy": {"strategy": "lagged", "k": 2}, "forest": {"n_trees": 7}}});
    let manifest = json!({"command": "train", "parameters": params, "seeds": {}});
    let path = dir.path().join("m.json");
    io::write_json(&path, &manifest).unwrap();
    let cfg = ConfigFile::load(&path).unwrap();
    assert_eq!(cfg.experiment.strategy, StrategyTag::Lagged { k: 2 });
    assert_eq!(cfg.experiment.forest.n_trees, 7);
    assert_eq!(cfg.experiment.conformal, ExperimentConfig::default().conformal);
}

fn json_value() -> impl Strategy<Value = serde_json::Value> {
    let leaf = prop_oneof![
        Just(serde_json::Value::Null),
        any::<bool>().prop_map(serde_json::Value::from),
        (-1000i64..1000).prop_map(serde_json::Value::from),
        "[a-c]{0,3}".prop_map(serde_json::Value::from),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| prop::collection::btree_map("[a-d]", inner, 0..4).prop_map(|m| json!(m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cohort_csv_round_trips(seed in any::<u64>(), patients in 1usize..12, preset in prop_oneof![Just("default"), Just("high-signal"), Just("no-signal")]) {
        let c = cohort(preset, patients, seed);
        let bytes = io::cohort_to_csv(&c);
        let back = io::read_cohort(bytes.as_slice(), &FeatureSchema::default_schema(), true, "memory").unwrap();
        prop_assert_eq!(io::cohort_to_csv(&back), bytes);
        prop_assert_eq!(back.record_count(), c.record_count());
    }

    #[test]
    fn merge_is_idempotent_and_null_neutral(base in json_value(), top in json_value()) {
        let mut once = base.clone();
        merge(&mut once, &top);
        let mut twice = once.clone();
        merge(&mut twice, &top);
        prop_assert_eq!(&once, &twice);
        let mut unchanged = base.clone();
        merge(&mut unchanged, &serde_json::Value::Null);
        prop_assert_eq!(unchanged, base);
    }

    #[test]
    fn config_serialization_round_trips(seed in any::<u64>(), k in 1usize..5, alpha in 0.01f64..0.5, trees in 1usize..200) {
        let mut cfg = ExperimentConfig { strategy: StrategyTag::Lagged { k }, ..ExperimentConfig::default() };
        cfg.set_seed(seed);
        cfg.conformal.alpha = alpha;
        cfg.forest.n_trees = trees;
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
