mod support;

use rand::Rng;
use support::{random_input, random_tree};
use tmj_core::explain::{brute_force_shap, forest_shap, tree_shap};
use tmj_core::forest::{fit, ForestHyperparams, FOREST_FORMAT_VERSION};
use tmj_core::{rng, Forest, Label, Matrix};

#[test]
fn tree_shap_equals_enumeration() {
    let mut r = rng::stream(77, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let d = r.random_range(1..=6);
        let depth = r.random_range(1..=3);
        let t = random_tree(&mut r, d, depth);
        let x = random_input(&mut r, d);
        let a = tree_shap(&t, &x).unwrap();
        let b = brute_force_shap(&t, &x).unwrap();
        for (p, q) in a.per_feature.iter().zip(&b.per_feature) {
            worst = worst.max((p - q).abs());
        }
        assert!((a.base_value - b.base_value).abs() <= 1e-12);
        assert!((b.output - t.predict(&x)).abs() <= 1e-12);
    }
    assert!(worst <= 1e-9, "max deviation {worst}");
}

#[test]
fn efficiency_of_enumeration() {
    let mut r = rng::stream(78, 0, 0);
    for _ in 0..100 {
        let d = r.random_range(1..=5);
        let t = random_tree(&mut r, d, 3);
        let x = random_input(&mut r, d);
        let b = brute_force_shap(&t, &x).unwrap();
        assert!((b.per_feature.iter().sum::<f64>() - (b.output - b.base_value)).abs() < 1e-12);
    }
}

fn forest_of(trees: Vec<tmj_core::Tree>, d: usize) -> Forest {
    Forest {
        format_version: FOREST_FORMAT_VERSION,
        trees,
        hyperparams: ForestHyperparams::default(),
        feature_names: (0..d).map(|i| format!("f{i}")).collect(),
        class_weights: [1.0, 1.0],
        oob_estimate: None,
    }
}

#[test]
fn local_accuracy_and_dummy_on_random_forests() {
    let mut r = rng::stream(79, 0, 0);
    for _ in 0..500 {
        let d = r.random_range(2..=8);
        let used = d - 1; // the last feature never appears
        let n = r.random_range(1..=6);
        let f = forest_of((0..n).map(|_| random_tree(&mut r, used, 4)).collect(), d);
        let x = random_input(&mut r, d);
        let a = forest_shap(&f, &x).unwrap();
        assert!(a.local_accuracy_gap() <= 1e-9);
        assert_eq!(a.output, f.predict_proba(&x).unwrap()[1]);
        assert_eq!(a.per_feature[d - 1], 0.0);
    }
}

#[test]
fn local_accuracy_on_fitted_forests() {
    let mut r = rng::stream(80, 0, 0);
    for case in 0..50 {
        let d = r.random_range(2..=6);
        let rows: Vec<Vec<f64>> = (0..120).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<Label> = rows.iter().map(|v| Label::from_bool(v[0] + v[1] * v[1] > 1.0 || r.random_bool(0.1))).collect();
        let x = Matrix::from_rows(d, &rows);
        let hp = ForestHyperparams { n_trees: 10, seed: case, ..Default::default() };
        let f = fit(&x, &y, &hp, (0..d).map(|i| format!("f{i}")).collect()).unwrap();
        for _ in 0..10 {
            let p: Vec<f64> = (0..d).map(|_| r.random_range(-2.5..2.5)).collect();
            let a = forest_shap(&f, &p).unwrap();
            assert!((a.base_value + a.per_feature.iter().sum::<f64>() - f.predict_proba(&p).unwrap()[1]).abs() <= 1e-9);
        }
    }
}

#[test]
fn linearity_over_two_trees() {
    let mut r = rng::stream(81, 0, 0);
    for _ in 0..100 {
        let d = r.random_range(1..=6);
        let (a, b) = (random_tree(&mut r, d, 3), random_tree(&mut r, d, 3));
        let x = random_input(&mut r, d);
        let both = forest_shap(&forest_of(vec![a.clone(), b.clone()], d), &x).unwrap();
        let (sa, sb) = (tree_shap(&a, &x).unwrap(), tree_shap(&b, &x).unwrap());
        for i in 0..d {
            assert_eq!(both.per_feature[i], (sa.per_feature[i] + sb.per_feature[i]) / 2.0);
        }
    }
}
