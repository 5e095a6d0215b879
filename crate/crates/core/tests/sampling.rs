use rand::Rng;
use tmj_core::cohort::cohort_summary;
use tmj_core::sampling::{make_iid, make_lagged, make_temporal_segments};
use tmj_core::schema::FeatureSubset;
use tmj_core::synth::{generate_synthetic_cohort, ExamCountShape, SynthesisConfig};
use tmj_core::{rng, Cohort};

fn random_cohort(seed: u64) -> Cohort {
    let mut r = rng::stream(seed, 99, 0);
    let mut cfg = SynthesisConfig { n_patients: r.random_range(3..40), rng_seed: seed, ..Default::default() };
    cfg.exams_per_patient.shape =
        if r.random_bool(0.5) { ExamCountShape::Uniform } else { ExamCountShape::Geometric { mean: 5.95 } };
    cfg.mean_visit_interval_years = r.random_range(0.3..3.0);
    generate_synthetic_cohort(&cfg).unwrap()
}

#[test]
fn row_count_identities() {
    for seed in 0..100 {
        let c = random_cohort(seed);
        let expert = c.schema().subset(FeatureSubset::Expert);
        let iid = make_iid(&c, &expert).unwrap();
        assert_eq!(iid.len(), c.record_count());
        assert_eq!(iid.d(), 26);

        let segs = make_temporal_segments(&c, &[2.0, 5.0, 15.0], &expert).unwrap();
        assert_eq!(segs.len(), 3);
        let mut seen: Vec<(String, usize)> =
            segs.iter().flat_map(|s| s.rows.iter().map(|r| (r.patient_id.clone(), r.exam_index))).collect();
        seen.sort();
        let mut all: Vec<(String, usize)> = iid.rows.iter().map(|r| (r.patient_id.clone(), r.exam_index)).collect();
        all.sort();
        assert_eq!(seen, all, "segments must partition the exams");

        let summary = cohort_summary(&c);
        for k in 1..=3 {
            let lagged = make_lagged(&c, k, &expert).unwrap();
            let expected: usize = summary.exam_count_histogram.iter().map(|(e, n)| e.saturating_sub(k) * n).sum();
            let direct: usize = c.patients().iter().map(|p| p.exams.len().saturating_sub(k)).sum();
            assert_eq!(lagged.len(), expected);
            assert_eq!(lagged.len(), direct);
            assert_eq!(lagged.d(), 26 * (k + 1));
            assert_eq!(lagged.feature_names().len(), lagged.d());
        }
    }
}

#[test]
fn lag_blocks_repeat_previous_exam() {
    let c = random_cohort(7);
    let expert = c.schema().subset(FeatureSubset::Expert);
    let iid = make_iid(&c, &expert).unwrap();
    let lagged = make_lagged(&c, 2, &expert).unwrap();
    for row in &lagged.rows {
        for j in 1..=2 {
            let prev = iid
                .rows
                .iter()
                .find(|r| r.patient_id == row.patient_id && r.exam_index == row.exam_index - j)
                .unwrap();
            assert_eq!(row.blocks[j], prev.blocks[0]);
        }
        let cur = iid.rows.iter().find(|r| r.patient_id == row.patient_id && r.exam_index == row.exam_index).unwrap();
        assert_eq!(row.label, cur.label);
    }
}

#[test]
fn strategies_are_pure() {
    let c = random_cohort(11);
    let all = c.schema().subset(FeatureSubset::All);
    assert_eq!(make_iid(&c, &all).unwrap(), make_iid(&c, &all).unwrap());
    assert_eq!(make_lagged(&c, 1, &all).unwrap(), make_lagged(&c, 1, &all).unwrap());
}
