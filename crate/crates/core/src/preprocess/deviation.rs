//! Deviation of a growth-dependent measurement from the mean of patients of
//! the same gender and age (integer years).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cohort::Gender;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBucket {
    pub gender: Gender,
    pub age_year: i32,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    /// Only buckets with at least `min_bucket_count` samples.
    pub buckets: Vec<AgeBucket>,
    pub global_mean: f64,
    pub min_bucket_count: usize,
}

pub fn age_year(age: f64) -> i32 {
    libm::floor(age) as i32
}

impl ReferenceTable {
    /// Fits bucket means from `(gender, age, value)` samples.
    pub fn fit(samples: impl IntoIterator<Item = (Gender, f64, f64)>, min_bucket_count: usize) -> Self {
        let mut acc: BTreeMap<(Gender, i32), (f64, usize)> = BTreeMap::new();
        let (mut total, mut n) = (0.0, 0usize);
        for (g, age, v) in samples {
            let e = acc.entry((g, age_year(age))).or_default();
            e.0 += v;
            e.1 += 1;
            total += v;
            n += 1;
        }
        let buckets = acc
            .into_iter()
            .filter(|(_, (_, c))| *c >= min_bucket_count.max(1))
            .map(|((gender, age_year), (s, c))| AgeBucket { gender, age_year, mean: s / c as f64, count: c })
            .collect();
        ReferenceTable { buckets, global_mean: if n == 0 { 0.0 } else { total / n as f64 }, min_bucket_count }
    }

    pub fn mean_for(&self, gender: Gender, age: f64) -> f64 {
        let y = age_year(age);
        self.buckets
            .iter()
            .find(|b| b.gender == gender && b.age_year == y && b.count >= self.min_bucket_count)
            .map_or(self.global_mean, |b| b.mean)
    }
}

/// `value − mean(gender, ⌊age⌋)`, falling back to the global mean for
/// sparsely populated buckets.
pub fn age_gender_deviation(value: f64, gender: Gender, age: f64, table: &ReferenceTable) -> f64 {
    value - table.mean_for(gender, age)
}
