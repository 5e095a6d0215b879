//! Train/calibration/test partitioning, by patient (default) or by row.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: BTreeSet<String>,
    pub calib_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.calib_ids.len(), self.test_ids.len())
    }
}

/// Largest-remainder apportionment of `n` items; ties in the fractional part
/// go to the later partition.
pub fn apportion(n: usize, fractions: [f64; 3]) -> Result<[usize; 3], PreprocessError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(PreprocessError::Fractions);
    }
    let quotas = fractions.map(|f| f * n as f64);
    let mut sizes = quotas.map(|q| libm::floor(q + 1e-9) as usize);
    let mut rest = n - sizes.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    let frac = |i: usize| quotas[i] - sizes[i] as f64;
    order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).unwrap_or(core::cmp::Ordering::Equal).then(b.cmp(&a)));
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    Ok(sizes)
}

/// Shuffles patient ids with a seeded stream and cuts 80/10/10 (or the given
/// fractions). All exams of a patient land in one partition.
pub fn split_patients<'a>(
    patient_ids: impl IntoIterator<Item = &'a str>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment, PreprocessError> {
    let mut ids: Vec<String> = patient_ids.into_iter().map(String::from).collect();
    ids.sort();
    ids.dedup();
    if ids.len() < 3 {
        return Err(PreprocessError::TooFewPatients(ids.len()));
    }
    let [a, b, _] = apportion(ids.len(), fractions)?;
    ids.shuffle(&mut rng::stream(seed, domain::SPLIT, 0));
    let mut it = ids.into_iter();
    let train_ids = it.by_ref().take(a).collect();
    let calib_ids = it.by_ref().take(b).collect();
    let test_ids = it.collect();
    Ok(SplitAssignment { train_ids, calib_ids, test_ids, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSplit {
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

/// Row-level variant; rows of one patient may end up in different partitions.
pub fn split_rows(n: usize, fractions: [f64; 3], seed: u64) -> Result<RowSplit, PreprocessError> {
    if n < 3 {
        return Err(PreprocessError::TooFewPatients(n));
    }
    let [a, b, _] = apportion(n, fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, domain::SPLIT, 1));
    let mut train = idx[..a].to_vec();
    let mut calib = idx[a..a + b].to_vec();
    let mut test = idx[a + b..].to_vec();
    train.sort_unstable();
    calib.sort_unstable();
    test.sort_unstable();
    Ok(RowSplit { train, calib, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:04}")).collect()
    }

    #[test]
    fn largest_remainder() {
        // 1035 × (0.8, 0.1, 0.1) = (828.0, 103.5, 103.5)
        assert_eq!(apportion(1035, [0.8, 0.1, 0.1]).unwrap(), [828, 103, 104]);
        assert_eq!(apportion(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert_eq!(apportion(3, [0.8, 0.1, 0.1]).unwrap().iter().sum::<usize>(), 3);
        assert!(apportion(10, [0.8, 0.1, 0.2]).is_err());
    }

    #[test]
    fn patient_split() {
        let ids = ids(1035);
        let s = split_patients(ids.iter().map(|s| s.as_str()), [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!(s.sizes(), (828, 103, 104));
        assert!(s.train_ids.is_disjoint(&s.calib_ids));
        assert!(s.train_ids.is_disjoint(&s.test_ids));
        assert!(s.calib_ids.is_disjoint(&s.test_ids));
        let again = split_patients(ids.iter().map(|s| s.as_str()), [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!(s, again);
        let other = split_patients(ids.iter().map(|s| s.as_str()), [0.8, 0.1, 0.1], 43).unwrap();
        assert_ne!(s.test_ids, other.test_ids);
        let ten = self::ids(10);
        assert_eq!(split_patients(ten.iter().map(|s| s.as_str()), [0.8, 0.1, 0.1], 1).unwrap().sizes(), (8, 1, 1));
        assert_eq!(split_patients(["a", "b"], [0.8, 0.1, 0.1], 1), Err(PreprocessError::TooFewPatients(2)));
    }

    #[test]
    fn row_split_partitions() {
        let s = split_rows(100, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.calib.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.calib).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
