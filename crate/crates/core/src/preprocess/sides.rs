//! Left/right merging: a mirror pair collapses to one feature holding the
//! common value, or the higher of the two.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::cohort::Value;
use crate::schema::{FeatureKind, FeatureSchema, FeatureSpec};

/// Rank of a value in the feature's declared order.
fn rank(kind: &FeatureKind, v: &Value) -> Option<f64> {
    match (kind, v) {
        (_, Value::Level(l)) => Some(*l as f64),
        (_, Value::Real(r)) => Some(*r),
        (FeatureKind::Nominal { categories }, Value::Category(c)) => {
            categories.iter().position(|x| x == c).map(|p| p as f64)
        }
        _ => None,
    }
}

/// Merges one pair of values of the same kind.
pub fn merge_pair(spec: &FeatureSpec, left: &Value, right: &Value) -> Value {
    if left == right {
        return left.clone();
    }
    match (left, right) {
        (Value::Missing, v) | (v, Value::Missing) => v.clone(),
        _ => match (rank(&spec.kind, left), rank(&spec.kind, right)) {
            (Some(a), Some(b)) => {
                if b > a {
                    right.clone()
                } else {
                    left.clone()
                }
            }
            (Some(_), None) => left.clone(),
            (None, Some(_)) => right.clone(),
            // both undeclared categories: deterministic choice independent of side
            (None, None) => {
                if left.to_token() >= right.to_token() {
                    left.clone()
                } else {
                    right.clone()
                }
            }
        },
    }
}

/// Collapses every mirror pair of `schema` present in `values` to its merged
/// name; unsided features pass through unchanged.
pub fn merge_sides(values: &BTreeMap<String, Value>, schema: &FeatureSchema) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    let pairs = schema.mirror_pairs();
    for (k, v) in values {
        if schema.get(k).is_some_and(|s| s.mirror_of.is_none()) {
            out.insert(k.clone(), v.clone());
        }
    }
    for p in pairs {
        let l = values.get(&p.left).unwrap_or(&Value::Missing);
        let r = values.get(&p.right).unwrap_or(&Value::Missing);
        if values.contains_key(&p.left) || values.contains_key(&p.right) {
            let spec = schema.get(&p.left).expect("pair member in schema");
            out.insert(p.merged, merge_pair(spec, l, r));
        }
    }
    out
}
