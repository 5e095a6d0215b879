//! Declarative description of the clinical variables recorded at each
//! examination.
//!
//! The shipped default schema lists the orofacial examination variables with
//! their kind, facial side and membership of the 26-variable expert subset.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::drug::DrugMap;

/// Name of the medication variable, which is reduced to drug classes.
pub const DRUG_FEATURE: &str = "drug";
/// Target-adjacent variable that is never part of a design matrix.
pub const TARGET_ADJACENT: &str = "involvementstatus";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    Binary,
    /// Integer levels `0..levels`, ordered.
    Ordinal { levels: u32 },
    /// Unordered categories; the declared order is used only for side merging.
    Nominal { categories: Vec<String> },
    Continuous { unit: String },
}

impl FeatureKind {
    pub fn is_categorical(&self) -> bool {
        !matches!(self, FeatureKind::Continuous { .. })
    }

    pub fn level_count(&self) -> Option<u32> {
        match self {
            FeatureKind::Binary => Some(2),
            FeatureKind::Ordinal { levels } => Some(*levels),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub side: Side,
    pub expert: bool,
    #[serde(default)]
    pub mirror_of: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("duplicate feature name `{0}`")]
    Duplicate(String),
    #[error("feature `{0}`: {1}")]
    Mirror(String, String),
    #[error("merged name `{merged}` of `{left}`/`{right}` collides with an existing feature")]
    MergedCollision { left: String, right: String, merged: String },
    #[error("feature `{0}`: ordinal features need at least two levels")]
    Levels(String),
    #[error("feature `{0}`: nominal features need at least one category")]
    Categories(String),
    #[error("unknown feature `{0}`")]
    Unknown(String),
}

/// A left/right mirror pair and the name of the merged feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorPair {
    pub left: String,
    pub right: String,
    pub merged: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSchema {
    pub entries: Vec<FeatureSpec>,
}

/// Removes the side token that distinguishes `left` from `right`, using the
/// known partner to pick the right occurrence (`clicklateroleftleft`).
pub fn merged_name(left: &str, right: &str) -> Option<String> {
    let mut start = 0;
    while let Some(pos) = left[start..].find("left") {
        let at = start + pos;
        let (a, b) = (&left[..at], &left[at + 4..]);
        if right.len() == a.len() + 5 + b.len()
            && right.starts_with(a)
            && right.ends_with(b)
            && &right[a.len()..a.len() + 5] == "right"
        {
            let mut m = String::with_capacity(a.len() + b.len());
            m.push_str(a);
            m.push_str(b);
            return Some(m);
        }
        start = at + 1;
    }
    None
}

impl FeatureSchema {
    pub fn new(entries: Vec<FeatureSpec>) -> Result<Self, SchemaError> {
        let s = Self { entries };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(SchemaError::Duplicate(e.name.clone()));
            }
            match &e.kind {
                FeatureKind::Ordinal { levels } if *levels < 2 => {
                    return Err(SchemaError::Levels(e.name.clone()))
                }
                FeatureKind::Nominal { categories } if categories.is_empty() => {
                    return Err(SchemaError::Categories(e.name.clone()))
                }
                _ => {}
            }
        }
        for e in &self.entries {
            match (e.side, &e.mirror_of) {
                (Side::None, None) => {}
                (Side::None, Some(_)) => {
                    return Err(SchemaError::Mirror(e.name.clone(), "unsided feature declares a mirror".into()))
                }
                (_, None) => {
                    return Err(SchemaError::Mirror(e.name.clone(), "sided feature lacks a mirror".into()))
                }
                (side, Some(m)) => {
                    let other = self
                        .get(m)
                        .ok_or_else(|| SchemaError::Mirror(e.name.clone(), format!("mirror `{m}` not in schema")))?;
                    let expected = if side == Side::Left { Side::Right } else { Side::Left };
                    if other.side != expected {
                        return Err(SchemaError::Mirror(e.name.clone(), format!("mirror `{m}` is not on the opposite side")));
                    }
                    if other.mirror_of.as_deref() != Some(e.name.as_str()) {
                        return Err(SchemaError::Mirror(e.name.clone(), format!("mirror `{m}` does not point back")));
                    }
                    if other.kind != e.kind {
                        return Err(SchemaError::Mirror(e.name.clone(), format!("mirror `{m}` has a different kind")));
                    }
                }
            }
        }
        for p in self.mirror_pairs_unchecked()? {
            if seen.contains(p.merged.as_str()) {
                return Err(SchemaError::MergedCollision { left: p.left, right: p.right, merged: p.merged });
            }
        }
        Ok(())
    }

    fn mirror_pairs_unchecked(&self) -> Result<Vec<MirrorPair>, SchemaError> {
        let mut out = Vec::new();
        for e in &self.entries {
            if e.side == Side::Left {
                let right = e.mirror_of.clone().unwrap_or_default();
                let merged = merged_name(&e.name, &right).ok_or_else(|| {
                    SchemaError::Mirror(e.name.clone(), format!("cannot derive a merged name with `{right}`"))
                })?;
                out.push(MirrorPair { left: e.name.clone(), right, merged });
            }
        }
        Ok(out)
    }

    /// All left/right pairs in schema order of the left entry.
    pub fn mirror_pairs(&self) -> Vec<MirrorPair> {
        self.mirror_pairs_unchecked().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSpec> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn expert_names(&self) -> Vec<String> {
        self.entries.iter().filter(|e| e.expert).map(|e| e.name.clone()).collect()
    }

    /// Resolves a named feature subset. `all` excludes the target-adjacent
    /// variable; `expert` is the schema-declared expert subset.
    pub fn subset(&self, which: FeatureSubset) -> Vec<String> {
        match which {
            FeatureSubset::All => self
                .entries
                .iter()
                .filter(|e| e.name != TARGET_ADJACENT)
                .map(|e| e.name.clone())
                .collect(),
            FeatureSubset::Expert => self
                .entries
                .iter()
                .filter(|e| e.expert && e.name != TARGET_ADJACENT)
                .map(|e| e.name.clone())
                .collect(),
        }
    }

    /// Restricts the schema to `names`, keeping schema order. Mirror partners
    /// must both be present or both absent.
    pub fn restrict(&self, names: &[String]) -> Result<FeatureSchema, SchemaError> {
        let wanted: BTreeSet<&str> = names.iter().map(|s| s.as_str()).collect();
        for n in &wanted {
            let spec = self.get(n).ok_or_else(|| SchemaError::Unknown(n.to_string()))?;
            if let Some(m) = &spec.mirror_of {
                if !wanted.contains(m.as_str()) {
                    return Err(SchemaError::Mirror(n.to_string(), format!("subset lacks mirror `{m}`")));
                }
            }
        }
        FeatureSchema::new(self.entries.iter().filter(|e| wanted.contains(e.name.as_str())).cloned().collect())
    }

    /// Lookup table by name.
    pub fn by_name(&self) -> BTreeMap<&str, &FeatureSpec> {
        self.entries.iter().map(|e| (e.name.as_str(), e)).collect()
    }

    /// The shipped default schema.
    pub fn default_schema() -> FeatureSchema {
        let drug_tokens = DrugMap::default_map().tokens();
        let mut entries = Vec::with_capacity(DEFAULT_TABLE.len());
        for &(name, kind, side, expert) in DEFAULT_TABLE {
            let kind = match kind {
                K::Bin => FeatureKind::Binary,
                K::Ord(levels) => FeatureKind::Ordinal { levels },
                K::Nom(cats) => FeatureKind::Nominal { categories: cats.iter().map(|c| c.to_string()).collect() },
                K::Drug => FeatureKind::Nominal { categories: drug_tokens.clone() },
                K::Mm => FeatureKind::Continuous { unit: "mm".into() },
            };
            let (side, mirror_of) = match side {
                None => (Side::None, None),
                Some((s, partner)) => (s, Some(partner.to_string())),
            };
            entries.push(FeatureSpec { name: name.to_string(), kind, side, expert, mirror_of });
        }
        FeatureSchema::new(entries).expect("default schema is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    All,
    Expert,
}

#[derive(Clone, Copy)]
enum K {
    Bin,
    Ord(u32),
    Nom(&'static [&'static str]),
    Drug,
    Mm,
}

const L: Side = Side::Left;
const R: Side = Side::Right;

const PROFILE: &[&str] = &["straight", "convex", "concave"];
const OPENING: &[&str] = &["straight", "deviation", "deflection"];
const PROTRUSION: &[&str] = &["straight", "deviation", "deflection"];
const LOWERFACE: &[&str] = &["normal", "short", "long"];
const LIPS: &[&str] = &["competent", "incompetent", "strained"];
const RESPIRATION: &[&str] = &["nasal", "oral", "mixed"];
const SPACE: &[&str] = &["normal", "crowding", "spacing"];
const TRANSVERSAL: &[&str] = &["normal", "crossbite", "scissorbite"];

#[rustfmt::skip]
const DEFAULT_TABLE: &[(&str, K, Option<(Side, &str)>, bool)] = &[
    ("abrasion", K::Ord(3), None, false),
    ("aplasia", K::Bin, None, false),
    ("asybasis", K::Bin, None, true),
    ("asymenton", K::Bin, None, false),
    ("asyoccl", K::Bin, None, true),
    ("asypupilline", K::Bin, None, true),
    ("asyupmid", K::Bin, None, false),
    ("asymmetrymasseterright", K::Bin, Some((R, "asymmetrymasseterleft")), false),
    ("asymmetrymasseterleft", K::Bin, Some((L, "asymmetrymasseterright")), false),
    ("backbending", K::Bin, None, false),
    ("bruxism", K::Bin, None, false),
    ("chewingfunction", K::Ord(3), None, true),
    ("clickclosingright", K::Bin, Some((R, "clickclosingleft")), false),
    ("clickclosingleft", K::Bin, Some((L, "clickclosingright")), false),
    ("clicklateroleftright", K::Bin, Some((R, "clicklateroleftleft")), false),
    ("clicklateroleftleft", K::Bin, Some((L, "clicklateroleftright")), false),
    ("clicklaterorightright", K::Bin, Some((R, "clicklaterorightleft")), false),
    ("clicklaterorightleft", K::Bin, Some((L, "clicklaterorightright")), false),
    ("clickopeningright", K::Bin, Some((R, "clickopeningleft")), false),
    ("clickopeningleft", K::Bin, Some((L, "clickopeningright")), false),
    ("clickprotrusionright", K::Bin, Some((R, "clickprotrusionleft")), false),
    ("clickprotrusionleft", K::Bin, Some((L, "clickprotrusionright")), false),
    ("crepitationleft", K::Bin, Some((L, "crepitationright")), false),
    ("crepitationright", K::Bin, Some((R, "crepitationleft")), false),
    ("deepbite", K::Bin, None, true),
    ("drug", K::Drug, None, true),
    ("dualbite", K::Bin, None, false),
    ("forwardbending", K::Bin, None, false),
    ("headache", K::Ord(3), None, false),
    ("hypermobilityleft", K::Bin, Some((L, "hypermobilityright")), false),
    ("hypermobilityright", K::Bin, Some((R, "hypermobilityleft")), false),
    ("incisaloverjet", K::Mm, None, false),
    ("involvementstatus", K::Ord(3), None, false),
    ("krepitationleft", K::Bin, Some((L, "krepitationright")), true),
    ("krepitationright", K::Bin, Some((R, "krepitationleft")), true),
    ("laterpalpleft", K::Ord(3), Some((L, "laterpalpright")), true),
    ("laterpalpright", K::Ord(3), Some((R, "laterpalpleft")), true),
    ("laterotrusionleftmm", K::Mm, Some((L, "laterotrusionrightmm")), true),
    ("laterotrusionrightmm", K::Mm, Some((R, "laterotrusionleftmm")), true),
    ("lockleft", K::Bin, Some((L, "lockright")), false),
    ("lockright", K::Bin, Some((R, "lockleft")), false),
    ("lips", K::Nom(LIPS), None, false),
    ("lowerface", K::Nom(LOWERFACE), None, true),
    ("masseterleft", K::Ord(3), Some((L, "masseterright")), false),
    ("masseterright", K::Ord(3), Some((R, "masseterleft")), false),
    ("micrognathism", K::Bin, None, false),
    ("morningstiffness", K::Bin, None, false),
    ("muscularpainleft", K::Bin, Some((L, "muscularpainright")), false),
    ("muscularpainright", K::Bin, Some((R, "muscularpainleft")), false),
    ("neckpain", K::Bin, None, false),
    ("neckpalpation", K::Bin, None, false),
    ("neckstiffness", K::Bin, None, false),
    ("opening", K::Nom(OPENING), None, true),
    ("openingfunction", K::Ord(3), None, false),
    ("openingmm", K::Mm, None, true),
    ("overbite", K::Mm, None, true),
    ("overjet", K::Mm, None, true),
    ("painleft", K::Ord(3), Some((L, "painright")), false),
    ("painright", K::Ord(3), Some((R, "painleft")), false),
    ("painmoveright", K::Ord(3), Some((R, "painmoveleft")), true),
    ("painmoveleft", K::Ord(3), Some((L, "painmoveright")), true),
    ("ptext", K::Bin, None, false),
    ("ptint", K::Bin, None, false),
    ("profile", K::Nom(PROFILE), None, true),
    ("protrusion", K::Nom(PROTRUSION), None, true),
    ("protrusionmm", K::Mm, None, true),
    ("respiration", K::Nom(RESPIRATION), None, false),
    ("rotationleft", K::Bin, Some((L, "rotationright")), false),
    ("rotationright", K::Bin, Some((R, "rotationleft")), false),
    ("sagittalrelationleft", K::Ord(3), Some((L, "sagittalrelationright")), false),
    ("sagittalrelationright", K::Ord(3), Some((R, "sagittalrelationleft")), false),
    ("spacerelationship", K::Nom(SPACE), None, false),
    ("sternoleft", K::Ord(3), Some((L, "sternoright")), false),
    ("sternoright", K::Ord(3), Some((R, "sternoleft")), false),
    ("swollenjointright", K::Bin, Some((R, "swollenjointleft")), false),
    ("swollenjointleft", K::Bin, Some((L, "swollenjointright")), false),
    ("swollenleft", K::Bin, Some((L, "swollenright")), false),
    ("swollenright", K::Bin, Some((R, "swollenleft")), false),
    ("temporalisleft", K::Ord(3), Some((L, "temporalisright")), false),
    ("temporalisright", K::Ord(3), Some((R, "temporalisleft")), false),
    ("tempsenleft", K::Bin, Some((L, "tempsenright")), false),
    ("tempsenright", K::Bin, Some((R, "tempsenleft")), false),
    ("tongue", K::Bin, None, false),
    ("tractionleft", K::Bin, Some((L, "tractionright")), false),
    ("tractionright", K::Bin, Some((R, "tractionleft")), false),
    ("transversal", K::Nom(TRANSVERSAL), None, false),
    ("translationleft", K::Bin, Some((L, "translationright")), true),
    ("translationright", K::Bin, Some((R, "translationleft")), true),
    ("postpalpright", K::Ord(3), Some((R, "postpalpleft")), false),
    ("postpalpleft", K::Ord(3), Some((L, "postpalpright")), false),
    ("openbite", K::Bin, None, true),
    ("retrognathism", K::Bin, None, true),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_counts() {
        let s = FeatureSchema::default_schema();
        assert_eq!(s.expert_names().len(), 26);
        assert_eq!(s.subset(FeatureSubset::Expert).len(), 26);
        // first-occurrence dedup of the listed variables, the two expert-only
        // variables and the missing `painright` mirror partner
        assert_eq!(s.len(), 92);
        assert_eq!(s.subset(FeatureSubset::All).len(), 91);
    }

    #[test]
    fn merged_names() {
        assert_eq!(merged_name("krepitationleft", "krepitationright").as_deref(), Some("krepitation"));
        assert_eq!(merged_name("laterotrusionleftmm", "laterotrusionrightmm").as_deref(), Some("laterotrusionmm"));
        assert_eq!(merged_name("clicklateroleftleft", "clicklateroleftright").as_deref(), Some("clicklateroleft"));
        assert_eq!(merged_name("clicklaterorightleft", "clicklaterorightright").as_deref(), Some("clicklateroright"));
        assert_eq!(merged_name("abc", "abd"), None);
    }

    #[test]
    fn expert_pairs_merge_to_21() {
        let s = FeatureSchema::default_schema();
        let expert = s.restrict(&s.expert_names()).unwrap();
        assert_eq!(expert.mirror_pairs().len(), 5);
    }

    #[test]
    fn rejects_broken_mirrors() {
        let mk = |name: &str, side, mirror: Option<&str>| FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Binary,
            side,
            expert: false,
            mirror_of: mirror.map(Into::into),
        };
        let e = FeatureSchema::new(alloc::vec![mk("aleft", Side::Left, Some("aright"))]);
        assert!(matches!(e, Err(SchemaError::Mirror(..))));
        let e = FeatureSchema::new(alloc::vec![mk("a", Side::None, None), mk("a", Side::None, None)]);
        assert_eq!(e, Err(SchemaError::Duplicate("a".into())));
        let ok = FeatureSchema::new(alloc::vec![
            mk("aleft", Side::Left, Some("aright")),
            mk("aright", Side::Right, Some("aleft"))
        ]);
        assert!(ok.is_ok());
        let mut bad_kind = mk("aright", Side::Right, Some("aleft"));
        bad_kind.kind = FeatureKind::Ordinal { levels: 3 };
        let e = FeatureSchema::new(alloc::vec![mk("aleft", Side::Left, Some("aright")), bad_kind]);
        assert!(matches!(e, Err(SchemaError::Mirror(..))));
        let e = FeatureSchema::new(alloc::vec![
            mk("aleft", Side::Left, Some("aright")),
            mk("aright", Side::Right, Some("aleft")),
            mk("a", Side::None, None)
        ]);
        assert!(matches!(e, Err(SchemaError::MergedCollision { .. })));
    }

    #[test]
    fn subset_requires_both_sides() {
        let s = FeatureSchema::default_schema();
        assert!(s.restrict(&["krepitationleft".into()]).is_err());
        assert!(s.restrict(&["nonexistent".into()]).is_err());
    }
}
