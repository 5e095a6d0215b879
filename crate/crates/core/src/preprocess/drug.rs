//! Reduction of raw medication tokens to five drug classes.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::PreprocessError;

/// Ordered by precedence: combinations resolve to their highest class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DrugClass {
    None,
    #[serde(rename = "NSAID")]
    Nsaid,
    Corticosteroid,
    #[serde(rename = "ConventionalDMARD")]
    ConventionalDmard,
    #[serde(rename = "BiologicalDMARD")]
    BiologicalDmard,
}

impl DrugClass {
    pub const ALL: [DrugClass; 5] = [
        DrugClass::None,
        DrugClass::Nsaid,
        DrugClass::Corticosteroid,
        DrugClass::ConventionalDmard,
        DrugClass::BiologicalDmard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DrugClass::None => "None",
            DrugClass::Nsaid => "NSAID",
            DrugClass::Corticosteroid => "Corticosteroid",
            DrugClass::ConventionalDmard => "ConventionalDMARD",
            DrugClass::BiologicalDmard => "BiologicalDMARD",
        }
    }
}

/// Token → class table, serialized as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DrugMap(pub BTreeMap<String, DrugClass>);

#[rustfmt::skip]
const DEFAULT_DRUGS: &[(&str, DrugClass)] = &[
    ("none", DrugClass::None),
    ("ibuprofen", DrugClass::Nsaid),
    ("naproxen", DrugClass::Nsaid),
    ("diclofenac", DrugClass::Nsaid),
    ("indomethacin", DrugClass::Nsaid),
    ("piroxicam", DrugClass::Nsaid),
    ("meloxicam", DrugClass::Nsaid),
    ("celecoxib", DrugClass::Nsaid),
    ("ketoprofen", DrugClass::Nsaid),
    ("prednisolone", DrugClass::Corticosteroid),
    ("prednisone", DrugClass::Corticosteroid),
    ("methylprednisolone", DrugClass::Corticosteroid),
    ("triamcinolone", DrugClass::Corticosteroid),
    ("dexamethasone", DrugClass::Corticosteroid),
    ("betamethasone", DrugClass::Corticosteroid),
    ("methotrexate", DrugClass::ConventionalDmard),
    ("sulfasalazine", DrugClass::ConventionalDmard),
    ("leflunomide", DrugClass::ConventionalDmard),
    ("hydroxychloroquine", DrugClass::ConventionalDmard),
    ("ciclosporin", DrugClass::ConventionalDmard),
    ("azathioprine", DrugClass::ConventionalDmard),
    ("etanercept", DrugClass::BiologicalDmard),
    ("adalimumab", DrugClass::BiologicalDmard),
    ("infliximab", DrugClass::BiologicalDmard),
    ("tocilizumab", DrugClass::BiologicalDmard),
    ("abatacept", DrugClass::BiologicalDmard),
    ("anakinra", DrugClass::BiologicalDmard),
    ("canakinumab", DrugClass::BiologicalDmard),
    ("golimumab", DrugClass::BiologicalDmard),
    ("certolizumab", DrugClass::BiologicalDmard),
    ("rituximab", DrugClass::BiologicalDmard),
];

impl DrugMap {
    pub fn default_map() -> Self {
        DrugMap(DEFAULT_DRUGS.iter().map(|(t, c)| (t.to_string(), *c)).collect())
    }

    pub fn tokens(&self) -> Vec<String> {
        self.0.keys().cloned().collect()
    }

    pub fn get(&self, token: &str) -> Option<DrugClass> {
        self.0.get(token).copied()
    }

    /// Classifies a raw token. Empty means no medication; `a+b` combinations
    /// take the highest class of their parts. In lenient mode unmapped tokens
    /// become `None` and the second element reports the fallback.
    pub fn classify(&self, raw: &str, strict: bool) -> Result<(DrugClass, bool), PreprocessError> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Ok((DrugClass::None, false));
        }
        let norm = raw.to_ascii_lowercase();
        if let Some(c) = self.get(&norm) {
            return Ok((c, false));
        }
        if norm.contains('+') {
            let mut best = DrugClass::None;
            let mut fell_back = false;
            for part in norm.split('+') {
                let (c, fb) = self.classify(part, strict)?;
                best = best.max(c);
                fell_back |= fb;
            }
            return Ok((best, fell_back));
        }
        if strict {
            Err(PreprocessError::UnmappedDrug(raw.to_string()))
        } else {
            Ok((DrugClass::None, true))
        }
    }
}

/// Strict classification of a single raw token.
pub fn classify_drug(raw: &str, map: &DrugMap) -> Result<DrugClass, PreprocessError> {
    map.classify(raw, true).map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let m = DrugMap::default_map();
        assert_eq!(classify_drug("", &m).unwrap(), DrugClass::None);
        assert_eq!(classify_drug("ibuprofen", &m).unwrap(), DrugClass::Nsaid);
        assert_eq!(classify_drug("etanercept+methotrexate", &m).unwrap(), DrugClass::BiologicalDmard);
        assert_eq!(classify_drug("Prednisolone + ibuprofen", &m).unwrap(), DrugClass::Corticosteroid);
        assert!(matches!(classify_drug("snakeoil", &m), Err(PreprocessError::UnmappedDrug(_))));
        assert_eq!(m.classify("snakeoil", false).unwrap(), (DrugClass::None, true));
    }

    #[test]
    fn every_shipped_token_resolves_idempotently() {
        let m = DrugMap::default_map();
        for (tok, class) in &m.0 {
            let c = classify_drug(tok, &m).unwrap();
            assert_eq!(c, *class);
            // the class name is not a token, but re-mapping through the map is stable
            assert_eq!(classify_drug(tok, &m).unwrap(), c);
        }
        let classes: alloc::collections::BTreeSet<_> = m.0.values().collect();
        assert_eq!(classes.len(), 5);
    }

    #[test]
    fn precedence_is_commutative() {
        let m = DrugMap::default_map();
        let toks = m.tokens();
        for a in &toks {
            for b in toks.iter().step_by(5) {
                let ab = classify_drug(&alloc::format!("{a}+{b}"), &m).unwrap();
                let ba = classify_drug(&alloc::format!("{b}+{a}"), &m).unwrap();
                assert_eq!(ab, ba);
                assert_eq!(ab, m.get(a).unwrap().max(m.get(b).unwrap()));
            }
        }
    }
}
