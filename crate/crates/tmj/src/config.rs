//! JSON config files. Sections override defaults; CLI flags override
//! sections. A run manifest is itself accepted as a config: its
//! `parameters` object is the resolved config of that run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tmj_core::preprocess::DrugMap;
use tmj_core::{FeatureSchema, StrategyTag, SynthesisConfig};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::io;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Schema JSON; the shipped default when unset.
    pub schema: Option<PathBuf>,
    /// Drug map JSON; the shipped default when unset.
    pub drug_map: Option<PathBuf>,
    /// Map unknown categories to `__unknown__` instead of failing.
    pub lenient: bool,
}

impl InputConfig {
    pub fn schema(&self) -> Result<FeatureSchema> {
        match &self.schema {
            Some(p) => io::load_schema(p),
            None => Ok(FeatureSchema::default_schema()),
        }
    }

    pub fn drug_map(&self) -> Result<DrugMap> {
        match &self.drug_map {
            Some(p) => io::load_drug_map(p),
            None => Ok(DrugMap::default_map()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    /// Synthesis preset the `synthesis` section is applied on top of.
    pub preset: Option<String>,
    /// Partial synthesis config; merged field by field over the preset.
    pub synthesis: serde_json::Value,
    pub experiment: ExperimentConfig,
    /// Strategies of a comparison run.
    pub compare: Vec<StrategyTag>,
    pub input: InputConfig,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            preset: None,
            synthesis: serde_json::Value::Null,
            experiment: ExperimentConfig::default(),
            compare: default_comparison(),
            input: InputConfig::default(),
        }
    }
}

pub fn default_comparison() -> Vec<StrategyTag> {
    vec![StrategyTag::Iid, StrategyTag::Temporal { segment: 0 }, StrategyTag::Lagged { k: 1 }, StrategyTag::Lagged { k: 2 }]
}

/// Recursively overlays `top` on `base`; objects merge, everything else replaces.
pub fn merge(base: &mut serde_json::Value, top: &serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, t) if !t.is_null() => *b = t.clone(),
        _ => {}
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let mut value: serde_json::Value = io::read_json(path)?;
        if let Some(obj) = value.as_object_mut() {
            if obj.contains_key("command") {
                if let Some(params) = obj.remove("parameters") {
                    value = params;
                }
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<ConfigFile> {
        path.map_or_else(|| Ok(ConfigFile::default()), ConfigFile::load)
    }

    /// Preset with the `synthesis` section applied.
    pub fn synthesis(&self) -> Result<SynthesisConfig> {
        let preset = self.preset.as_deref().unwrap_or("default");
        let base = SynthesisConfig::preset(preset)
            .ok_or_else(|| Error::validation(format!("unknown preset `{preset}` (expected default, high-signal or no-signal)")))?;
        let mut value = serde_json::to_value(base).expect("serializable");
        merge(&mut value, &self.synthesis);
        serde_json::from_value(value).map_err(|e| Error::validation(format!("synthesis config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_merge_over_preset() {
        let cfg: ConfigFile = serde_json::from_str(
            r#"{"preset": "high-signal", "synthesis": {"n_patients": 12, "label_dynamics": {"persistence": false}}}"#,
        )
        .unwrap();
        let s = cfg.synthesis().unwrap();
        assert_eq!(s.n_patients, 12);
        assert!(!s.label_dynamics.persistence);
        assert_eq!(s.label_dynamics.baseline_prevalence, SynthesisConfig::high_signal().label_dynamics.baseline_prevalence);
        assert_eq!(s.signal_spec, SynthesisConfig::high_signal().signal_spec);
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = serde_json::from_str::<ConfigFile>(r#"{"experiment": {"forest": {"n_treez": 3}}}"#).unwrap_err();
        assert!(err.to_string().contains("n_treez"), "{err}");
        let cfg: ConfigFile = serde_json::from_str(r#"{"synthesis": {"female_fractio": 0.5}}"#).unwrap();
        assert!(cfg.synthesis().unwrap_err().to_string().contains("female_fractio"));
    }

    #[test]
    fn partial_experiment_keeps_defaults() {
        let cfg: ConfigFile = serde_json::from_str(r#"{"experiment": {"forest": {"n_trees": 7}}}"#).unwrap();
        assert_eq!(cfg.experiment.forest.n_trees, 7);
        assert_eq!(cfg.experiment.forest.min_samples_leaf, 1);
        assert_eq!(cfg.experiment.strategy, StrategyTag::Temporal { segment: 0 });
        assert_eq!(cfg.experiment.conformal.alpha, 0.1);
    }
}
