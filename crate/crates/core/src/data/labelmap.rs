use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Three-way emotion classes shared by all corpora after mapping.
pub const UNIFIED_CLASSES: [&str; 3] = ["Positive", "Neutral", "Negative"];

/// Target of a raw label under a [`LabelMap`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mapped {
    Class(usize),
    Drop,
}

/// Per-corpus mapping from raw label names to unified class names or `DROP`.
///
/// Serialized as a flat JSON object, e.g. `{"Happy":"Positive","Fear":"DROP"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    entries: BTreeMap<String, String>,
}

impl LabelMap {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, DataError> {
        let map = LabelMap {
            entries: pairs
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let map: LabelMap =
            serde_json::from_str(text).map_err(|e| DataError::Manifest(format!("label map: {e}")))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("label map serializes")
    }

    fn validate(&self) -> Result<(), DataError> {
        for (raw, target) in &self.entries {
            if target != "DROP" && !UNIFIED_CLASSES.contains(&target.as_str()) {
                return Err(DataError::Manifest(format!(
                    "label map sends {raw:?} to unknown class {target:?}"
                )));
            }
        }
        Ok(())
    }

    /// SEED: already three-way.
    pub fn seed() -> Self {
        Self::from_pairs([
            ("Positive", "Positive"),
            ("Neutral", "Neutral"),
            ("Negative", "Negative"),
        ])
        .expect("built-in map")
    }

    /// SEED-IV: Happy/Neutral/Sad kept, Fear dropped.
    pub fn seed_iv() -> Self {
        Self::from_pairs([
            ("Happy", "Positive"),
            ("Neutral", "Neutral"),
            ("Sad", "Negative"),
            ("Fear", "DROP"),
        ])
        .expect("built-in map")
    }

    /// SEED-V: Happy/Neutral/Sad kept, Fear and Disgust dropped.
    pub fn seed_v() -> Self {
        Self::from_pairs([
            ("Happy", "Positive"),
            ("Neutral", "Neutral"),
            ("Sad", "Negative"),
            ("Fear", "DROP"),
            ("Disgust", "DROP"),
        ])
        .expect("built-in map")
    }

    /// Built-in map by corpus name (`seed`, `seed-iv`, `seed-v`, case-insensitive).
    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "seed" => Some(Self::seed()),
            "seed-iv" | "seed4" => Some(Self::seed_iv()),
            "seed-v" | "seed5" => Some(Self::seed_v()),
            _ => None,
        }
    }

    pub fn map(&self, raw: &str) -> Option<Mapped> {
        let target = self.entries.get(raw)?;
        if target == "DROP" {
            return Some(Mapped::Drop);
        }
        UNIFIED_CLASSES
            .iter()
            .position(|c| c == target)
            .map(Mapped::Class)
    }

    /// Checks that every raw name in `raw_names` has an entry.
    pub fn check_total(&self, raw_names: &[String]) -> Result<(), DataError> {
        match raw_names.iter().find(|n| !self.entries.contains_key(*n)) {
            Some(missing) => Err(DataError::Manifest(format!(
                "label map has no entry for raw label {missing:?}"
            ))),
            None => Ok(()),
        }
    }
}
