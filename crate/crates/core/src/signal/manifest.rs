//! Dataset manifests: which files belong to which split, with labels.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train, val, test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub record_id: String,
    pub label: Label,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub records: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub multilabel: bool,
}

impl DatasetManifest {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut patient_split: HashMap<&str, Split> = HashMap::new();
        let n = self.n_classes();
        for e in &self.records {
            if !ids.insert(e.record_id.as_str()) {
                return Err(Error::Manifest(format!("record {} listed more than once", e.record_id)));
            }
            match &e.label {
                Label::Single(c) if self.multilabel || *c >= n => {
                    return Err(Error::Manifest(format!("record {}: label {c} invalid for {n} classes", e.record_id)));
                }
                Label::Multi(v) if !self.multilabel || v.len() != n || v.iter().any(|&b| b > 1) => {
                    return Err(Error::Manifest(format!("record {}: multi-hot label {v:?} invalid", e.record_id)));
                }
                _ => {}
            }
            if let Some(p) = &e.patient_id {
                if let Some(prev) = patient_split.insert(p, e.split) {
                    if prev != e.split {
                        return Err(Error::Manifest(format!("patient {p} appears in both {prev:?} and {:?}", e.split)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.path)
        }
    }
}

/// 80/10/10 train/val/test assignment that keeps each group (patient) in a
/// single split. Groups are shuffled with `seed`, then filled in order.
pub fn assign_splits(groups: &[String], seed: u64) -> Vec<Split> {
    let mut unique: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for g in groups {
        if seen.insert(g.as_str()) {
            unique.push(g);
        }
    }
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = unique.len();
    let n_train = (0.8 * n as f64).round() as usize;
    let n_val = (0.1 * n as f64).round() as usize;
    let split_of: HashMap<&str, Split> = unique
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (*g, s)
        })
        .collect();
    groups.iter().map(|g| split_of[g.as_str()]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_fractions_and_group_integrity() {
        let groups: Vec<String> = (0..200).map(|i| format!("p{}", i / 2)).collect();
        let splits = assign_splits(&groups, 3);
        let count = |s| splits.iter().filter(|&&x| x == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (160, 20, 20));
        for pair in splits.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
    }

    #[test]
    fn duplicate_ids_and_patient_leaks_rejected() {
        let entry = |id: &str, split, patient: Option<&str>| ManifestEntry {
            path: format!("{id}.cecg").into(),
            record_id: id.into(),
            label: Label::Single(0),
            split,
            patient_id: patient.map(str::to_string),
        };
        let mut m = DatasetManifest {
            records: vec![entry("a", Split::Train, Some("p")), entry("b", Split::Test, Some("p"))],
            class_names: vec!["x".into()],
            multilabel: false,
        };
        assert!(m.validate().is_err());
        m.records[1].split = Split::Train;
        m.validate().unwrap();
        m.records[1].record_id = "a".into();
        assert!(m.validate().is_err());
    }
}
