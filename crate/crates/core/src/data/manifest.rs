use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset-level meta-set split: three pairwise disjoint name lists.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSetSplit {
    pub train: Vec<String>,
    #[serde(default)]
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl MetaSetSplit {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for (list, names) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            for name in names {
                if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                    return Err(Error::Manifest(format!("invalid dataset name {name:?} in {list}")));
                }
                if let Some(prev) = seen.insert(name, list) {
                    return Err(Error::Manifest(if prev == list {
                        format!("dataset {name} listed twice in {list}")
                    } else {
                        format!("dataset {name} appears in both {prev} and {list}")
                    }));
                }
            }
        }
        if self.train.is_empty() {
            return Err(Error::Manifest("train list is empty".into()));
        }
        if self.test.is_empty() {
            return Err(Error::Manifest("test list is empty".into()));
        }
        if self.validation.is_empty() {
            log::warn!("validation list is empty; validation-based model selection is disabled");
        }
        Ok(())
    }

    /// Checks that `<root>/<name>` exists for every listed dataset.
    pub fn resolve(&self, data_root: &Path) -> Result<Vec<PathBuf>> {
        let mut dirs = Vec::new();
        for name in self.train.iter().chain(&self.validation).chain(&self.test) {
            let dir = data_root.join(name);
            if !dir.is_dir() {
                return Err(Error::Manifest(format!("missing dataset directory {}", dir.display())));
            }
            dirs.push(dir);
        }
        Ok(dirs)
    }
}

/// Parses and validates a TOML split manifest.
pub fn parse_manifest(text: &str) -> Result<MetaSetSplit> {
    let split: MetaSetSplit = toml::from_str(text).map_err(|e| Error::Manifest(e.message().to_string()))?;
    split.validate()?;
    Ok(split)
}

pub fn split_meta_sets(path: impl AsRef<Path>) -> Result<MetaSetSplit> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}
