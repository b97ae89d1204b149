//! Registry manifests: a TOML file listing pair corpora on disk.
//!
//! ```toml
//! [[pair]]
//! id = "en-fr"
//! source = "train.en"
//! target = "train.fr"
//! declared_size = 1000   # optional
//!
//! [[pair]]
//! id = "de-en"
//! tsv = "de-en.tsv"
//! ```
//!
//! Codes outside the built-in table (synthetic languages) are declared in a
//! top-level `synthetic = ["xa", "xb"]` list. Relative paths resolve against
//! the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_parallel_files, read_tsv, LanguagePair, LanguageRegistry, PairCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub target: Option<PathBuf>,
    #[serde(default)]
    pub tsv: Option<PathBuf>,
    #[serde(default)]
    pub declared_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegistryManifest {
    #[serde(default)]
    pub synthetic: Vec<String>,
    #[serde(default, rename = "pair")]
    pub pairs: Vec<ManifestEntry>,
}

impl RegistryManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn pair_ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.id.as_str())
    }

    pub fn contains(&self, pair_id: &str) -> bool {
        self.pairs.iter().any(|p| p.id == pair_id)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("manifest", e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Loads every corpus listed in a manifest file, registering its synthetic
/// codes first.
pub fn load_manifest(path: &Path, registry: &mut LanguageRegistry) -> Result<Vec<PairCorpus>> {
    let manifest = RegistryManifest::read(path)?;
    for code in &manifest.synthetic {
        if !registry.contains(code) {
            registry.register_synthetic(code)?;
        }
    }
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    manifest
        .pairs
        .iter()
        .map(|entry| load_entry(entry, root, registry))
        .collect()
}

fn load_entry(entry: &ManifestEntry, root: &Path, registry: &LanguageRegistry) -> Result<PairCorpus> {
    let pair = LanguagePair::parse(&entry.id, registry)?;
    let corpus = match (&entry.tsv, &entry.source, &entry.target) {
        (Some(tsv), None, None) => read_tsv(pair, &root.join(tsv))?,
        (None, Some(s), Some(t)) => read_parallel_files(pair, &root.join(s), &root.join(t))?,
        _ => {
            return Err(Error::format(
                "manifest",
                format!("pair {} needs either `tsv` or both `source` and `target`", entry.id),
            ))
        }
    };
    if let Some(declared) = entry.declared_size {
        if declared != corpus.size() {
            return Err(Error::format(
                "manifest",
                format!(
                    "pair {} declares {declared} examples but {} were loaded",
                    entry.id,
                    corpus.size()
                ),
            ));
        }
    }
    Ok(corpus)
}
