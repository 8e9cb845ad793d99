//! JSON dataset manifests.
//!
//! Tensor paths are relative to the directory holding the manifest.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Protocol;
use crate::tensor::{read_json, write_json, FeatureMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub class_id: String,
    pub is_query: bool,
    pub tensor_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub entries: Vec<ManifestEntry>,
    /// Evaluation protocol; queries are removed from their own ranking unless `include_query`.
    #[serde(default)]
    pub protocol: Protocol,
    /// Per-query images ignored when scoring (Oxford/Paris "junk").
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub junk: BTreeMap<String, Vec<String>>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset_name: impl Into<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            dataset_name: dataset_name.into(),
            entries,
            protocol: Protocol::default(),
            junk: BTreeMap::new(),
            root: PathBuf::new(),
        };
        m.check_unique()?;
        Ok(m)
    }

    pub fn with_protocol(mut self, protocol: Protocol) -> Self {
        self.protocol = protocol;
        self
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::DuplicateId(e.image_id.clone()));
            }
        }
        Ok(())
    }

    /// Directory tensor paths are resolved against.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_root(&mut self, root: impl Into<PathBuf>) {
        self.root = root.into();
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.tensor_path)
    }

    pub fn load_feature_map(&self, entry: &ManifestEntry) -> Result<FeatureMap> {
        FeatureMap::load(self.resolve(entry))
    }

    pub fn queries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.is_query)
    }

    pub fn query_count(&self) -> usize {
        self.queries().count()
    }

    pub fn class_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.class_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Fails unless at least one entry is a query.
    pub fn require_queries(&self) -> Result<()> {
        if self.query_count() == 0 {
            return Err(Error::InvalidConfig(format!(
                "manifest {:?} has no query entries",
                self.dataset_name
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// Loads and validates a manifest.
///
/// Duplicate ids are always an error. Tensor paths that do not resolve to a
/// file are an error when `strict`, otherwise a logged warning.
pub fn load_manifest(path: impl AsRef<Path>, strict: bool) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut m: DatasetManifest = read_json(path)?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.check_unique()?;
    for e in &m.entries {
        let p = m.resolve(e);
        if !p.is_file() {
            if strict {
                return Err(Error::DanglingPath {
                    image_id: e.image_id.clone(),
                    path: p,
                });
            }
            log::warn!("image {:?}: tensor {} not found", e.image_id, p.display());
        }
    }
    Ok(m)
}
