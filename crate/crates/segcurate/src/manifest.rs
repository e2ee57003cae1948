//! Dataset manifests: UTF-8 line-delimited JSON. The first line may be a
//! `{"header": {...}}` record; every other line is one entry. File references
//! are relative to the directory holding the manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segcurate_core::taxonomy::ClassTaxonomy;

use crate::digest::{sha256_hex, taxonomy_hash};
use crate::error::{Error, Result};
use crate::labelfile::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// For curated entries: the source entry the image was generated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcoc: Option<f64>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, label_ref: impl Into<String>, dataset: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label_ref: label_ref.into(),
            image_ref: None,
            dataset: dataset.into(),
            condition_tag: None,
            split: None,
            source_id: None,
            candidate: None,
            mcoc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ManifestHeader {
    #[serde(default)]
    pub taxonomy_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<String>,
    #[serde(default)]
    pub created_by: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    /// Subset recipe or other provenance, free-form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<serde_json::Value>,
}

impl ManifestHeader {
    pub fn for_taxonomy(taxonomy: &ClassTaxonomy) -> Self {
        Self {
            taxonomy_hash: taxonomy_hash(taxonomy),
            created_by: concat!("segcurate ", env!("CARGO_PKG_VERSION")).to_string(),
            ..Self::default()
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ManifestHeader,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, header: ManifestHeader, entries: Vec<ManifestEntry>) -> Self {
        Self {
            root: root.into(),
            header,
            entries,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root, path)
    }

    pub fn parse(text: &str, root: PathBuf, origin: &Path) -> Result<Self> {
        let mut header = None;
        let mut entries = Vec::new();
        let mut ids = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Manifest {
                path: origin.to_path_buf(),
                line: n + 1,
                message,
            };
            if header.is_none() && entries.is_empty() && line.starts_with("{\"header\"") {
                let h: HeaderLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
                header = Some(h.header);
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            if !ids.insert(entry.id.clone()) {
                return Err(err(format!("duplicate entry id {:?}", entry.id)));
            }
            entries.push(entry);
        }
        Ok(Self {
            root,
            header: header.unwrap_or_default(),
            entries,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&HeaderLine {
            header: self.header.clone(),
        })
        .expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    pub fn resolve(&self, reference: &str) -> PathBuf {
        self.root.join(reference)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same root and header, different entries.
    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self {
            root: self.root.clone(),
            header: self.header.clone(),
            entries,
        }
    }

    /// Fails when the header names a different taxonomy. Manifests without a
    /// recorded hash are accepted.
    pub fn check_taxonomy(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        let expected = taxonomy_hash(taxonomy);
        if !self.header.taxonomy_hash.is_empty() && self.header.taxonomy_hash != expected {
            return Err(Error::Invalid(format!(
                "manifest taxonomy hash {} does not match the configured taxonomy {}",
                self.header.taxonomy_hash, expected
            )));
        }
        Ok(())
    }
}

/// Rejects absolute paths and `..` components.
pub fn is_safe_relative(reference: &str) -> bool {
    let p = Path::new(reference);
    !reference.is_empty()
        && p.is_relative()
        && p.components()
            .all(|c| matches!(c, std::path::Component::Normal(_) | std::path::Component::CurDir))
}
