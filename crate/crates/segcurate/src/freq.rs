//! Per-class pixel statistics over a manifest, with an on-disk cache.
//!
//! The cache is keyed by the manifest's content hash and records a
//! fingerprint (size, modification time, SHA-256) of every label file. It is
//! reused when size and mtime still match; `verify_content` re-hashes files
//! instead of trusting the timestamps.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use log::debug;
use serde::{Deserialize, Serialize};

use segcurate_core::labelmap::SemanticMap;
use segcurate_core::sampling::ClassFrequencyTable;
use segcurate_core::taxonomy::ClassTaxonomy;

use crate::digest::{sha256_hex, taxonomy_hash};
use crate::error::{Error, Result};
use crate::labelfile::{decode_label_map, write_atomic};
use crate::manifest::DatasetManifest;

/// Decoded label maps shared between entries that reference the same file.
#[derive(Default)]
pub struct LabelCache {
    maps: HashMap<PathBuf, (SemanticMap, String)>,
}

impl LabelCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads and validates the label map of entry `id`, returning the map and
    /// the file's SHA-256.
    pub fn load(&mut self, path: &Path, id: &str, taxonomy: &ClassTaxonomy) -> Result<&(SemanticMap, String)> {
        if !self.maps.contains_key(path) {
            let bytes = fs::read(path).map_err(|e| Error::Invalid(format!(
                "entry {id:?}: cannot read label file {}: {e}",
                path.display()
            )))?;
            let map = decode_label_map(&bytes, taxonomy)
                .map_err(|e| Error::Invalid(format!("entry {id:?}: {e}")))?;
            self.maps.insert(path.to_path_buf(), (map, sha256_hex(&bytes)));
        }
        Ok(&self.maps[path])
    }

    pub fn histogram(&mut self, path: &Path, id: &str, taxonomy: &ClassTaxonomy) -> Result<[u64; 256]> {
        Ok(self.load(path, id, taxonomy)?.0.histogram())
    }
}

pub fn class_frequencies(manifest: &DatasetManifest, taxonomy: &ClassTaxonomy) -> Result<ClassFrequencyTable> {
    let mut cache = LabelCache::new();
    build_table(manifest, taxonomy, &mut cache).map(|(t, _)| t)
}

fn build_table(
    manifest: &DatasetManifest,
    taxonomy: &ClassTaxonomy,
    cache: &mut LabelCache,
) -> Result<(ClassFrequencyTable, BTreeMap<String, Fingerprint>)> {
    let mut table = ClassFrequencyTable::new(taxonomy.len());
    let mut files = BTreeMap::new();
    for e in &manifest.entries {
        let path = manifest.resolve(&e.label_ref);
        let (map, hash) = cache.load(&path, &e.id, taxonomy)?;
        table.push_map(map);
        if !files.contains_key(&e.label_ref) {
            let mut fp = Fingerprint::of(&path)?;
            fp.sha256 = hash.clone();
            files.insert(e.label_ref.clone(), fp);
        }
    }
    Ok((table, files))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub size: u64,
    pub mtime_ns: u128,
    pub sha256: String,
}

impl Fingerprint {
    fn of(path: &Path) -> Result<Self> {
        let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
        let mtime_ns = meta
            .modified()
            .ok()
            .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
            .map_or(0, |d| d.as_nanos());
        Ok(Self {
            size: meta.len(),
            mtime_ns,
            sha256: String::new(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    manifest_hash: String,
    taxonomy_hash: String,
    files: BTreeMap<String, Fingerprint>,
    table: ClassFrequencyTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    Stale,
}

/// [`class_frequencies`] backed by a cache file.
pub fn cached_class_frequencies(
    manifest: &DatasetManifest,
    taxonomy: &ClassTaxonomy,
    cache_path: &Path,
    verify_content: bool,
) -> Result<(ClassFrequencyTable, CacheStatus)> {
    let manifest_hash = manifest.content_hash();
    let tax_hash = taxonomy_hash(taxonomy);
    let mut status = CacheStatus::Miss;
    if let Ok(text) = fs::read_to_string(cache_path) {
        status = CacheStatus::Stale;
        if let Ok(rec) = serde_json::from_str::<CacheRecord>(&text) {
            if rec.manifest_hash == manifest_hash
                && rec.taxonomy_hash == tax_hash
                && files_unchanged(manifest, &rec.files, verify_content)
            {
                return Ok((rec.table, CacheStatus::Hit));
            }
        }
    }
    debug!("frequency cache {:?}: {status:?}", cache_path);
    let (table, files) = build_table(manifest, taxonomy, &mut LabelCache::new())?;
    let rec = CacheRecord {
        manifest_hash,
        taxonomy_hash: tax_hash,
        files,
        table,
    };
    write_atomic(cache_path, serde_json::to_string(&rec).expect("cache serializes").as_bytes())?;
    Ok((rec.table, status))
}

fn files_unchanged(manifest: &DatasetManifest, files: &BTreeMap<String, Fingerprint>, verify_content: bool) -> bool {
    files.iter().all(|(reference, cached)| {
        let path = manifest.resolve(reference);
        if verify_content {
            return fs::read(&path).is_ok_and(|b| sha256_hex(&b) == cached.sha256);
        }
        Fingerprint::of(&path).is_ok_and(|fp| fp.size == cached.size && fp.mtime_ns == cached.mtime_ns)
    })
}
