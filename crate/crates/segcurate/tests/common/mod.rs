#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segcurate::bridge::mock::{MockGenerator, MockLabeller};
use segcurate::labelfile::write_label_map;
use segcurate::manifest::{DatasetManifest, ManifestEntry, ManifestHeader};
use segcurate::pipeline::{Lane, PipelineConfig};
use segcurate_core::mock::Corruption;
use segcurate_core::taxonomy::ClassTaxonomy;
use segcurate_core::SemanticMap;

/// Street-scene-like map: sky above, road below, a few rectangles of other
/// classes on top.
pub fn street_map(rng: &mut ChaCha8Rng, width: u32, height: u32) -> SemanticMap {
    let horizon = rng.random_range(height / 3..2 * height / 3);
    let mut v: Vec<u8> = (0..width * height)
        .map(|i| if i / width < horizon { 10 } else { 0 })
        .collect();
    for _ in 0..rng.random_range(2..7) {
        let class = rng.random_range(1..19u8);
        let w = rng.random_range(2..width / 3);
        let h = rng.random_range(2..height / 2);
        let x0 = rng.random_range(0..width - w);
        let y0 = rng.random_range(0..height - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                v[(y * width + x) as usize] = class;
            }
        }
    }
    SemanticMap::new(width, height, v).unwrap()
}

/// Writes `n` street maps plus a manifest under `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, n: usize, width: u32, height: u32, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taxonomy = ClassTaxonomy::urban19();
    let mut entries = Vec::new();
    for i in 0..n {
        let map = street_map(&mut rng, width, height);
        let label_ref = format!("labels/{i:04}.png");
        write_label_map(&dir.join(&label_ref), &map).unwrap();
        entries.push(ManifestEntry::new(format!("frame-{i:04}"), label_ref, "synthetic"));
    }
    let path = dir.join("source.jsonl");
    DatasetManifest::new(dir, ManifestHeader::for_taxonomy(&taxonomy), entries)
        .save(&path)
        .unwrap();
    path
}

pub fn mock_config(manifest: &Path, out: &Path) -> PipelineConfig {
    PipelineConfig {
        source_manifest: manifest.to_path_buf(),
        out: out.to_path_buf(),
        seed: 17,
        ..PipelineConfig::default()
    }
}

/// In-process mock lane, optionally corrupting specific candidate seeds.
pub fn mock_lane(workdir: &Path, overrides: BTreeMap<u64, Corruption>) -> Lane {
    let t = ClassTaxonomy::urban19();
    Lane {
        generator: Box::new(MockGenerator::new(workdir, t.clone(), Corruption::none()).with_overrides(overrides)),
        labeller: Box::new(MockLabeller::new(workdir, t, 0.0, 0)),
    }
}

/// Every file under `root`, by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// First differing file between two snapshots, if any.
pub fn first_difference(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Option<String> {
    if a.keys().ne(b.keys()) {
        let only_a: Vec<_> = a.keys().filter(|k| !b.contains_key(*k)).take(3).collect();
        let only_b: Vec<_> = b.keys().filter(|k| !a.contains_key(*k)).take(3).collect();
        return Some(format!("file sets differ: only left {only_a:?}, only right {only_b:?}"));
    }
    a.iter().find(|(k, v)| b[*k] != **v).map(|(k, _)| format!("{k} differs"))
}
