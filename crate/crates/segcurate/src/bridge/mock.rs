//! In-process generator, labeller and depth backends built on the core mocks.
//!
//! They exchange files through a working directory exactly like external
//! workers: the generator writes `<out_prefix>_<i>.png` plus a sidecar
//! `<out_prefix>_<i>.effective.png` holding the class actually drawn at every
//! pixel, and the labeller reads that sidecar back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use segcurate_core::mock::{mock_depth, mock_generate, mock_label, Corruption};
use segcurate_core::taxonomy::ClassTaxonomy;

use super::{BridgeError, BridgeResult, DepthEstimator, Generator, Labeller};
use crate::digest::sha256_parts;
use crate::labelfile::{
    encode_gray, encode_label_map, encode_rgb, image_dimensions, read_label_map, write_atomic,
};
use crate::manifest::is_safe_relative;

/// Sidecar reference for a mock-rendered image.
pub fn sidecar_ref(image_ref: &str) -> String {
    match image_ref.strip_suffix(".png") {
        Some(stem) => format!("{stem}.effective.png"),
        None => format!("{image_ref}.effective.png"),
    }
}

/// Seed used for the `index`-th image of one generate request.
pub fn sample_seed(seed: u64, index: u32) -> u64 {
    seed.wrapping_add(index as u64)
}

fn resolve(workdir: &Path, reference: &str) -> BridgeResult<PathBuf> {
    if !is_safe_relative(reference) {
        return Err(BridgeError::UnsafeRef(reference.to_string()));
    }
    Ok(workdir.join(reference))
}

fn to_worker_error(e: crate::error::Error) -> BridgeError {
    BridgeError::Worker(e.to_string())
}

#[derive(Debug, Clone)]
pub struct MockGenerator {
    workdir: PathBuf,
    taxonomy: ClassTaxonomy,
    corruption: Corruption,
    /// Per-seed corruption overrides, for forcing specific bad candidates.
    overrides: BTreeMap<u64, Corruption>,
}

impl MockGenerator {
    pub fn new(workdir: impl Into<PathBuf>, taxonomy: ClassTaxonomy, corruption: Corruption) -> Self {
        Self {
            workdir: workdir.into(),
            taxonomy,
            corruption,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_overrides(mut self, overrides: BTreeMap<u64, Corruption>) -> Self {
        self.overrides = overrides;
        self
    }
}

impl Generator for MockGenerator {
    fn generate(&mut self, label: &str, seed: u64, n: u32, out_prefix: &str) -> BridgeResult<Vec<String>> {
        let map = read_label_map(&resolve(&self.workdir, label)?, &self.taxonomy).map_err(to_worker_error)?;
        let mut refs = Vec::with_capacity(n as usize);
        for i in 0..n {
            let s = sample_seed(seed, i);
            let corruption = self.overrides.get(&s).copied().unwrap_or(self.corruption);
            let render = mock_generate(&map, &self.taxonomy, s, corruption);
            let image_ref = format!("{out_prefix}_{i}.png");
            let path = resolve(&self.workdir, &image_ref)?;
            write_atomic(&path, &encode_rgb(render.width, render.height, &render.rgb))
                .map_err(to_worker_error)?;
            let side = resolve(&self.workdir, &sidecar_ref(&image_ref))?;
            write_atomic(&side, &encode_label_map(&render.effective)).map_err(to_worker_error)?;
            refs.push(image_ref);
        }
        Ok(refs)
    }
}

#[derive(Debug, Clone)]
pub struct MockLabeller {
    workdir: PathBuf,
    taxonomy: ClassTaxonomy,
    noise: f64,
    seed: u64,
}

impl MockLabeller {
    pub fn new(workdir: impl Into<PathBuf>, taxonomy: ClassTaxonomy, noise: f64, seed: u64) -> Self {
        Self {
            workdir: workdir.into(),
            taxonomy,
            noise,
            seed,
        }
    }

    /// Noise seed for one image: the labeller seed mixed with the reference.
    fn image_seed(&self, image: &str) -> u64 {
        let h = sha256_parts(&[&self.seed.to_le_bytes(), image.as_bytes()]);
        u64::from_str_radix(&h[..16], 16).expect("hex digest")
    }
}

impl Labeller for MockLabeller {
    fn label(&mut self, image: &str, out: &str) -> BridgeResult<String> {
        let image_path = resolve(&self.workdir, image)?;
        let side_path = resolve(&self.workdir, &sidecar_ref(image))?;
        if !side_path.exists() {
            return Err(BridgeError::Worker(format!("missing sidecar for {image}")));
        }
        let effective = read_label_map(&side_path, &self.taxonomy).map_err(to_worker_error)?;
        let dims = image_dimensions(&image_path).map_err(to_worker_error)?;
        if dims != effective.dimensions() {
            return Err(BridgeError::Worker(format!(
                "sidecar of {image} is {:?}, image is {dims:?}",
                effective.dimensions()
            )));
        }
        let pred = mock_label(&effective, self.taxonomy.len() as u8, self.noise, self.image_seed(image));
        write_atomic(&resolve(&self.workdir, out)?, &encode_label_map(&pred)).map_err(to_worker_error)?;
        Ok(out.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct MockDepth {
    workdir: PathBuf,
    taxonomy: ClassTaxonomy,
}

impl MockDepth {
    pub fn new(workdir: impl Into<PathBuf>, taxonomy: ClassTaxonomy) -> Self {
        Self {
            workdir: workdir.into(),
            taxonomy,
        }
    }
}

impl DepthEstimator for MockDepth {
    fn depth(&mut self, image: &str, out: &str) -> BridgeResult<String> {
        let side = resolve(&self.workdir, &sidecar_ref(image))?;
        let map = read_label_map(&side, &self.taxonomy).map_err(to_worker_error)?;
        let data = mock_depth(&map);
        write_atomic(&resolve(&self.workdir, out)?, &encode_gray(map.width(), map.height(), &data))
            .map_err(to_worker_error)?;
        Ok(out.to_string())
    }
}
