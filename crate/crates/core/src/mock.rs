//! Deterministic stand-ins for the image generator and the pseudo-labeller.
//!
//! The mock generator paints every class in its palette colour with a little
//! per-pixel jitter. It can corrupt whole components, either by painting them
//! as a different class (the generator "draws a train instead of a bus") or by
//! scrambling them pixel by pixel. The resulting *effective* map records what
//! was actually drawn, so the mock labeller can recover it exactly.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::labelmap::{connected_components, Connectivity, SemanticMap, VOID_ID};
use crate::taxonomy::ClassTaxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CorruptionStyle {
    /// Re-render the whole component as one other class.
    #[default]
    Swap,
    /// Re-render every pixel of the component as an independent random class.
    Scramble,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Corruption {
    /// Per-component probability of being corrupted.
    pub probability: f64,
    pub style: CorruptionStyle,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            probability: 0.0,
            style: CorruptionStyle::Swap,
        }
    }
}

impl Corruption {
    pub fn none() -> Self {
        Self::default()
    }
}

/// Output of [`mock_generate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRender {
    pub width: u32,
    pub height: u32,
    /// Packed RGB, row-major.
    pub rgb: Vec<u8>,
    /// Class actually drawn at every pixel.
    pub effective: SemanticMap,
    /// Component ids (4-connected, scanline order) that were corrupted.
    pub corrupted: Vec<usize>,
}

const JITTER: i16 = 6;

/// Colour used for void pixels.
pub const VOID_COLOR: [u8; 3] = [0, 0, 0];

fn other_class(rng: &mut ChaCha8Rng, class: u8, num_classes: u8) -> u8 {
    if num_classes < 2 {
        return class;
    }
    let pick = rng.random_range(0..num_classes - 1);
    if pick >= class {
        pick + 1
    } else {
        pick
    }
}

/// Renders `map` as an RGB image; a pure function of its arguments.
///
/// Corruption decisions are drawn first, one per 4-connected component in
/// scanline order, followed by the per-pixel jitter.
pub fn mock_generate(
    map: &SemanticMap,
    taxonomy: &ClassTaxonomy,
    seed: u64,
    corruption: Corruption,
) -> MockRender {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = taxonomy.len() as u8;
    let mut effective = map.as_slice().to_vec();
    let mut corrupted = Vec::new();

    for c in connected_components(map, Connectivity::Four).iter() {
        if !rng.random_bool(corruption.probability.clamp(0.0, 1.0)) {
            continue;
        }
        corrupted.push(c.component_id);
        match corruption.style {
            CorruptionStyle::Swap => {
                let to = other_class(&mut rng, c.class_id, k);
                for &i in &c.pixels {
                    effective[i as usize] = to;
                }
            }
            CorruptionStyle::Scramble => {
                for &i in &c.pixels {
                    effective[i as usize] = rng.random_range(0..k);
                }
            }
        }
    }

    let mut rgb = Vec::with_capacity(effective.len() * 3);
    for &class in &effective {
        let base = taxonomy
            .class(class)
            .map(|c| c.color)
            .unwrap_or(VOID_COLOR);
        for channel in base {
            let j: i16 = rng.random_range(-JITTER..=JITTER);
            rgb.push((channel as i16 + j).clamp(0, 255) as u8);
        }
    }

    MockRender {
        width: map.width(),
        height: map.height(),
        rgb,
        effective: SemanticMap::new(map.width(), map.height(), effective)
            .expect("same dimensions as input"),
        corrupted,
    }
}

/// Pseudo-labels an image whose effective map is known: every pixel is
/// independently replaced by a uniformly drawn class with probability
/// `noise_rate`.
pub fn mock_label(
    effective: &SemanticMap,
    num_classes: u8,
    noise_rate: f64,
    seed: u64,
) -> SemanticMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = noise_rate.clamp(0.0, 1.0);
    let out = effective
        .as_slice()
        .iter()
        .map(|&v| {
            if p > 0.0 && rng.random_bool(p) {
                rng.random_range(0..num_classes)
            } else {
                v
            }
        })
        .collect();
    SemanticMap::new(effective.width(), effective.height(), out).expect("same dimensions as input")
}

/// A single-channel depth stand-in: brightness falls off towards the horizon
/// row, void pixels are far.
pub fn mock_depth(map: &SemanticMap) -> Vec<u8> {
    let h = map.height().max(2) - 1;
    let mut out = Vec::with_capacity(map.len());
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = if map.get(x, y) == Some(VOID_ID) {
                0
            } else {
                (y * 255 / h) as u8
            };
            out.push(v);
        }
    }
    out
}
