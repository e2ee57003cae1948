//! Regularized conditioning inputs for generator fine-tuning: coarse label
//! maps made by eroding every component in proportion to its size, and the
//! per-step choice of which conditioning a training step sees.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::labelmap::{connected_components, Component, Connectivity, SemanticMap, VOID_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum RadiusMode {
    /// `floor(lambda * |component|)`
    #[default]
    Linear,
    /// `floor(lambda * sqrt(|component|))`
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RadiusCap {
    None,
    Pixels(u32),
    /// Half the shorter side of the component's bounding box.
    #[default]
    HalfBboxMin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ErosionPolicy {
    pub lambda: f64,
    pub radius_mode: RadiusMode,
    pub radius_cap: RadiusCap,
    pub connectivity: Connectivity,
}

impl Default for ErosionPolicy {
    fn default() -> Self {
        Self {
            lambda: 0.15,
            radius_mode: RadiusMode::Linear,
            radius_cap: RadiusCap::HalfBboxMin,
            connectivity: Connectivity::Four,
        }
    }
}

impl ErosionPolicy {
    pub fn is_valid(&self) -> bool {
        self.lambda.is_finite() && self.lambda >= 0.0
    }

    /// Disc radius applied to `component`.
    pub fn radius(&self, component: &Component) -> u32 {
        let size = component.size() as f64;
        let raw = match self.radius_mode {
            RadiusMode::Linear => libm::floor(self.lambda * size),
            RadiusMode::Sqrt => libm::floor(self.lambda * libm::sqrt(size)),
        };
        let raw = if raw >= u32::MAX as f64 { u32::MAX } else { raw as u32 };
        match self.radius_cap {
            RadiusCap::None => raw,
            RadiusCap::Pixels(cap) => raw.min(cap),
            RadiusCap::HalfBboxMin => {
                raw.min(component.bbox.width().min(component.bbox.height()) / 2)
            }
        }
    }
}

const FAR: f64 = 1e18;

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn distance_transform_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *slot = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every cell to the nearest `false` cell.
fn squared_distance_to_background(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = mask.iter().map(|&m| if m { FAR } else { 0.0 }).collect();
    let n = w.max(h);
    let (mut f, mut d) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);

    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        distance_transform_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        let row = &mut grid[y * w..(y + 1) * w];
        f[..w].copy_from_slice(row);
        distance_transform_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        row.copy_from_slice(&d[..w]);
    }
    grid
}

/// Indices of `component` pixels that survive erosion by a disc of `radius`.
///
/// A pixel survives iff every offset `(dx, dy)` with `dx² + dy² ≤ r²` lands
/// inside the component, i.e. iff its squared distance to the nearest pixel
/// outside the component exceeds `r²`. Pixels outside the map count as outside.
pub fn erode_component(component: &Component, width: u32, radius: u32) -> Vec<u32> {
    if radius == 0 {
        return component.pixels.clone();
    }
    let b = component.bbox;
    let (bw, bh) = (b.width() as usize + 2, b.height() as usize + 2);
    let mut mask = vec![false; bw * bh];
    for (x, y) in component.coords() {
        let lx = (x - b.min_x) as usize + 1;
        let ly = (y - b.min_y) as usize + 1;
        mask[ly * bw + lx] = true;
    }
    let dist = squared_distance_to_background(&mask, bw, bh);
    let r2 = radius as f64 * radius as f64;
    component
        .pixels
        .iter()
        .copied()
        .filter(|&i| {
            let (x, y) = (i % width, i / width);
            let lx = (x - b.min_x) as usize + 1;
            let ly = (y - b.min_y) as usize + 1;
            dist[ly * bw + lx] > r2
        })
        .collect()
}

/// Erodes each connected component of `map` independently with a disc whose
/// radius grows with the component's size. Removed pixels become void.
pub fn erode_components(map: &SemanticMap, policy: &ErosionPolicy) -> SemanticMap {
    let components = connected_components(map, policy.connectivity);
    let mut out = vec![VOID_ID; map.len()];
    for c in components.iter() {
        for i in erode_component(c, map.width(), policy.radius(c)) {
            out[i as usize] = c.class_id;
        }
    }
    SemanticMap::new(map.width(), map.height(), out).expect("same dimensions as input")
}

/// Which conditioning a fine-tuning step receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ConditionKind {
    /// The full pseudo-label map.
    Full,
    /// The eroded pseudo-label map.
    Coarse,
    /// A pseudo-depth map.
    Depth,
    /// An all-black image, i.e. no spatial condition.
    Black,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 4] = [Self::Full, Self::Coarse, Self::Depth, Self::Black];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Coarse => "coarse",
            Self::Depth => "depth",
            Self::Black => "black",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ConditionSchedule {
    pub p_depth: f64,
    pub p_black: f64,
    pub p_coarse: f64,
    pub seed: u64,
}

impl Default for ConditionSchedule {
    fn default() -> Self {
        Self {
            p_depth: 0.20,
            p_black: 0.10,
            p_coarse: 0.20,
            seed: 0,
        }
    }
}

impl ConditionSchedule {
    pub fn new(p_depth: f64, p_black: f64, p_coarse: f64, seed: u64) -> Option<Self> {
        let s = Self {
            p_depth,
            p_black,
            p_coarse,
            seed,
        };
        s.is_valid().then_some(s)
    }

    pub fn is_valid(&self) -> bool {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        unit(self.p_depth)
            && unit(self.p_black)
            && unit(self.p_coarse)
            && self.p_depth + self.p_black + self.p_coarse <= 1.0 + 1e-12
    }

    pub fn probability(&self, kind: ConditionKind) -> f64 {
        match kind {
            ConditionKind::Depth => self.p_depth,
            ConditionKind::Black => self.p_black,
            ConditionKind::Coarse => self.p_coarse,
            ConditionKind::Full => 1.0 - self.p_depth - self.p_black - self.p_coarse,
        }
    }
}

/// Conditioning kind for training step `step`; a pure function of
/// `(schedule.seed, step)`.
pub fn sample_condition(schedule: &ConditionSchedule, step: u64) -> ConditionKind {
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(step);
    let u: f64 = rng.random();
    let mut edge = schedule.p_depth;
    if u < edge {
        return ConditionKind::Depth;
    }
    edge += schedule.p_black;
    if u < edge {
        return ConditionKind::Black;
    }
    edge += schedule.p_coarse;
    if u < edge {
        return ConditionKind::Coarse;
    }
    ConditionKind::Full
}
