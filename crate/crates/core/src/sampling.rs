//! Subset construction: per-class pixel statistics, rare class sampling,
//! frame striding and simple entry filters.
//!
//! Rare class sampling draws a class with probability
//! `P(c) ∝ exp((1 - f_c) / T)`, where `f_c` is the class's share of all
//! labelled pixels, then draws an image containing that class uniformly.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::labelmap::{SemanticMap, VOID_ID};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("no labeled pixels")]
    NoLabeledPixels,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("requested {requested} entries but only {available} can be drawn without replacement")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("frequency table covers {table} entries but the pool has {pool}")]
    TableMismatch { table: usize, pool: usize },
}

/// Per-class pixel counts and the entries each class occurs in.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassFrequencyTable {
    pub pixel_counts: Vec<u64>,
    pub total_pixels: u64,
    /// `occurrence[c]` lists entry indices containing class `c`, ascending.
    pub occurrence: Vec<Vec<usize>>,
    pub entries: usize,
}

impl ClassFrequencyTable {
    pub fn new(num_classes: usize) -> Self {
        Self {
            pixel_counts: vec![0; num_classes],
            total_pixels: 0,
            occurrence: vec![Vec::new(); num_classes],
            entries: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.pixel_counts.len()
    }

    /// Adds the next entry's histogram (see [`SemanticMap::histogram`]).
    /// Ids at or beyond the class count are ignored.
    pub fn push_histogram(&mut self, hist: &[u64; 256]) {
        let entry = self.entries;
        for (c, count) in self.pixel_counts.iter_mut().enumerate() {
            let n = hist[c];
            if n > 0 {
                *count += n;
                self.total_pixels += n;
                self.occurrence[c].push(entry);
            }
        }
        self.entries += 1;
    }

    pub fn push_map(&mut self, map: &SemanticMap) {
        self.push_histogram(&map.histogram());
    }

    pub fn from_maps<'a>(num_classes: usize, maps: impl IntoIterator<Item = &'a SemanticMap>) -> Self {
        let mut t = Self::new(num_classes);
        for m in maps {
            t.push_map(m);
        }
        t
    }

    /// Pixel share `f_c` of every class among labelled pixels.
    pub fn frequencies(&self) -> Result<Vec<f64>, SamplingError> {
        if self.total_pixels == 0 {
            return Err(SamplingError::NoLabeledPixels);
        }
        let total = self.total_pixels as f64;
        Ok(self.pixel_counts.iter().map(|&n| n as f64 / total).collect())
    }
}

/// How a class's rarity turns into a sampling weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RarityFormula {
    /// `exp((1 - f_c) / T)`
    #[default]
    ExpComplement,
    /// Every occurring class equally likely; temperature is ignored.
    Uniform,
}

/// Class sampling distribution. Classes that never occur get probability 0;
/// the normalisation runs over occurring classes only.
pub fn rcs_class_distribution(
    table: &ClassFrequencyTable,
    temperature: f64,
    formula: RarityFormula,
) -> Result<Vec<f64>, SamplingError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(SamplingError::InvalidTemperature(temperature));
    }
    let freqs = table.frequencies()?;
    let logits: Vec<Option<f64>> = freqs
        .iter()
        .zip(&table.pixel_counts)
        .map(|(&f, &n)| {
            (n > 0).then(|| match formula {
                RarityFormula::ExpComplement => (1.0 - f) / temperature,
                RarityFormula::Uniform => 0.0,
            })
        })
        .collect();
    let max = logits
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .map(|l| l.map_or(0.0, |l| libm::exp(l - max)))
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RcsConfig {
    pub temperature: f64,
    pub count: usize,
    pub with_replacement: bool,
    pub seed: u64,
    pub formula: RarityFormula,
}

impl Default for RcsConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            count: 3000,
            with_replacement: false,
            seed: 0,
            formula: RarityFormula::ExpComplement,
        }
    }
}

/// Seeded two-stage sampler: class first, then an entry containing it.
pub struct RcsSampler<'a> {
    table: &'a ClassFrequencyTable,
    probs: Vec<f64>,
    rng: ChaCha8Rng,
}

impl<'a> RcsSampler<'a> {
    pub fn new(table: &'a ClassFrequencyTable, config: &RcsConfig) -> Result<Self, SamplingError> {
        let probs = rcs_class_distribution(table, config.temperature, config.formula)?;
        Ok(Self {
            table,
            probs,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// One class draw from the full distribution.
    pub fn draw_class(&mut self) -> usize {
        let dist = WeightedIndex::new(&self.probs).expect("at least one class occurs");
        dist.sample(&mut self.rng)
    }

    /// Draws `count` entry indices. Without replacement, classes whose
    /// entries are used up drop out and the remaining weights renormalise.
    pub fn sample(&mut self, count: usize, with_replacement: bool) -> Result<Vec<usize>, SamplingError> {
        if count == 0 {
            return Err(SamplingError::ZeroCount);
        }
        if with_replacement {
            let dist = WeightedIndex::new(&self.probs).expect("at least one class occurs");
            return Ok((0..count)
                .map(|_| {
                    let c = dist.sample(&mut self.rng);
                    let pool = &self.table.occurrence[c];
                    pool[self.rng.random_range(0..pool.len())]
                })
                .collect());
        }

        let drawable: BTreeSet<usize> = self.table.occurrence.iter().flatten().copied().collect();
        if count > drawable.len() {
            return Err(SamplingError::PoolTooSmall {
                requested: count,
                available: drawable.len(),
            });
        }
        let mut used = vec![false; self.table.entries];
        let mut remaining: Vec<Vec<usize>> = self.table.occurrence.clone();
        let mut weights = self.probs.clone();
        let mut out = Vec::with_capacity(count);
        let mut dist = WeightedIndex::new(&weights).expect("at least one class occurs");
        while out.len() < count {
            let c = dist.sample(&mut self.rng);
            let pool = &mut remaining[c];
            pool.retain(|&e| !used[e]);
            if pool.is_empty() {
                weights[c] = 0.0;
                dist = WeightedIndex::new(&weights).expect("drawable entries remain");
                continue;
            }
            let e = pool.swap_remove(self.rng.random_range(0..pool.len()));
            used[e] = true;
            out.push(e);
        }
        Ok(out)
    }
}

/// Rare-class-sampled subset of a pool of `pool_len` entries described by
/// `table`. Returns entry indices in draw order.
pub fn rcs_sample_subset(
    pool_len: usize,
    table: &ClassFrequencyTable,
    config: &RcsConfig,
) -> Result<Vec<usize>, SamplingError> {
    if table.entries != pool_len {
        return Err(SamplingError::TableMismatch {
            table: table.entries,
            pool: pool_len,
        });
    }
    if !config.with_replacement && config.count > pool_len {
        return Err(SamplingError::PoolTooSmall {
            requested: config.count,
            available: pool_len,
        });
    }
    RcsSampler::new(table, config)?.sample(config.count, config.with_replacement)
}

/// Every `stride`-th item starting at `offset`.
pub fn stride_subset<T: Clone>(items: &[T], stride: usize, offset: usize) -> Result<Vec<T>, SamplingError> {
    if stride == 0 {
        return Err(SamplingError::ZeroStride);
    }
    Ok(items.iter().skip(offset).step_by(stride).cloned().collect())
}

/// True when `map` shows at least `min_classes` distinct non-void classes.
pub fn is_multiclass(map: &SemanticMap, min_classes: usize) -> bool {
    distinct_classes(&map.histogram()) >= min_classes
}

pub fn distinct_classes(hist: &[u64; 256]) -> usize {
    hist[..VOID_ID as usize].iter().filter(|&&n| n > 0).count()
}

/// Keeps entries whose condition tag (weather, time of day, ...) is allowed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConditionFilter {
    pub allowed: BTreeSet<String>,
}

impl ConditionFilter {
    pub const WILDCARD: &'static str = "*";

    pub fn new<I, S>(allowed: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            allowed: allowed.into_iter().map(Into::into).collect(),
        }
    }

    /// Untagged entries pass only under the wildcard.
    pub fn matches(&self, tag: Option<&str>) -> bool {
        if self.allowed.contains(Self::WILDCARD) {
            return true;
        }
        tag.is_some_and(|t| self.allowed.contains(t))
    }
}
