//! Mean Class-wise Object Consistency (MCOC).
//!
//! A generated candidate is judged by re-labelling it and checking, for each
//! connected component of the source map, whether the re-estimated labels
//! inside that component are dominated by a single class. Acceptance rates are
//! computed per source class and averaged over the classes present, so that
//! large classes such as road or sky cannot drown out small objects.
//!
//! All counting is done on integers and the final score is an exact rational;
//! the `f64` fields are for display only. Ranking compares exact values.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::labelmap::{
    connected_components, Component, ComponentSet, Connectivity, MapError, SemanticMap, VOID_ID,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McocError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("source map has no labelled pixels")]
    AllVoidSource,
    #[error("threshold tau must lie in (0, 1], got {0}")]
    InvalidTau(f64),
    #[error("no candidate reports to rank")]
    EmptyReports,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no pseudo-label for selected candidate {0}")]
    MissingPrediction(u32),
    #[error("no image for selected candidate {0}")]
    MissingImage(u32),
}

/// How a component's dominant class is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AcceptanceMode {
    /// Accept when any single class covers at least `tau` of the component.
    #[default]
    Literal,
    /// Additionally require that class to be the component's source class.
    ///
    /// The literal rule gives a constant-class prediction a perfect score; use
    /// this mode when that matters.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McocParams {
    pub tau: f64,
    pub mode: AcceptanceMode,
    pub connectivity: Connectivity,
}

impl Default for McocParams {
    fn default() -> Self {
        Self {
            tau: 0.7,
            mode: AcceptanceMode::Literal,
            connectivity: Connectivity::Four,
        }
    }
}

impl McocParams {
    pub fn validate(&self) -> Result<(), McocError> {
        if self.tau > 0.0 && self.tau <= 1.0 {
            Ok(())
        } else {
            Err(McocError::InvalidTau(self.tau))
        }
    }
}

/// Dominant predicted class inside one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alpha {
    /// `None` when every pixel of the component is predicted void.
    pub dominant_class: Option<u8>,
    pub dominant_count: u64,
    pub size: u64,
}

impl Alpha {
    pub fn fraction(&self) -> f64 {
        self.dominant_count as f64 / self.size as f64
    }

    /// `dominant_count / size >= tau`, evaluated on the correctly rounded
    /// quotient so that e.g. 7/10 meets a threshold written as 0.7.
    pub fn meets(&self, tau: f64) -> bool {
        self.dominant_class.is_some() && self.fraction() >= tau
    }
}

/// Share of each predicted class within `component`; returns the largest,
/// ties going to the lowest class id. Void predictions count for no class.
pub fn component_alpha(component: &Component, prediction: &SemanticMap) -> Result<Alpha, McocError> {
    let (w, h) = component.source_dimensions();
    if prediction.dimensions() != (w, h) {
        return Err(MapError::DimensionMismatch {
            left_w: w,
            left_h: h,
            right_w: prediction.width(),
            right_h: prediction.height(),
        }
        .into());
    }
    Ok(alpha_unchecked(component, prediction.as_slice()))
}

fn alpha_unchecked(component: &Component, prediction: &[u8]) -> Alpha {
    let mut hist = [0u64; 256];
    for &i in &component.pixels {
        hist[prediction[i as usize] as usize] += 1;
    }
    let mut best: Option<(u8, u64)> = None;
    for (class, &count) in hist[..VOID_ID as usize].iter().enumerate() {
        if count > 0 && best.is_none_or(|(_, c)| count > c) {
            best = Some((class as u8, count));
        }
    }
    Alpha {
        dominant_class: best.map(|(c, _)| c),
        dominant_count: best.map_or(0, |(_, n)| n),
        size: component.size() as u64,
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComponentScore {
    pub component_id: usize,
    pub source_class: u8,
    pub size: u64,
    pub dominant_class: Option<u8>,
    pub dominant_count: u64,
    pub dominant_fraction: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassAcceptance {
    pub class_id: u8,
    pub accepted: u32,
    pub total: u32,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McocReport {
    pub candidate_id: u32,
    pub tau: f64,
    pub mode: AcceptanceMode,
    pub connectivity: Connectivity,
    pub score: f64,
    /// One row per class present in the source map, ascending class id.
    pub per_class: Vec<ClassAcceptance>,
    pub per_component: Vec<ComponentScore>,
}

impl McocReport {
    /// The score as an exact rational: mean of `accepted / total` over classes.
    pub fn exact_score(&self) -> Ratio<BigUint> {
        let mut sum = Ratio::<BigUint>::zero();
        for c in &self.per_class {
            sum += Ratio::new(BigUint::from(c.accepted), BigUint::from(c.total));
        }
        sum / Ratio::from_integer(BigUint::from(self.per_class.len()))
    }

    pub fn classes_present(&self) -> impl Iterator<Item = u8> + '_ {
        self.per_class.iter().map(|c| c.class_id)
    }

    pub fn accepted_components(&self) -> usize {
        self.per_component.iter().filter(|c| c.accepted).count()
    }
}

fn ratio_to_f64(r: &Ratio<BigUint>) -> f64 {
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if d.is_finite() && n.is_finite() => n / d,
        _ => 0.0,
    }
}

/// Scores `prediction` against the components of `source`.
pub fn score_candidate(
    candidate_id: u32,
    source: &SemanticMap,
    prediction: &SemanticMap,
    params: &McocParams,
) -> Result<McocReport, McocError> {
    let components = connected_components(source, params.connectivity);
    score_components(candidate_id, &components, prediction, params)
}

/// As [`score_candidate`], reusing components already extracted from the
/// source map. Useful when many candidates share one source.
pub fn score_components(
    candidate_id: u32,
    components: &ComponentSet,
    prediction: &SemanticMap,
    params: &McocParams,
) -> Result<McocReport, McocError> {
    params.validate()?;
    if prediction.dimensions() != (components.width, components.height) {
        return Err(MapError::DimensionMismatch {
            left_w: components.width,
            left_h: components.height,
            right_w: prediction.width(),
            right_h: prediction.height(),
        }
        .into());
    }
    if components.is_empty() {
        return Err(McocError::AllVoidSource);
    }

    let pred = prediction.as_slice();
    let mut per_component = Vec::with_capacity(components.len());
    let mut tallies: BTreeMap<u8, (u32, u32)> = BTreeMap::new();
    for c in components.iter() {
        let alpha = alpha_unchecked(c, pred);
        let accepted = alpha.meets(params.tau)
            && match params.mode {
                AcceptanceMode::Literal => true,
                AcceptanceMode::Strict => alpha.dominant_class == Some(c.class_id),
            };
        let t = tallies.entry(c.class_id).or_default();
        t.1 += 1;
        if accepted {
            t.0 += 1;
        }
        per_component.push(ComponentScore {
            component_id: c.component_id,
            source_class: c.class_id,
            size: alpha.size,
            dominant_class: alpha.dominant_class,
            dominant_count: alpha.dominant_count,
            dominant_fraction: alpha.fraction(),
            accepted,
        });
    }

    let per_class: Vec<ClassAcceptance> = tallies
        .into_iter()
        .map(|(class_id, (accepted, total))| ClassAcceptance {
            class_id,
            accepted,
            total,
            rate: accepted as f64 / total as f64,
        })
        .collect();
    let mut report = McocReport {
        candidate_id,
        tau: params.tau,
        mode: params.mode,
        connectivity: params.connectivity,
        score: 0.0,
        per_class,
        per_component,
    };
    report.score = ratio_to_f64(&report.exact_score());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionResult {
    pub source_id: String,
    /// Candidate ids by descending score, ties by ascending id.
    pub ranked: Vec<u32>,
    pub selected: Vec<u32>,
    pub reports: Vec<McocReport>,
}

impl SelectionResult {
    pub fn report(&self, candidate_id: u32) -> Option<&McocReport> {
        self.reports.iter().find(|r| r.candidate_id == candidate_id)
    }

    pub fn rejected(&self) -> impl Iterator<Item = u32> + '_ {
        self.ranked[self.selected.len()..].iter().copied()
    }
}

/// Orders candidates by exact MCOC and keeps the best `k`.
pub fn rank_and_select(
    source_id: &str,
    reports: Vec<McocReport>,
    k: usize,
) -> Result<SelectionResult, McocError> {
    if reports.is_empty() {
        return Err(McocError::EmptyReports);
    }
    if k == 0 {
        return Err(McocError::ZeroK);
    }
    let mut keyed: Vec<(Ratio<BigUint>, u32)> = reports
        .iter()
        .map(|r| (r.exact_score(), r.candidate_id))
        .collect();
    keyed.sort_by(|a, b| match b.0.cmp(&a.0) {
        Ordering::Equal => a.1.cmp(&b.1),
        o => o,
    });
    let ranked: Vec<u32> = keyed.into_iter().map(|(_, id)| id).collect();
    let selected = ranked[..k.min(ranked.len())].to_vec();
    Ok(SelectionResult {
        source_id: source_id.into(),
        ranked,
        selected,
        reports,
    })
}

/// Which label map a selected image is paired with for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LabelPairing {
    /// The candidate's re-estimated pseudo-label.
    #[default]
    Pseudo,
    /// The original synthetic label map (ablation only).
    Original,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CuratedPair<R> {
    pub candidate_id: u32,
    pub image: R,
    pub label: R,
}

/// Pairs each selected candidate image with its training label.
pub fn pair_with_pseudolabels<R: Clone>(
    selection: &SelectionResult,
    images: &BTreeMap<u32, R>,
    pseudo_labels: &BTreeMap<u32, R>,
    pairing: LabelPairing,
    original_label: &R,
) -> Result<Vec<CuratedPair<R>>, McocError> {
    selection
        .selected
        .iter()
        .map(|&id| {
            let image = images.get(&id).ok_or(McocError::MissingImage(id))?.clone();
            let pseudo = pseudo_labels
                .get(&id)
                .ok_or(McocError::MissingPrediction(id))?;
            let label = match pairing {
                LabelPairing::Pseudo => pseudo.clone(),
                LabelPairing::Original => original_label.clone(),
            };
            Ok(CuratedPair {
                candidate_id: id,
                image,
                label,
            })
        })
        .collect()
}
