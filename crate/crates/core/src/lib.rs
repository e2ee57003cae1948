//! Core algorithms for curating generated semantic-segmentation training data.
//!
//! Everything in this crate is a pure function over in-memory values and only
//! needs `alloc`. File formats, worker processes and the command line live in
//! the `segcurate` crate.
//!
//! The main pieces:
//!
//! - [`labelmap`]: label grids, connected components and the 2:1 centre crop.
//! - [`taxonomy`]: the canonical urban class list and per-dataset id mappings.
//! - [`regularize`]: component-proportional erosion and the conditioning schedule.
//! - [`mcoc`]: Mean Class-wise Object Consistency scoring and top-k selection.
//! - [`sampling`]: pixel statistics, rare class sampling and subset filters.
//! - [`metrics`]: confusion matrices and IoU reports.
//! - [`mock`]: deterministic stand-ins for the generator and pseudo-labeller.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod labelmap;
pub mod mcoc;
pub mod metrics;
pub mod mock;
pub mod regularize;
pub mod sampling;
pub mod taxonomy;

pub use labelmap::{
    center_crop_ratio, connected_components, BBox, Component, ComponentSet, Connectivity,
    MapError, SemanticMap, VOID_ID,
};
pub use mcoc::{
    component_alpha, rank_and_select, score_candidate, AcceptanceMode, ComponentScore,
    McocError, McocReport, SelectionResult,
};
pub use metrics::{ConfusionMatrix, IouReport};
pub use regularize::{
    erode_components, sample_condition, ConditionKind, ConditionSchedule, ErosionPolicy,
    RadiusCap, RadiusMode,
};
pub use taxonomy::{harmonize, present_classes, ClassInfo, ClassTaxonomy, DatasetMapping};
