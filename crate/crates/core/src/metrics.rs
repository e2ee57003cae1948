//! Confusion matrices and per-class IoU.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::labelmap::{MapError, SemanticMap, VOID_ID};
use crate::taxonomy::ClassTaxonomy;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("predicted class id {0} is outside the {1}-class taxonomy")]
    UnknownPrediction(u8, usize),
    #[error("ground-truth class id {0} is outside the {1}-class taxonomy")]
    UnknownGroundTruth(u8, usize),
    #[error("evaluated class set is empty")]
    EmptyEvaluated,
    #[error("confusion matrices have {0} and {1} classes")]
    SizeMismatch(usize, usize),
}

/// Ground-truth rows, prediction columns. Void ground truth is skipped; void
/// predictions go to a per-row overflow count and act as false negatives only.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    void_predictions: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            void_predictions: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: u8, pred: u8) -> u64 {
        self.counts[gt as usize * self.num_classes + pred as usize]
    }

    pub fn void_predictions(&self, gt: u8) -> u64 {
        self.void_predictions[gt as usize]
    }

    /// Number of non-void ground-truth pixels accumulated so far.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.void_predictions.iter().sum::<u64>()
    }

    pub fn accumulate(
        &mut self,
        prediction: &SemanticMap,
        ground_truth: &SemanticMap,
    ) -> Result<(), MetricsError> {
        prediction.ensure_same_dimensions(ground_truth)?;
        let k = self.num_classes;
        // validate first so a bad pair leaves the matrix untouched
        for (&p, &g) in prediction.as_slice().iter().zip(ground_truth.as_slice()) {
            if g == VOID_ID {
                continue;
            }
            if g as usize >= k {
                return Err(MetricsError::UnknownGroundTruth(g, k));
            }
            if p != VOID_ID && p as usize >= k {
                return Err(MetricsError::UnknownPrediction(p, k));
            }
        }
        for (&p, &g) in prediction.as_slice().iter().zip(ground_truth.as_slice()) {
            if g == VOID_ID {
                continue;
            }
            if p == VOID_ID {
                self.void_predictions[g as usize] += 1;
            } else {
                self.counts[g as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.num_classes != self.num_classes {
            return Err(MetricsError::SizeMismatch(self.num_classes, other.num_classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.void_predictions.iter_mut().zip(&other.void_predictions) {
            *a += b;
        }
        Ok(())
    }

    pub fn class_counts(&self, class: u8) -> IouCounts {
        let k = self.num_classes;
        let c = class as usize;
        let tp = self.counts[c * k + c];
        let row: u64 = self.counts[c * k..(c + 1) * k].iter().sum::<u64>() + self.void_predictions[c];
        let col: u64 = (0..k).map(|g| self.counts[g * k + c]).sum();
        IouCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
        }
    }

    /// IoU for every class; classes outside `evaluated` are reported absent
    /// and do not enter the mean.
    pub fn iou_report(&self, evaluated: &BTreeSet<u8>) -> Result<IouReport, MetricsError> {
        if evaluated.is_empty() {
            return Err(MetricsError::EmptyEvaluated);
        }
        if let Some(&c) = evaluated.iter().find(|&&c| c as usize >= self.num_classes) {
            return Err(MetricsError::UnknownGroundTruth(c, self.num_classes));
        }
        let per_class: Vec<Option<IouCounts>> = (0..self.num_classes as u8)
            .map(|c| evaluated.contains(&c).then(|| self.class_counts(c)))
            .collect();
        let sum: f64 = per_class.iter().flatten().map(IouCounts::iou).sum();
        Ok(IouReport {
            miou: sum / evaluated.len() as f64,
            per_class,
            evaluated: evaluated.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IouCounts {
    pub tp: u64,
    pub fp: u64,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: u64,
}

impl IouCounts {
    /// `tp / (tp + fp + fn)`, or 0 when the class never occurs on either side.
    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IouReport {
    /// Indexed by class id; `None` marks classes outside the evaluated set.
    pub per_class: Vec<Option<IouCounts>>,
    pub miou: f64,
    pub evaluated: BTreeSet<u8>,
}

impl IouReport {
    pub fn iou(&self, class: u8) -> Option<f64> {
        self.per_class
            .get(class as usize)
            .copied()
            .flatten()
            .map(|c| c.iou())
    }

    /// One-row table: mIoU followed by every class in taxonomy order, values
    /// in percent with one decimal, absent classes as `-`.
    pub fn render_table(&self, taxonomy: &ClassTaxonomy, label: &str) -> String {
        let mut header = vec![String::from("Method"), String::from("mIoU")];
        let mut row = vec![String::from(label), format!("{:.1}", self.miou * 100.0)];
        for (c, info) in taxonomy.classes().iter().enumerate() {
            header.push(info.short.clone());
            row.push(match self.per_class.get(c).copied().flatten() {
                Some(counts) => format!("{:.1}", counts.iou() * 100.0),
                None => String::from("-"),
            });
        }
        let widths: Vec<usize> = header
            .iter()
            .zip(&row)
            .map(|(h, r)| h.chars().count().max(r.chars().count()))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!("{}\n{}\n", line(&header), line(&row))
    }
}
