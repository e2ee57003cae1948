use std::collections::{BTreeMap, BTreeSet};

use segcurate_core::metrics::{ConfusionMatrix, IouReport};
use segcurate_core::taxonomy::ClassTaxonomy;

use crate::error::{Error, Result};
use crate::freq::LabelCache;
use crate::manifest::DatasetManifest;

/// Accumulates one confusion matrix over all entries, pairing predictions
/// and ground truth by entry id.
pub fn run_evaluate(
    pred: &DatasetManifest,
    gt: &DatasetManifest,
    evaluated: &BTreeSet<u8>,
    taxonomy: &ClassTaxonomy,
) -> Result<IouReport> {
    let pred_by_id: BTreeMap<&str, &str> = pred.entries.iter().map(|e| (e.id.as_str(), e.label_ref.as_str())).collect();
    let gt_ids: BTreeSet<&str> = gt.entries.iter().map(|e| e.id.as_str()).collect();
    let missing: Vec<&str> = gt_ids.iter().filter(|id| !pred_by_id.contains_key(*id)).copied().collect();
    let extra: Vec<&str> = pred_by_id.keys().filter(|id| !gt_ids.contains(*id)).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Invalid(format!(
            "prediction and ground-truth ids differ: missing predictions {missing:?}, unexpected predictions {extra:?}"
        )));
    }

    let mut cm = ConfusionMatrix::new(taxonomy.len());
    let mut cache = LabelCache::new();
    for e in &gt.entries {
        let p = cache.load(&pred.resolve(pred_by_id[e.id.as_str()]), &e.id, taxonomy)?.0.clone();
        let g = &cache.load(&gt.resolve(&e.label_ref), &e.id, taxonomy)?.0;
        cm.accumulate(&p, g)
            .map_err(|err| Error::Invalid(format!("entry {:?}: {err}", e.id)))?;
    }
    Ok(cm.iou_report(evaluated)?)
}
