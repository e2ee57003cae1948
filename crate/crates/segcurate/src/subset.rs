//! Subset recipes: a JSON array of sampling steps applied in order.
//!
//! ```json
//! [{"op": "filter_multiclass", "min_classes": 2}, {"op": "stride", "stride": 10}]
//! ```

use serde::{Deserialize, Serialize};

use segcurate_core::sampling::{
    distinct_classes, rcs_sample_subset, stride_subset, ClassFrequencyTable, ConditionFilter, RarityFormula,
    RcsConfig,
};
use segcurate_core::taxonomy::ClassTaxonomy;

use crate::error::{Error, Result};
use crate::freq::LabelCache;
use crate::manifest::{DatasetManifest, ManifestEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum RecipeStep {
    FilterMulticlass {
        #[serde(default = "default_min_classes")]
        min_classes: usize,
    },
    Stride {
        stride: usize,
        #[serde(default)]
        offset: usize,
    },
    FilterCondition {
        allowed: Vec<String>,
    },
    Rcs {
        count: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        with_replacement: bool,
        #[serde(default)]
        formula: RarityFormula,
    },
}

fn default_min_classes() -> usize {
    2
}

fn default_temperature() -> f64 {
    RcsConfig::default().temperature
}

pub type Recipe = Vec<RecipeStep>;

pub fn parse_recipe(text: &str) -> Result<Recipe> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("recipe: {e}")))
}

/// Applies `recipe` to `manifest`. Label maps are decoded at most once per
/// file, however many steps need them.
pub fn run_subset(manifest: &DatasetManifest, recipe: &[RecipeStep], taxonomy: &ClassTaxonomy) -> Result<DatasetManifest> {
    let mut cache = LabelCache::new();
    let mut entries = manifest.entries.clone();
    for step in recipe {
        entries = apply_step(manifest, entries, step, taxonomy, &mut cache)?;
    }
    let mut out = manifest.with_entries(entries);
    let mut history = match manifest.header.recipe.clone() {
        Some(serde_json::Value::Array(prior)) => prior,
        Some(other) => vec![other],
        None => Vec::new(),
    };
    history.extend(recipe.iter().map(|s| serde_json::to_value(s).expect("recipe serializes")));
    out.header.recipe = Some(serde_json::Value::Array(history));
    Ok(out)
}

fn apply_step(
    manifest: &DatasetManifest,
    entries: Vec<ManifestEntry>,
    step: &RecipeStep,
    taxonomy: &ClassTaxonomy,
    cache: &mut LabelCache,
) -> Result<Vec<ManifestEntry>> {
    Ok(match step {
        RecipeStep::FilterMulticlass { min_classes } => {
            let mut kept = Vec::new();
            for e in entries {
                let hist = cache.histogram(&manifest.resolve(&e.label_ref), &e.id, taxonomy)?;
                if distinct_classes(&hist) >= *min_classes {
                    kept.push(e);
                }
            }
            kept
        }
        RecipeStep::Stride { stride, offset } => stride_subset(&entries, *stride, *offset)?,
        RecipeStep::FilterCondition { allowed } => {
            let filter = ConditionFilter::new(allowed.iter().cloned());
            entries
                .into_iter()
                .filter(|e| filter.matches(e.condition_tag.as_deref()))
                .collect()
        }
        RecipeStep::Rcs {
            count,
            temperature,
            seed,
            with_replacement,
            formula,
        } => {
            let mut table = ClassFrequencyTable::new(taxonomy.len());
            for e in &entries {
                table.push_histogram(&cache.histogram(&manifest.resolve(&e.label_ref), &e.id, taxonomy)?);
            }
            let config = RcsConfig {
                temperature: *temperature,
                count: *count,
                with_replacement: *with_replacement,
                seed: *seed,
                formula: *formula,
            };
            rcs_sample_subset(entries.len(), &table, &config)?
                .into_iter()
                .map(|i| entries[i].clone())
                .collect()
        }
    })
}
