//! Mapping and palette files.

use std::fs;
use std::path::Path;

use segcurate_core::taxonomy::{ClassTaxonomy, DatasetMapping, Palette};

use crate::error::{Error, Result};

/// Loads a `<source id> -> <class|void>` mapping file.
pub fn load_mapping(path: &Path, taxonomy: &ClassTaxonomy) -> Result<DatasetMapping> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetMapping::parse(&text, taxonomy).map_err(|e| Error::taxonomy(path.display().to_string(), e))
}

/// Loads an `R G B -> <class|void>` palette file.
pub fn load_palette(path: &Path, taxonomy: &ClassTaxonomy) -> Result<Palette> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Palette::parse(&text, taxonomy).map_err(|e| Error::taxonomy(path.display().to_string(), e))
}
