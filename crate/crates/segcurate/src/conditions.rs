//! Materialises the conditioning input of every training step.
//!
//! Output is `<out_dir>/conditions.jsonl`: a header line followed by one
//! record per entry, in entry-id order. Step `i` is the `i`-th entry in that
//! order. `label_ref` and `image_ref` point into the source manifest (relative
//! to `source_root` in the header); `eroded_ref` and `depth_ref` are relative
//! to `out_dir`. Depth references are slots for an external depth worker.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segcurate_core::regularize::{erode_components, sample_condition, ConditionKind, ConditionSchedule, ErosionPolicy};
use segcurate_core::taxonomy::ClassTaxonomy;

use crate::digest::entry_key;
use crate::error::{Error, Result};
use crate::labelfile::{encode_label_map, read_label_map, write_atomic};
use crate::manifest::DatasetManifest;

pub const CONDITIONS_FILE: &str = "conditions.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionHeader {
    pub source_root: PathBuf,
    pub schedule: ConditionSchedule,
    pub policy: ErosionPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub step: u64,
    pub id: String,
    pub kind: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eroded_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    pub header: ConditionHeader,
    pub records: Vec<ConditionRecord>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ConditionHeader,
}

impl ConditionSet {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&HeaderLine {
            header: self.header.clone(),
        })
        .expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, message: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| bad(1, "empty condition set".into()))?;
        let header = serde_json::from_str::<HeaderLine>(first)
            .map_err(|e| bad(1, e.to_string()))?
            .header;
        let records = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i + 1, e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { header, records })
    }

    pub fn count(&self, kind: ConditionKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }
}

pub fn emit_condition_set(
    manifest: &DatasetManifest,
    schedule: &ConditionSchedule,
    policy: &ErosionPolicy,
    taxonomy: &ClassTaxonomy,
    out_dir: &Path,
) -> Result<ConditionSet> {
    if !schedule.is_valid() {
        return Err(Error::Config(format!("invalid condition schedule {schedule:?}")));
    }
    if !policy.is_valid() {
        return Err(Error::Config(format!("invalid erosion policy {policy:?}")));
    }
    let mut entries: Vec<_> = manifest.entries.iter().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));

    let mut records = Vec::with_capacity(entries.len());
    for (step, e) in entries.into_iter().enumerate() {
        let step = step as u64;
        let kind = sample_condition(schedule, step);
        let key = entry_key(&e.id);
        let mut record = ConditionRecord {
            step,
            id: e.id.clone(),
            kind,
            label_ref: None,
            image_ref: e.image_ref.clone(),
            eroded_ref: None,
            depth_ref: None,
        };
        match kind {
            ConditionKind::Full => record.label_ref = Some(e.label_ref.clone()),
            ConditionKind::Coarse => {
                let map = read_label_map(&manifest.resolve(&e.label_ref), taxonomy)
                    .map_err(|err| Error::Invalid(format!("entry {:?}: {err}", e.id)))?;
                let eroded = erode_components(&map, policy);
                let eroded_ref = format!("eroded/{key}.png");
                write_atomic(&out_dir.join(&eroded_ref), &encode_label_map(&eroded))?;
                record.label_ref = Some(e.label_ref.clone());
                record.eroded_ref = Some(eroded_ref);
            }
            ConditionKind::Depth => record.depth_ref = Some(format!("depth/{key}.png")),
            ConditionKind::Black => {}
        }
        records.push(record);
    }

    let set = ConditionSet {
        header: ConditionHeader {
            source_root: manifest.root.clone(),
            schedule: *schedule,
            policy: *policy,
        },
        records,
    };
    write_atomic(&out_dir.join(CONDITIONS_FILE), set.to_jsonl().as_bytes())?;
    Ok(set)
}
