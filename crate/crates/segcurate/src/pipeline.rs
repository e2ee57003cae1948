//! End-to-end curation: harmonise and crop every source map, generate `N`
//! candidates, pseudo-label them, score with MCOC and keep the best `k`.
//!
//! Everything for one run lives under `<out>/<run-id>/`:
//!
//! ```text
//! sources/<key>.png          harmonised, cropped source maps
//! images/<key>/cNN_0.png     generated candidates
//! labels/<key>/cNN.png       their pseudo-labels
//! records/<key>.json         one CurationRecord per finished entry
//! manifest.jsonl             curated (image, label) pairs
//! audit.jsonl                every candidate with its full MCOC report
//! summary.json
//! ```
//!
//! A record is written only after all of its files, so a run that is killed
//! and restarted skips finished entries and redoes the rest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use segcurate_core::labelmap::{center_crop_ratio, connected_components, Connectivity};
use segcurate_core::mcoc::{
    pair_with_pseudolabels, rank_and_select, score_components, AcceptanceMode, LabelPairing, McocError,
    McocParams, McocReport,
};
use segcurate_core::mock::Corruption;
use segcurate_core::regularize::{ConditionSchedule, ErosionPolicy};
use segcurate_core::taxonomy::{harmonize, ClassTaxonomy, DatasetMapping};

use crate::bridge::mock::{MockGenerator, MockLabeller};
use crate::bridge::{BridgeError, BridgeResult, Generator, Labeller, Role, Timeouts, WorkerHandle};
use crate::digest::{candidate_seed, entry_key, sha256_hex, sha256_parts, taxonomy_hash};
use crate::error::{Error, Result};
use crate::labelfile::{encode_label_map, read_label_map, read_raw_label_map, remove_temporaries, write_atomic};
use crate::manifest::{DatasetManifest, ManifestEntry, ManifestHeader};
use crate::mapping::load_mapping;
use crate::subset::RecipeStep;

/// Settings of the in-process mock workers used when no worker command is
/// configured.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSettings {
    pub corruption: Corruption,
    /// Per-pixel label noise of the mock labeller.
    pub noise: f64,
    pub labeller_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub source_manifest: PathBuf,
    pub mapping: Option<PathBuf>,
    /// Reject source ids the mapping does not cover instead of voiding them.
    pub strict_mapping: bool,
    pub candidates: u32,
    pub select: u32,
    pub tau: f64,
    pub mode: AcceptanceMode,
    pub connectivity: Connectivity,
    pub crop_ratio: [u32; 2],
    /// Generator worker command line; in-process mock when absent.
    pub generator: Option<Vec<String>>,
    /// Labeller worker command line; in-process mock when absent.
    pub labeller: Option<Vec<String>>,
    pub workers: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub pairing: LabelPairing,
    /// Extra attempts per worker request.
    pub retries: u32,
    pub timeouts: Timeouts,
    pub mock: MockSettings,
    /// Used by the `conditions` command.
    pub conditions: ConditionSchedule,
    /// Used by the `conditions` and `erode` commands.
    pub erosion: ErosionPolicy,
    /// Used by the `subset` command.
    pub recipe: Vec<RecipeStep>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source_manifest: PathBuf::new(),
            mapping: None,
            strict_mapping: true,
            candidates: 10,
            select: 3,
            tau: 0.7,
            mode: AcceptanceMode::default(),
            connectivity: Connectivity::default(),
            crop_ratio: [2, 1],
            generator: None,
            labeller: None,
            workers: 1,
            seed: 0,
            out: PathBuf::from("out"),
            pairing: LabelPairing::default(),
            retries: 2,
            timeouts: Timeouts::default(),
            mock: MockSettings::default(),
            conditions: ConditionSchedule::default(),
            erosion: ErosionPolicy::default(),
            recipe: Vec::new(),
        }
    }
}

/// Fields that do not change what a run produces, left out of the run id.
const NON_IDENTITY_FIELDS: &[&str] = &["workers", "out", "timeouts", "conditions", "erosion", "recipe"];

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.source_manifest.as_os_str().is_empty() {
            return bad("source_manifest is required".into());
        }
        if self.select == 0 || self.select > self.candidates {
            return bad(format!("need 1 <= select <= candidates, got select {} of {}", self.select, self.candidates));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.crop_ratio.contains(&0) {
            return bad(format!("invalid crop ratio {:?}", self.crop_ratio));
        }
        for (name, cmd) in [("generator", &self.generator), ("labeller", &self.labeller)] {
            if cmd.as_ref().is_some_and(|c| c.is_empty()) {
                return bad(format!("{name} command is empty"));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> McocParams {
        McocParams {
            tau: self.tau,
            mode: self.mode,
            connectivity: self.connectivity,
        }
    }

    /// Content hash of every setting that affects the run's outputs.
    pub fn run_id(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            for f in NON_IDENTITY_FIELDS {
                obj.remove(*f);
            }
        }
        sha256_hex(value.to_string().as_bytes())[..16].to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.run_id())
    }
}

/// One generator and one labeller, owned by a single lane.
pub struct Lane {
    pub generator: Box<dyn Generator>,
    pub labeller: Box<dyn Labeller>,
}

/// Builds the workers of lane `index`, exchanging files through `workdir`.
pub trait LaneFactory: Sync {
    fn lane(&self, index: usize, workdir: &Path) -> Result<Lane>;
}

impl<F> LaneFactory for F
where
    F: Fn(usize, &Path) -> Result<Lane> + Sync,
{
    fn lane(&self, index: usize, workdir: &Path) -> Result<Lane> {
        self(index, workdir)
    }
}

/// Worker processes from the config's commands, in-process mocks otherwise.
pub struct ConfiguredLanes {
    pub config: PipelineConfig,
    pub taxonomy: ClassTaxonomy,
}

impl LaneFactory for ConfiguredLanes {
    fn lane(&self, _index: usize, workdir: &Path) -> Result<Lane> {
        let c = &self.config;
        let generator: Box<dyn Generator> = match &c.generator {
            Some(cmd) => Box::new(WorkerHandle::spawn(Role::Generator, cmd, workdir, c.timeouts)?),
            None => Box::new(MockGenerator::new(workdir, self.taxonomy.clone(), c.mock.corruption)),
        };
        let labeller: Box<dyn Labeller> = match &c.labeller {
            Some(cmd) => Box::new(WorkerHandle::spawn(Role::Labeller, cmd, workdir, c.timeouts)?),
            None => Box::new(MockLabeller::new(
                workdir,
                self.taxonomy.clone(),
                c.mock.noise,
                c.mock.labeller_seed,
            )),
        };
        Ok(Lane { generator, labeller })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub candidate: u32,
    pub seed: u64,
    pub image_ref: String,
    pub image_sha256: String,
    pub label_ref: String,
    pub label_sha256: String,
    pub score: f64,
    /// Position in the ranking, 0 = best.
    pub rank: u32,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub candidate: u32,
    pub image_ref: String,
    pub label_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedCandidate {
    pub candidate: u32,
    pub score: f64,
}

/// Everything produced for one source entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub source_id: String,
    /// Hash of run id, entry id and harmonised source map; a stored record is
    /// reused only when this still matches.
    pub digest: String,
    pub source_ref: String,
    pub candidates: Vec<CandidateRecord>,
    pub ranked: Vec<u32>,
    pub selected: Vec<u32>,
    pub pairs: Vec<PairRecord>,
    pub rejected: Vec<RejectedCandidate>,
    pub reports: Vec<McocReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub id: String,
    pub error: String,
    #[serde(skip)]
    pub protocol: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCount {
    pub accepted: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub entries: usize,
    pub completed: usize,
    pub curated_pairs: usize,
    pub candidates_scored: usize,
    pub mean_mcoc_all: Option<f64>,
    pub mean_mcoc_selected: Option<f64>,
    /// Candidate scores in ten bins of width 0.1; 1.0 falls in the last.
    pub score_histogram: [u64; 10],
    pub selected_score_histogram: [u64; 10],
    /// Component acceptance over all candidates, per source class name.
    pub class_acceptance: BTreeMap<String, AcceptanceCount>,
    pub failed: Vec<EntryFailure>,
}

#[derive(Debug, Clone)]
pub struct CurationOutcome {
    pub run_dir: PathBuf,
    pub manifest: DatasetManifest,
    /// Finished records in entry-id order.
    pub records: Vec<CurationRecord>,
    pub summary: RunSummary,
    /// Entries taken from an earlier, interrupted run.
    pub resumed: usize,
}

impl CurationOutcome {
    /// 0 when every entry finished, 4 if a worker broke protocol, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        let failed = &self.summary.failed;
        if failed.is_empty() {
            0
        } else if failed.iter().any(|f| f.protocol) {
            4
        } else {
            3
        }
    }
}

pub const RECORDS_DIR: &str = "records";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn run_curation(config: &PipelineConfig) -> Result<CurationOutcome> {
    let taxonomy = ClassTaxonomy::urban19();
    let lanes = ConfiguredLanes {
        config: config.clone(),
        taxonomy: taxonomy.clone(),
    };
    run_curation_with(config, &taxonomy, &lanes)
}

struct Context<'a> {
    config: &'a PipelineConfig,
    taxonomy: &'a ClassTaxonomy,
    mapping: DatasetMapping,
    manifest: DatasetManifest,
    run_id: String,
    run_dir: PathBuf,
    params: McocParams,
}

/// A finished record (and whether it was resumed) or the entry's failure.
type EntryOutcome = std::result::Result<(CurationRecord, bool), EntryFailure>;

enum EntryError {
    /// The entry failed; the run goes on.
    Entry(EntryFailure),
    /// A lane could not be set up; the run stops.
    Fatal(Error),
}

pub fn run_curation_with(
    config: &PipelineConfig,
    taxonomy: &ClassTaxonomy,
    lanes: &dyn LaneFactory,
) -> Result<CurationOutcome> {
    config.validate()?;
    config.params().validate().map_err(|e| Error::Config(e.to_string()))?;
    let mapping = match &config.mapping {
        Some(path) => load_mapping(path, taxonomy)?,
        None => DatasetMapping::identity(taxonomy),
    };
    let manifest = DatasetManifest::load(&config.source_manifest)?;
    let run_id = config.run_id();
    let run_dir = config.out.join(&run_id);
    fs::create_dir_all(run_dir.join(RECORDS_DIR)).map_err(|e| Error::io(&run_dir, e))?;
    let stale = remove_temporaries(&run_dir)?;
    if stale > 0 {
        info!("removed {stale} temporary files left by an interrupted run");
    }
    let ctx = Context {
        config,
        taxonomy,
        mapping,
        manifest,
        run_id,
        run_dir,
        params: config.params(),
    };
    info!(
        "run {}: {} entries, N={} k={} tau={} W={}",
        ctx.run_id,
        ctx.manifest.len(),
        config.candidates,
        config.select,
        config.tau,
        config.workers
    );

    let n = ctx.manifest.len();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<EntryOutcome>>> = Mutex::new(vec![None; n]);
    let fatal: Mutex<Option<Error>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for lane_index in 0..config.workers.min(n.max(1)) {
            let (ctx, next, abort, results, fatal) = (&ctx, &next, &abort, &results, &fatal);
            scope.spawn(move || {
                let mut lane: Option<Lane> = None;
                while !abort.load(Ordering::SeqCst) {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    let outcome = match curate_entry(ctx, i, lane_index, &mut lane, lanes) {
                        Ok(done) => Ok(done),
                        Err(EntryError::Entry(f)) => {
                            warn!("entry {:?} failed: {}", f.id, f.error);
                            if f.protocol {
                                lane = None;
                            }
                            Err(f)
                        }
                        Err(EntryError::Fatal(e)) => {
                            abort.store(true, Ordering::SeqCst);
                            fatal.lock().expect("fatal lock").get_or_insert(e);
                            break;
                        }
                    };
                    results.lock().expect("results lock")[i] = Some(outcome);
                }
            });
        }
    });
    if let Some(e) = fatal.into_inner().expect("fatal lock") {
        return Err(e);
    }

    let mut records = Vec::new();
    let mut failed = Vec::new();
    let mut resumed = 0;
    for (i, r) in results.into_inner().expect("results lock").into_iter().enumerate() {
        match r {
            Some(Ok((rec, was_resumed))) => {
                resumed += usize::from(was_resumed);
                records.push(rec);
            }
            Some(Err(f)) => failed.push(f),
            None => failed.push(EntryFailure {
                id: ctx.manifest.entries[i].id.clone(),
                error: "not processed".into(),
                protocol: false,
            }),
        }
    }
    records.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    failed.sort_by(|a, b| a.id.cmp(&b.id));

    let curated = curated_manifest(&ctx, &records);
    curated.save(&ctx.run_dir.join(MANIFEST_FILE))?;
    write_atomic(&ctx.run_dir.join(AUDIT_FILE), audit_log(&records).as_bytes())?;
    let summary = summarize(&ctx, &records, failed, curated.len());
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_atomic(&ctx.run_dir.join(SUMMARY_FILE), json.as_bytes())?;
    info!(
        "run {}: {} curated pairs from {} entries ({} resumed, {} failed)",
        ctx.run_id,
        curated.len(),
        records.len(),
        resumed,
        summary.failed.len()
    );
    Ok(CurationOutcome {
        run_dir: ctx.run_dir,
        manifest: curated,
        records,
        summary,
        resumed,
    })
}

fn entry_failure(id: &str, error: impl ToString, protocol: bool) -> EntryError {
    EntryError::Entry(EntryFailure {
        id: id.to_string(),
        error: error.to_string(),
        protocol,
    })
}

fn bridge_failure(id: &str, what: &str, e: BridgeError) -> EntryError {
    let protocol = e.is_protocol();
    entry_failure(id, format!("{what}: {e}"), protocol)
}

/// Runs `op`, retrying retryable failures up to `retries` times after
/// letting the worker recover.
fn with_retries<T: ?Sized, R>(
    target: &mut T,
    retries: u32,
    recover: fn(&mut T) -> BridgeResult<()>,
    mut op: impl FnMut(&mut T) -> BridgeResult<R>,
) -> BridgeResult<R> {
    let mut attempt = 0;
    loop {
        match op(target) {
            Ok(r) => return Ok(r),
            Err(e) if e.is_retryable() && attempt < retries => {
                attempt += 1;
                warn!("attempt {attempt} failed ({e}); retrying");
                recover(target)?;
            }
            Err(e) => return Err(e),
        }
    }
}

fn file_sha(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

/// A stored record is reusable when its digest matches and every file it
/// names still has the recorded content.
fn load_finished(path: &Path, digest: &str, run_dir: &Path) -> Option<CurationRecord> {
    let rec: CurationRecord = serde_json::from_slice(&fs::read(path).ok()?).ok()?;
    if rec.digest != digest || !run_dir.join(&rec.source_ref).is_file() {
        return None;
    }
    let intact = rec.candidates.iter().all(|c| {
        file_sha(&run_dir.join(&c.image_ref)).as_deref() == Some(c.image_sha256.as_str())
            && file_sha(&run_dir.join(&c.label_ref)).as_deref() == Some(c.label_sha256.as_str())
    });
    intact.then_some(rec)
}

fn curate_entry(
    ctx: &Context<'_>,
    index: usize,
    lane_index: usize,
    lane: &mut Option<Lane>,
    lanes: &dyn LaneFactory,
) -> std::result::Result<(CurationRecord, bool), EntryError> {
    let entry = &ctx.manifest.entries[index];
    let id = entry.id.as_str();
    let key = entry_key(id);

    let raw = read_raw_label_map(&ctx.manifest.resolve(&entry.label_ref)).map_err(|e| entry_failure(id, e, false))?;
    let source = harmonize(&raw, &ctx.mapping, ctx.config.strict_mapping)
        .map_err(|e| entry_failure(id, format!("harmonizing: {e}"), false))?;
    let [rw, rh] = ctx.config.crop_ratio;
    let source = center_crop_ratio(&source, rw, rh).map_err(|e| entry_failure(id, format!("cropping: {e}"), false))?;
    let source_bytes = encode_label_map(&source);
    let digest = sha256_parts(&[ctx.run_id.as_bytes(), id.as_bytes(), &source_bytes]);
    let record_path = ctx.run_dir.join(RECORDS_DIR).join(format!("{key}.json"));
    if let Some(rec) = load_finished(&record_path, &digest, &ctx.run_dir) {
        return Ok((rec, true));
    }

    let components = connected_components(&source, ctx.params.connectivity);
    if components.is_empty() {
        return Err(entry_failure(id, McocError::AllVoidSource, false));
    }
    let source_ref = format!("sources/{key}.png");
    write_atomic(&ctx.run_dir.join(&source_ref), &source_bytes).map_err(|e| entry_failure(id, e, false))?;

    if lane.is_none() {
        *lane = Some(lanes.lane(lane_index, &ctx.run_dir).map_err(EntryError::Fatal)?);
    }
    let Lane { generator, labeller } = lane.as_mut().expect("lane initialised");
    let retries = ctx.config.retries;

    let mut candidates = Vec::new();
    let mut reports = Vec::new();
    for c in 0..ctx.config.candidates {
        let seed = candidate_seed(ctx.config.seed, id, c);
        let prefix = format!("images/{key}/c{c:02}");
        let images = with_retries(generator, retries, |g| g.recover(), |g| g.generate(&source_ref, seed, 1, &prefix))
            .map_err(|e| bridge_failure(id, &format!("generating candidate {c}"), e))?;
        let image_ref = images
            .into_iter()
            .next()
            .ok_or_else(|| entry_failure(id, format!("generator returned no image for candidate {c}"), true))?;
        let label_out = format!("labels/{key}/c{c:02}.png");
        let label_ref = with_retries(labeller, retries, |l| l.recover(), |l| l.label(&image_ref, &label_out))
            .map_err(|e| bridge_failure(id, &format!("labelling candidate {c}"), e))?;

        let label_path = ctx.run_dir.join(&label_ref);
        let pred = read_label_map(&label_path, ctx.taxonomy)
            .map_err(|e| entry_failure(id, format!("pseudo-label of candidate {c}: {e}"), false))?;
        let report = score_components(c, &components, &pred, &ctx.params)
            .map_err(|e| entry_failure(id, format!("scoring candidate {c}: {e}"), false))?;
        let image_sha256 = file_sha(&ctx.run_dir.join(&image_ref))
            .ok_or_else(|| entry_failure(id, format!("candidate {c}: image {image_ref} was not written"), false))?;
        let label_sha256 = file_sha(&label_path).expect("label was just read");
        candidates.push(CandidateRecord {
            candidate: c,
            seed,
            image_ref,
            image_sha256,
            label_ref,
            label_sha256,
            score: report.score,
            rank: 0,
            selected: false,
        });
        reports.push(report);
    }

    let selection = rank_and_select(id, reports, ctx.config.select as usize).map_err(|e| entry_failure(id, e, false))?;
    for (rank, &cid) in selection.ranked.iter().enumerate() {
        let cand = &mut candidates[cid as usize];
        cand.rank = rank as u32;
        cand.selected = selection.selected.contains(&cid);
    }
    let images: BTreeMap<u32, String> = candidates.iter().map(|c| (c.candidate, c.image_ref.clone())).collect();
    let labels: BTreeMap<u32, String> = candidates.iter().map(|c| (c.candidate, c.label_ref.clone())).collect();
    let pairs = pair_with_pseudolabels(&selection, &images, &labels, ctx.config.pairing, &source_ref)
        .map_err(|e| entry_failure(id, e, false))?
        .into_iter()
        .map(|p| PairRecord {
            candidate: p.candidate_id,
            image_ref: p.image,
            label_ref: p.label,
        })
        .collect();
    let rejected = selection
        .rejected()
        .map(|cid| RejectedCandidate {
            candidate: cid,
            score: candidates[cid as usize].score,
        })
        .collect();
    let record = CurationRecord {
        source_id: id.to_string(),
        digest,
        source_ref,
        candidates,
        ranked: selection.ranked.clone(),
        selected: selection.selected.clone(),
        pairs,
        rejected,
        reports: selection.reports,
    };
    let json = serde_json::to_vec(&record).expect("record serializes");
    write_atomic(&record_path, &json).map_err(|e| entry_failure(id, e, false))?;
    Ok((record, false))
}

fn curated_manifest(ctx: &Context<'_>, records: &[CurationRecord]) -> DatasetManifest {
    let sources: BTreeMap<&str, &ManifestEntry> = ctx.manifest.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut entries = Vec::new();
    for rec in records {
        let src = sources[rec.source_id.as_str()];
        for pair in &rec.pairs {
            let mut e = ManifestEntry::new(
                format!("{}#c{:02}", rec.source_id, pair.candidate),
                pair.label_ref.clone(),
                src.dataset.clone(),
            );
            e.image_ref = Some(pair.image_ref.clone());
            e.condition_tag = src.condition_tag.clone();
            e.split = src.split.clone();
            e.source_id = Some(rec.source_id.clone());
            e.candidate = Some(pair.candidate);
            e.mcoc = Some(rec.candidates[pair.candidate as usize].score);
            entries.push(e);
        }
    }
    let header = ManifestHeader {
        taxonomy_hash: taxonomy_hash(ctx.taxonomy),
        mapping: Some(ctx.mapping.dataset_name.clone()).filter(|m| !m.is_empty()),
        run_id: Some(ctx.run_id.clone()),
        ..ManifestHeader::for_taxonomy(ctx.taxonomy)
    };
    DatasetManifest::new(ctx.run_dir.clone(), header, entries)
}

#[derive(Serialize)]
struct AuditLine<'a> {
    source_id: &'a str,
    candidate: u32,
    seed: u64,
    image_ref: &'a str,
    label_ref: &'a str,
    rank: u32,
    selected: bool,
    report: &'a McocReport,
}

fn audit_log(records: &[CurationRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        for (c, report) in rec.candidates.iter().zip(&rec.reports) {
            let line = AuditLine {
                source_id: &rec.source_id,
                candidate: c.candidate,
                seed: c.seed,
                image_ref: &c.image_ref,
                label_ref: &c.label_ref,
                rank: c.rank,
                selected: c.selected,
                report,
            };
            out.push_str(&serde_json::to_string(&line).expect("audit line serializes"));
            out.push('\n');
        }
    }
    out
}

fn bin(score: f64) -> usize {
    ((score * 10.0).floor() as usize).min(9)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn summarize(ctx: &Context<'_>, records: &[CurationRecord], failed: Vec<EntryFailure>, curated_pairs: usize) -> RunSummary {
    let mut all = Vec::new();
    let mut selected = Vec::new();
    let mut score_histogram = [0u64; 10];
    let mut selected_score_histogram = [0u64; 10];
    let mut per_class: BTreeMap<u8, (u64, u64)> = BTreeMap::new();
    for rec in records {
        for c in &rec.candidates {
            all.push(c.score);
            score_histogram[bin(c.score)] += 1;
            if c.selected {
                selected.push(c.score);
                selected_score_histogram[bin(c.score)] += 1;
            }
        }
        for report in &rec.reports {
            for pc in &report.per_class {
                let slot = per_class.entry(pc.class_id).or_default();
                slot.0 += pc.accepted as u64;
                slot.1 += pc.total as u64;
            }
        }
    }
    let class_acceptance = per_class
        .into_iter()
        .map(|(id, (accepted, total))| {
            let name = ctx.taxonomy.class(id).map_or_else(|| id.to_string(), |c| c.name.clone());
            (name, AcceptanceCount { accepted, total })
        })
        .collect();
    RunSummary {
        run_id: ctx.run_id.clone(),
        entries: ctx.manifest.len(),
        completed: records.len(),
        curated_pairs,
        candidates_scored: all.len(),
        mean_mcoc_all: mean(&all),
        mean_mcoc_selected: mean(&selected),
        score_histogram,
        selected_score_histogram,
        class_acceptance,
        failed,
    }
}
