use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;

use segcurate::conditions::emit_condition_set;
use segcurate::error::{Error, Result};
use segcurate::evaluate::run_evaluate;
use segcurate::freq::{cached_class_frequencies, class_frequencies};
use segcurate::labelfile::{decode_color_map, read_label_map, read_raw_label_map, write_atomic, write_label_map};
use segcurate::manifest::DatasetManifest;
use segcurate::mapping::{load_mapping, load_palette};
use segcurate::pipeline::{run_curation, PipelineConfig, SUMMARY_FILE};
use segcurate::subset::{parse_recipe, run_subset};
use segcurate_core::labelmap::Connectivity;
use segcurate_core::mcoc::{score_candidate, AcceptanceMode, LabelPairing};
use segcurate_core::regularize::{erode_components, ConditionKind, RadiusCap, RadiusMode};
use segcurate_core::sampling::{rcs_class_distribution, RarityFormula};
use segcurate_core::taxonomy::{harmonize, ClassTaxonomy};

#[derive(Parser)]
#[command(version, about = "Curate generated segmentation training data by object consistency")]
struct Cli {
    /// JSON config file; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, pseudo-label, score and select candidates for every source map.
    Curate(CurateArgs),
    /// Build a subset of a manifest from a recipe.
    Subset(SubsetArgs),
    /// Compute per-class IoU of predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Write the conditioning input of every training step.
    Conditions(ConditionsArgs),
    /// MCOC of one prediction against one source map.
    Score(ScoreArgs),
    /// Erode every connected component of a label map.
    Erode(ErodeArgs),
    /// Remap a source-dataset label map into the canonical classes.
    Harmonize(HarmonizeArgs),
    /// Per-class pixel frequencies and rare-class sampling probabilities.
    Freq(FreqArgs),
}

fn serde_arg<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_connectivity(s: &str) -> std::result::Result<Connectivity, String> {
    s.parse().ok().and_then(Connectivity::from_neighbours).ok_or_else(|| format!("expected 4 or 8, got {s:?}"))
}

fn parse_cap(s: &str) -> std::result::Result<RadiusCap, String> {
    match s {
        "none" => Ok(RadiusCap::None),
        "half-bbox" | "half_bbox_min" => Ok(RadiusCap::HalfBboxMin),
        n => n
            .parse()
            .map(RadiusCap::Pixels)
            .map_err(|_| format!("expected none, half-bbox or a pixel count, got {n:?}")),
    }
}

/// A worker command line, split on whitespace.
#[derive(Clone)]
struct WorkerCommand(Vec<String>);

fn split_command(s: &str) -> std::result::Result<WorkerCommand, String> {
    let parts: Vec<String> = s.split_whitespace().map(String::from).collect();
    if parts.is_empty() {
        return Err("empty command".into());
    }
    Ok(WorkerCommand(parts))
}

#[derive(Args)]
struct McocArgs {
    #[arg(long)]
    tau: Option<f64>,
    /// literal | strict
    #[arg(long, value_parser = serde_arg::<AcceptanceMode>)]
    mode: Option<AcceptanceMode>,
    /// 4 | 8
    #[arg(long, value_parser = parse_connectivity)]
    connectivity: Option<Connectivity>,
}

#[derive(Args)]
struct CurateArgs {
    /// Source manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Candidates generated per source map (N).
    #[arg(long)]
    candidates: Option<u32>,
    /// Candidates kept per source map (k).
    #[arg(long)]
    select: Option<u32>,
    #[command(flatten)]
    mcoc: McocArgs,
    /// Generator worker command, e.g. "python worker.py --role generator".
    #[arg(long, value_parser = split_command)]
    generator: Option<WorkerCommand>,
    #[arg(long, value_parser = split_command)]
    labeller: Option<WorkerCommand>,
    /// pseudo | original
    #[arg(long, value_parser = serde_arg::<LabelPairing>)]
    pairing: Option<LabelPairing>,
    /// Corruption probability of the in-process mock generator.
    #[arg(long)]
    mock_corruption: Option<f64>,
    /// Pixel noise of the in-process mock labeller.
    #[arg(long)]
    mock_noise: Option<f64>,
}

#[derive(Args)]
struct SubsetArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Recipe file (JSON array of steps); defaults to the config's recipe.
    #[arg(long)]
    recipe: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated evaluated classes; default all.
    #[arg(long, conflicts_with = "mapping")]
    classes: Option<String>,
    /// Evaluate the classes this mapping declares present.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Row label in the table.
    #[arg(long, default_value = "prediction")]
    label: String,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ErosionArgs {
    #[arg(long)]
    lambda: Option<f64>,
    /// linear | sqrt
    #[arg(long, value_parser = serde_arg::<RadiusMode>)]
    radius_mode: Option<RadiusMode>,
    /// none | half-bbox | <pixels>
    #[arg(long, value_parser = parse_cap)]
    radius_cap: Option<RadiusCap>,
    /// 4 | 8
    #[arg(long, value_parser = parse_connectivity)]
    connectivity: Option<Connectivity>,
}

#[derive(Args)]
struct ConditionsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    p_depth: Option<f64>,
    #[arg(long)]
    p_black: Option<f64>,
    #[arg(long)]
    p_coarse: Option<f64>,
    #[command(flatten)]
    erosion: ErosionArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[command(flatten)]
    mcoc: McocArgs,
}

#[derive(Args)]
struct ErodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    erosion: ErosionArgs,
}

#[derive(Args)]
struct HarmonizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, required_unless_present = "palette")]
    mapping: Option<PathBuf>,
    /// Decode an RGB colour-coded map with this palette first.
    #[arg(long)]
    palette: Option<PathBuf>,
    /// Turn unmapped ids or colours into void instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct FreqArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Cache file reused while the manifest and its label files are unchanged.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Validate the cache by file content instead of size and mtime.
    #[arg(long, requires = "cache")]
    verify_content: bool,
    #[arg(long, default_value_t = 0.05)]
    temperature: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.conditions.seed = seed;
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    let taxonomy = ClassTaxonomy::urban19();
    match cli.command {
        Command::Curate(a) => curate(config, a),
        Command::Subset(a) => subset(config, a, &taxonomy),
        Command::Evaluate(a) => evaluate(a, &taxonomy),
        Command::Conditions(a) => conditions(config, a, &taxonomy),
        Command::Score(a) => score(config, a, &taxonomy),
        Command::Erode(a) => erode(config, a, &taxonomy),
        Command::Harmonize(a) => harmonize_cmd(a, &taxonomy),
        Command::Freq(a) => freq(a, &taxonomy),
    }
}

fn apply_mcoc(config: &mut PipelineConfig, a: &McocArgs) {
    if let Some(t) = a.tau {
        config.tau = t;
    }
    if let Some(m) = a.mode {
        config.mode = m;
    }
    if let Some(c) = a.connectivity {
        config.connectivity = c;
    }
}

fn apply_erosion(config: &mut PipelineConfig, a: &ErosionArgs) {
    let p = &mut config.erosion;
    if let Some(l) = a.lambda {
        p.lambda = l;
    }
    if let Some(m) = a.radius_mode {
        p.radius_mode = m;
    }
    if let Some(c) = a.radius_cap {
        p.radius_cap = c;
    }
    if let Some(c) = a.connectivity {
        p.connectivity = c;
    }
}

fn curate(mut config: PipelineConfig, a: CurateArgs) -> Result<i32> {
    if let Some(m) = a.manifest {
        config.source_manifest = m;
    }
    if a.mapping.is_some() {
        config.mapping = a.mapping;
    }
    if let Some(n) = a.candidates {
        config.candidates = n;
    }
    if let Some(k) = a.select {
        config.select = k;
    }
    apply_mcoc(&mut config, &a.mcoc);
    if let Some(WorkerCommand(cmd)) = a.generator {
        config.generator = Some(cmd);
    }
    if let Some(WorkerCommand(cmd)) = a.labeller {
        config.labeller = Some(cmd);
    }
    if let Some(p) = a.pairing {
        config.pairing = p;
    }
    if let Some(c) = a.mock_corruption {
        config.mock.corruption.probability = c;
    }
    if let Some(n) = a.mock_noise {
        config.mock.noise = n;
    }
    let outcome = run_curation(&config)?;
    let s = &outcome.summary;
    println!(
        "{}: {} curated pairs from {}/{} entries, mean selected MCOC {}",
        outcome.run_dir.display(),
        s.curated_pairs,
        s.completed,
        s.entries,
        s.mean_mcoc_selected.map_or("-".into(), |m| format!("{m:.4}")),
    );
    for f in &s.failed {
        eprintln!("failed: {}: {}", f.id, f.error);
    }
    info!("summary written to {}", outcome.run_dir.join(SUMMARY_FILE).display());
    Ok(outcome.exit_code())
}

fn subset(config: PipelineConfig, a: SubsetArgs, taxonomy: &ClassTaxonomy) -> Result<i32> {
    let recipe = match &a.recipe {
        Some(path) => parse_recipe(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
        None => config.recipe,
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    let mut out = run_subset(&manifest, &recipe, taxonomy)?;
    rebase(&mut out, &a.output)?;
    out.save(&a.output)?;
    println!("{} of {} entries -> {}", out.len(), manifest.len(), a.output.display());
    Ok(0)
}

/// Keeps references valid when a manifest is saved outside its root: refs
/// become absolute unless the new file sits in the same directory.
fn rebase(manifest: &mut DatasetManifest, target: &Path) -> Result<()> {
    let canon = |p: &Path| fs::canonicalize(p).map_err(|e| Error::io(p, e));
    let old_root = canon(if manifest.root.as_os_str().is_empty() { Path::new(".") } else { &manifest.root })?;
    let new_dir = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(new_dir).map_err(|e| Error::io(new_dir, e))?;
    if canon(new_dir)? == old_root {
        return Ok(());
    }
    for e in &mut manifest.entries {
        e.label_ref = old_root.join(&e.label_ref).to_string_lossy().into_owned();
        if let Some(img) = &mut e.image_ref {
            *img = old_root.join(&*img).to_string_lossy().into_owned();
        }
    }
    manifest.root = new_dir.to_path_buf();
    Ok(())
}

fn evaluate(a: EvaluateArgs, taxonomy: &ClassTaxonomy) -> Result<i32> {
    let evaluated: BTreeSet<u8> = match (&a.classes, &a.mapping) {
        (Some(list), _) => list
            .split(',')
            .map(|n| {
                taxonomy
                    .id_of(n.trim())
                    .ok_or_else(|| Error::Config(format!("unknown class {:?}", n.trim())))
            })
            .collect::<Result<_>>()?,
        (None, Some(path)) => load_mapping(path, taxonomy)?.declared_present,
        (None, None) => taxonomy.ids().collect(),
    };
    let pred = DatasetManifest::load(&a.pred)?;
    let gt = DatasetManifest::load(&a.gt)?;
    let report = run_evaluate(&pred, &gt, &evaluated, taxonomy)?;
    print!("{}", report.render_table(taxonomy, &a.label));
    if let Some(path) = a.json {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_atomic(&path, json.as_bytes())?;
    }
    Ok(0)
}

fn conditions(mut config: PipelineConfig, a: ConditionsArgs, taxonomy: &ClassTaxonomy) -> Result<i32> {
    let s = &mut config.conditions;
    if let Some(p) = a.p_depth {
        s.p_depth = p;
    }
    if let Some(p) = a.p_black {
        s.p_black = p;
    }
    if let Some(p) = a.p_coarse {
        s.p_coarse = p;
    }
    apply_erosion(&mut config, &a.erosion);
    let manifest = DatasetManifest::load(&a.manifest)?;
    let set = emit_condition_set(&manifest, &config.conditions, &config.erosion, taxonomy, &a.output_dir)?;
    let counts: Vec<String> = ConditionKind::ALL
        .iter()
        .map(|&k| format!("{} {}", k.as_str(), set.count(k)))
        .collect();
    println!("{} records ({})", set.records.len(), counts.join(", "));
    Ok(0)
}

fn score(mut config: PipelineConfig, a: ScoreArgs, taxonomy: &ClassTaxonomy) -> Result<i32> {
    apply_mcoc(&mut config, &a.mcoc);
    let params = config.params();
    params.validate().map_err(|e| Error::Config(e.to_string()))?;
    let source = read_label_map(&a.source, taxonomy)?;
    let pred = read_label_map(&a.pred, taxonomy)?;
    let report = score_candidate(0, &source, &pred, &params)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(0)
}

fn erode(mut config: PipelineConfig, a: ErodeArgs, taxonomy: &ClassTaxonomy) -> Result<i32> {
    apply_erosion(&mut config, &a.erosion);
    if !config.erosion.is_valid() {
        return Err(Error::Config(format!("invalid erosion policy {:?}", config.erosion)));
    }
    let map = read_label_map(&a.input, taxonomy)?;
    write_label_map(&a.output, &erode_components(&map, &config.erosion))?;
    Ok(0)
}

fn harmonize_cmd(a: HarmonizeArgs, taxonomy: &ClassTaxonomy) -> Result<i32> {
    let strict = !a.lenient;
    let map = match &a.palette {
        Some(p) => {
            let palette = load_palette(p, taxonomy)?;
            let bytes = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
            decode_color_map(&bytes, &palette, strict)?
        }
        None => read_raw_label_map(&a.input)?,
    };
    let map = match &a.mapping {
        Some(path) => {
            let mapping = load_mapping(path, taxonomy)?;
            harmonize(&map, &mapping, strict).map_err(|e| Error::taxonomy(a.input.display().to_string(), e))?
        }
        None => map,
    };
    taxonomy
        .validate(&map)
        .map_err(|e| Error::map(a.input.display().to_string(), e))?;
    write_label_map(&a.output, &map)?;
    Ok(0)
}

fn freq(a: FreqArgs, taxonomy: &ClassTaxonomy) -> Result<i32> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let table = match &a.cache {
        Some(path) => {
            let (table, status) = cached_class_frequencies(&manifest, taxonomy, path, a.verify_content)?;
            info!("frequency cache: {status:?}");
            table
        }
        None => class_frequencies(&manifest, taxonomy)?,
    };
    let freqs = table.frequencies()?;
    let probs = rcs_class_distribution(&table, a.temperature, RarityFormula::ExpComplement)?;
    println!("{:<16} {:>12} {:>10} {:>8} {:>10}", "class", "pixels", "freq", "images", "P_rcs");
    for info in taxonomy.classes() {
        let c = info.id as usize;
        println!(
            "{:<16} {:>12} {:>10.6} {:>8} {:>10.6}",
            info.name,
            table.pixel_counts[c],
            freqs[c],
            table.occurrence[c].len(),
            probs[c]
        );
    }
    Ok(0)
}
