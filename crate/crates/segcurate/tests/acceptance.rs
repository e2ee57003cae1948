//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Every check compares the library against an independent, deliberately
//! naive implementation (flood fills, per-offset disc tests, direct
//! softmax formulas, hand-computed confusion counts).

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segcurate::bridge::{BridgeResult, Generator};
use segcurate::digest::candidate_seed;
use segcurate::evaluate::run_evaluate;
use segcurate::labelfile::write_label_map;
use segcurate::manifest::{DatasetManifest, ManifestEntry, ManifestHeader};
use segcurate::pipeline::{run_curation_with, Lane, PipelineConfig, AUDIT_FILE};
use segcurate::subset::{parse_recipe, run_subset};
use segcurate_core::labelmap::{center_crop_ratio, crop_window, Connectivity, VOID_ID};
use segcurate_core::mcoc::{score_candidate, AcceptanceMode, McocParams};
use segcurate_core::metrics::ConfusionMatrix;
use segcurate_core::mock::{Corruption, CorruptionStyle};
use segcurate_core::regularize::{erode_components, ErosionPolicy, RadiusCap, RadiusMode};
use segcurate_core::sampling::{
    rcs_class_distribution, rcs_sample_subset, ClassFrequencyTable, RarityFormula, RcsConfig, RcsSampler,
};
use segcurate_core::taxonomy::ClassTaxonomy;
use segcurate_core::SemanticMap;

type Check = fn();

fn main() {
    let criteria: &[(&str, Duration, Check)] = &[
        ("mcoc-oracle-equivalence", Duration::from_secs(10), mcoc_oracle_equivalence),
        ("mcoc-fixed-points", Duration::from_secs(1), mcoc_fixed_points),
        ("erosion-suite", Duration::from_secs(10), erosion_suite),
        ("rcs-suite", Duration::from_secs(30), rcs_suite),
        ("subset-recipes", Duration::from_secs(10), subset_recipes),
        ("metrics-suite", Duration::from_secs(1), metrics_suite),
        ("end-to-end-mock-pipeline", Duration::from_secs(120), end_to_end_pipeline),
        ("crop-rule", Duration::from_secs(1), crop_rule),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, budget, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = panic::catch_unwind(check);
        let took = start.elapsed();
        match result {
            Ok(()) if took <= *budget => println!("PASS {name} ({took:.2?}, budget {budget:?})"),
            Ok(()) => {
                failed += 1;
                println!("FAIL {name}: took {took:.2?}, budget {budget:?}");
            }
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Brute-force oracles

/// Component label of every pixel (None for void), by explicit flood fill.
fn flood_components(map: &SemanticMap, eight: bool) -> Vec<Option<usize>> {
    let (w, h) = (map.width() as i64, map.height() as i64);
    let at = |x: i64, y: i64| map.as_slice()[(y * w + x) as usize];
    let mut label = vec![None; (w * h) as usize];
    let mut next = 0;
    for start in 0..(w * h) {
        let (sx, sy) = (start % w, start / w);
        if at(sx, sy) == VOID_ID || label[start as usize].is_some() {
            continue;
        }
        let class = at(sx, sy);
        let mut stack = vec![(sx, sy)];
        label[start as usize] = Some(next);
        while let Some((x, y)) = stack.pop() {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let ni = (ny * w + nx) as usize;
                    if label[ni].is_none() && at(nx, ny) == class {
                        label[ni] = Some(next);
                        stack.push((nx, ny));
                    }
                }
            }
        }
        next += 1;
    }
    label
}

/// Eqs. 4-6 computed pixel by pixel, with tau = tau_num / tau_den exactly.
fn oracle_mcoc(
    source: &SemanticMap,
    pred: &SemanticMap,
    eight: bool,
    strict: bool,
    tau_num: u64,
    tau_den: u64,
) -> Ratio<BigUint> {
    let labels = flood_components(source, eight);
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut counts: Vec<BTreeMap<u8, u64>> = vec![BTreeMap::new(); count];
    let mut sizes = vec![0u64; count];
    let mut class_of = vec![0u8; count];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            sizes[c] += 1;
            class_of[c] = source.as_slice()[i];
            let p = pred.as_slice()[i];
            if p != VOID_ID {
                *counts[c].entry(p).or_default() += 1;
            }
        }
    }
    let mut per_class: BTreeMap<u8, (u64, u64)> = BTreeMap::new();
    for c in 0..count {
        // dominant class: largest count, lowest id on ties
        let best = counts[c].values().copied().max().unwrap_or(0);
        let dominant = counts[c].iter().find(|(_, &n)| n == best && n > 0).map(|(&k, _)| k);
        let mut ok = best * tau_den >= tau_num * sizes[c] && dominant.is_some();
        if strict {
            ok &= dominant == Some(class_of[c]);
        }
        let e = per_class.entry(class_of[c]).or_default();
        e.0 += u64::from(ok);
        e.1 += 1;
    }
    let mut sum = Ratio::from_integer(BigUint::from(0u32));
    for (a, t) in per_class.values() {
        sum += Ratio::new(BigUint::from(*a), BigUint::from(*t));
    }
    sum / Ratio::from_integer(BigUint::from(per_class.len()))
}

fn random_map(rng: &mut ChaCha8Rng, w: u32, h: u32, classes: u8, void_p: f64) -> SemanticMap {
    let v = (0..w * h)
        .map(|_| {
            if rng.random_bool(void_p) {
                VOID_ID
            } else {
                rng.random_range(0..classes)
            }
        })
        .collect();
    SemanticMap::new(w, h, v).unwrap()
}

/// Blocky map: a coarse random grid upsampled, so components are larger.
fn blocky_map(rng: &mut ChaCha8Rng, w: u32, h: u32, classes: u8) -> SemanticMap {
    let (bw, bh) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let coarse = random_map(rng, w.div_ceil(bw), h.div_ceil(bh), classes, 0.05);
    let v = (0..w * h)
        .map(|i| coarse.get((i % w) / bw, (i / w) / bh).unwrap())
        .collect();
    SemanticMap::new(w, h, v).unwrap()
}

/// Copy of `map` with a fraction of pixels redrawn.
fn perturb(rng: &mut ChaCha8Rng, map: &SemanticMap, rate: f64, classes: u8) -> SemanticMap {
    let v = map
        .as_slice()
        .iter()
        .map(|&c| {
            if rng.random_bool(rate) {
                if rng.random_bool(0.1) {
                    VOID_ID
                } else {
                    rng.random_range(0..classes)
                }
            } else {
                c
            }
        })
        .collect();
    SemanticMap::new(map.width(), map.height(), v).unwrap()
}

fn params(tau: f64, mode: AcceptanceMode, connectivity: Connectivity) -> McocParams {
    McocParams { tau, mode, connectivity }
}

// ---------------------------------------------------------------------------
// Criteria

fn mcoc_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0C);
    let taus = [(1u64, 2u64), (7, 10), (9, 10), (1, 1)];
    let mut pairs = 0;
    let mut non_trivial = 0;
    while pairs < 1200 {
        let (w, h) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let classes = rng.random_range(1..=5u8);
        let source = if rng.random_bool(0.5) {
            blocky_map(&mut rng, w, h, classes)
        } else {
            random_map(&mut rng, w, h, classes, 0.1)
        };
        if source.non_void_count() == 0 {
            continue;
        }
        let pred = match rng.random_range(0..3) {
            0 => random_map(&mut rng, w, h, classes, 0.1),
            1 => {
                let rate = rng.random_range(0.0..0.5);
                perturb(&mut rng, &source, rate, classes)
            }
            _ => perturb(&mut rng, &source, 0.0, classes),
        };
        pairs += 1;
        for (tn, td) in taus {
            let tau = tn as f64 / td as f64;
            for (mode, strict) in [(AcceptanceMode::Literal, false), (AcceptanceMode::Strict, true)] {
                for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
                    let report = score_candidate(0, &source, &pred, &params(tau, mode, conn)).unwrap();
                    let expect = oracle_mcoc(&source, &pred, eight, strict, tn, td);
                    assert_eq!(
                        report.exact_score(),
                        expect,
                        "pair {pairs} ({w}x{h}), tau {tau}, {mode:?}, {conn:?}\nsource {:?}\npred {:?}",
                        source.as_slice(),
                        pred.as_slice()
                    );
                    let one = Ratio::from_integer(BigUint::from(1u32));
                    non_trivial += usize::from(expect != one);
                }
            }
        }
    }
    assert!(pairs >= 1000);
    assert!(non_trivial > 1000, "too few pairs with score < 1: {non_trivial}");
}

fn mcoc_fixed_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let one = Ratio::from_integer(BigUint::from(1u32));
    for _ in 0..200 {
        let (w, h) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let s = random_map(&mut rng, w, h, 5, 0.2);
        if s.non_void_count() == 0 {
            continue;
        }
        for mode in [AcceptanceMode::Literal, AcceptanceMode::Strict] {
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let r = score_candidate(0, &s, &s, &params(0.7, mode, conn)).unwrap();
                assert_eq!(r.exact_score(), one, "MCOC(s, s) must be 1");
                let p = random_map(&mut rng, w, h, 5, 0.2);
                let r = score_candidate(0, &s, &p, &params(0.7, mode, conn)).unwrap();
                assert!((0.0..=1.0).contains(&r.score), "score {} out of range", r.score);
            }
        }
    }

    // Road, sky and car regions; a prediction that says "road" everywhere
    // dominates every component with one class, but only road's is right.
    #[rustfmt::skip]
    let source = SemanticMap::new(6, 3, vec![
        10, 10, 10, 10, 10, 10,
        0,  0,  13, 13, 0,  0,
        0,  0,  0,  0,  0,  0,
    ]).unwrap();
    let all_road = SemanticMap::filled(6, 3, 0).unwrap();
    let literal = score_candidate(0, &source, &all_road, &McocParams::default()).unwrap();
    assert_eq!(literal.exact_score(), one);
    let strict = score_candidate(0, &source, &all_road, &params(0.7, AcceptanceMode::Strict, Connectivity::Four)).unwrap();
    assert_eq!(strict.exact_score(), Ratio::new(BigUint::from(1u32), BigUint::from(3u32)));
}

/// Erosion by a disc, applied to each component's own mask: a pixel stays
/// iff every disc offset lands inside the mask.
fn oracle_erode(map: &SemanticMap, lambda: f64, mode: RadiusMode, cap: RadiusCap, eight: bool) -> SemanticMap {
    let (w, h) = (map.width() as i64, map.height() as i64);
    let labels = flood_components(map, eight);
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut out = vec![VOID_ID; (w * h) as usize];
    for c in 0..count {
        let pix: Vec<i64> = (0..w * h).filter(|&i| labels[i as usize] == Some(c)).collect();
        let size = pix.len() as f64;
        let raw = match mode {
            RadiusMode::Linear => (lambda * size).floor(),
            RadiusMode::Sqrt => (lambda * size.sqrt()).floor(),
        } as i64;
        let (xs, ys): (Vec<i64>, Vec<i64>) = pix.iter().map(|i| (i % w, i / w)).unzip();
        let bw = xs.iter().max().unwrap() - xs.iter().min().unwrap() + 1;
        let bh = ys.iter().max().unwrap() - ys.iter().min().unwrap() + 1;
        let r = match cap {
            RadiusCap::None => raw,
            RadiusCap::Pixels(p) => raw.min(p as i64),
            RadiusCap::HalfBboxMin => raw.min(bw.min(bh) / 2),
        };
        let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && labels[(y * w + x) as usize] == Some(c);
        for &i in &pix {
            let (x, y) = (i % w, i / w);
            let keep = (-r..=r).all(|dy| (-r..=r).all(|dx| dx * dx + dy * dy > r * r || inside(x + dx, y + dy)));
            if keep {
                out[i as usize] = map.as_slice()[i as usize];
            }
        }
    }
    SemanticMap::new(map.width(), map.height(), out).unwrap()
}

fn non_void(map: &SemanticMap) -> BTreeSet<usize> {
    map.as_slice().iter().enumerate().filter(|(_, &c)| c != VOID_ID).map(|(i, _)| i).collect()
}

fn erosion_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE70);
    let lambdas = [0.0, 0.01, 0.03, 0.1, 0.15, 0.4, 1.0];
    let caps = [RadiusCap::HalfBboxMin, RadiusCap::None, RadiusCap::Pixels(2)];
    for round in 0..240 {
        let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let classes = rng.random_range(1..=4);
        let map = blocky_map(&mut rng, w, h, classes);
        let mode = if round % 2 == 0 { RadiusMode::Linear } else { RadiusMode::Sqrt };
        let cap = caps[round % 3];
        let (conn, eight) = if round % 4 < 2 {
            (Connectivity::Four, false)
        } else {
            (Connectivity::Eight, true)
        };
        let mut previous: Option<BTreeSet<usize>> = None;
        for &lambda in &lambdas {
            let policy = ErosionPolicy {
                lambda,
                radius_mode: mode,
                radius_cap: cap,
                connectivity: conn,
            };
            let out = erode_components(&map, &policy);
            if lambda == 0.0 {
                assert_eq!(out, map, "lambda 0 must be the identity");
            }
            for (o, i) in out.as_slice().iter().zip(map.as_slice()) {
                assert!(*o == *i || *o == VOID_ID, "erosion changed a class");
            }
            assert_eq!(
                out,
                oracle_erode(&map, lambda, mode, cap, eight),
                "round {round}: {w}x{h}, lambda {lambda}, {mode:?}, {cap:?}, {conn:?}\n{:?}",
                map.as_slice()
            );
            let kept = non_void(&out);
            if let Some(prev) = &previous {
                assert!(kept.is_subset(prev), "non-void set grew with lambda {lambda}");
            }
            previous = Some(kept);
        }
    }

    // 5x5 square with radius 1 keeps its inner 3x3.
    let mut v = vec![VOID_ID; 49];
    for y in 1..6 {
        for x in 1..6 {
            v[y * 7 + x] = 8;
        }
    }
    let square = SemanticMap::new(7, 7, v).unwrap();
    let policy = ErosionPolicy {
        lambda: 1.0,
        radius_mode: RadiusMode::Linear,
        radius_cap: RadiusCap::Pixels(1),
        connectivity: Connectivity::Four,
    };
    let out = erode_components(&square, &policy);
    let expect: BTreeSet<usize> = (2..5).flat_map(|y| (2..5).map(move |x| y * 7 + x)).collect();
    assert_eq!(non_void(&out), expect);
}

fn table_from_counts(counts: &[u64]) -> ClassFrequencyTable {
    let mut t = ClassFrequencyTable::new(counts.len());
    for (c, &n) in counts.iter().enumerate() {
        let mut hist = [0u64; 256];
        hist[c] = n;
        if n > 0 {
            t.push_histogram(&hist);
        }
    }
    t
}

/// Direct softmax over occurring classes, without max-subtraction.
fn oracle_rcs(counts: &[u64], temperature: f64) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let weights: Vec<f64> = counts
        .iter()
        .map(|&n| {
            if n == 0 {
                0.0
            } else {
                ((1.0 - n as f64 / total as f64) / temperature).exp()
            }
        })
        .collect();
    let z: f64 = weights.iter().sum();
    weights.iter().map(|w| w / z).collect()
}

fn rcs_suite() {
    // f = (0.9, 0.1) at T = 0.05: the rare class is exp(16) times likelier.
    let t = table_from_counts(&[900, 100]);
    let p = rcs_class_distribution(&t, 0.05, RarityFormula::ExpComplement).unwrap();
    assert!(((p[1] / p[0]) / 16f64.exp() - 1.0).abs() < 1e-12, "ratio {}", p[1] / p[0]);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut crafted: Vec<Vec<u64>> = vec![vec![900, 100], vec![1, 1, 1, 1], vec![5, 0, 3, 0, 0, 2]];
    for _ in 0..20 {
        crafted.push((0..19).map(|_| if rng.random_bool(0.2) { 0 } else { rng.random_range(1..100_000) }).collect());
    }
    for counts in &crafted {
        let t = table_from_counts(counts);
        for temperature in [0.01, 0.05, 0.1, 0.5, 1.0] {
            let got = rcs_class_distribution(&t, temperature, RarityFormula::ExpComplement).unwrap();
            let want = oracle_rcs(counts, temperature);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12, "{counts:?} T={temperature}: {g} vs {w}");
            }
        }
    }

    // 10^5 class draws with replacement track the distribution.
    let counts = [4000u64, 2500, 1500, 1000, 600, 300, 100];
    let t = table_from_counts(&counts);
    let config = RcsConfig {
        temperature: 0.5,
        seed: 3,
        ..RcsConfig::default()
    };
    let mut sampler = RcsSampler::new(&t, &config).unwrap();
    let probs = sampler.probabilities().to_vec();
    let draws = 100_000;
    let mut hits = vec![0usize; counts.len()];
    for _ in 0..draws {
        hits[sampler.draw_class()] += 1;
    }
    for (c, &n) in hits.iter().enumerate() {
        let f = n as f64 / draws as f64;
        assert!((f - probs[c]).abs() <= 0.01, "class {c}: {f} vs {}", probs[c]);
    }

    // Without replacement: duplicate-free and exactly sized.
    let mut pool = ClassFrequencyTable::new(19);
    let pool_len = 600;
    for _ in 0..pool_len {
        let mut hist = [0u64; 256];
        for _ in 0..rng.random_range(1..5) {
            hist[rng.random_range(0..19)] += rng.random_range(1..500);
        }
        pool.push_histogram(&hist);
    }
    for count in [1, 50, 300, 599, 600] {
        let config = RcsConfig {
            count,
            seed: count as u64,
            ..RcsConfig::default()
        };
        let picked = rcs_sample_subset(pool_len, &pool, &config).unwrap();
        assert_eq!(picked.len(), count);
        assert_eq!(picked.iter().collect::<HashSet<_>>().len(), count, "duplicates at count {count}");
        assert!(picked.iter().all(|&i| i < pool_len));
    }
    let too_many = RcsConfig {
        count: pool_len + 1,
        ..RcsConfig::default()
    };
    assert!(rcs_sample_subset(pool_len, &pool, &too_many).is_err());
}

fn write_map(dir: &Path, name: &str, classes: &[u8]) -> String {
    let map = SemanticMap::new(classes.len() as u32, 1, classes.to_vec()).unwrap();
    write_label_map(&dir.join(name), &map).unwrap();
    name.to_string()
}

fn subset_recipes() {
    let dir = tempfile::tempdir().unwrap();
    let t = ClassTaxonomy::urban19();
    let multi = [write_map(dir.path(), "a.png", &[0, 10, 13]), write_map(dir.path(), "b.png", &[0, 1, 2, 11])];
    let single = write_map(dir.path(), "s.png", &[10, 10, 255]);
    let header = ManifestHeader::for_taxonomy(&t);

    // 30180 multi-class frames among 45 single-class ones.
    let mut entries = Vec::new();
    let mut singles = 0;
    for i in 0..30180 {
        entries.push(ManifestEntry::new(format!("f{i:05}"), multi[i % 2].clone(), "veis"));
        if i % 671 == 0 && singles < 45 {
            entries.push(ManifestEntry::new(format!("s{singles:02}"), single.clone(), "veis"));
            singles += 1;
        }
    }
    let manifest = DatasetManifest::new(dir.path(), header.clone(), entries);
    let recipe = parse_recipe(r#"[{"op": "filter_multiclass", "min_classes": 2}, {"op": "stride", "stride": 10}]"#).unwrap();
    let filtered = run_subset(&manifest, &recipe[..1], &t).unwrap();
    assert_eq!(filtered.len(), 30180);
    let out = run_subset(&manifest, &recipe, &t).unwrap();
    assert_eq!(out.len(), 3018);
    assert!(out.entries.iter().all(|e| e.id.starts_with('f')));
    assert!(out.header.recipe.is_some(), "recipe must be recorded");
    assert_eq!(run_subset(&manifest, &[], &t).unwrap().entries, manifest.entries);

    // Condition filter, then rare-class sampling of 3000.
    let tags = ["clear", "cloudy", "overcast", "rainy", "foggy", "snowy", "night", ""];
    let adverse = ["rainy", "foggy", "snowy", "night"];
    let entries: Vec<ManifestEntry> = (0..9600)
        .map(|i| {
            let mut e = ManifestEntry::new(format!("shift{i:05}"), multi[i % 2].clone(), "shift");
            let tag = tags[i % tags.len()];
            e.condition_tag = (!tag.is_empty()).then(|| tag.to_string());
            e
        })
        .collect();
    let manifest = DatasetManifest::new(dir.path(), header, entries);
    let recipe = parse_recipe(
        r#"[{"op": "filter_condition", "allowed": ["clear", "cloudy", "overcast"]},
            {"op": "rcs", "count": 3000, "temperature": 0.05, "seed": 1}]"#,
    )
    .unwrap();
    let kept = run_subset(&manifest, &recipe[..1], &t).unwrap();
    assert_eq!(kept.len(), 3600);
    for e in &kept.entries {
        let tag = e.condition_tag.as_deref().expect("untagged entries are dropped");
        assert!(!adverse.contains(&tag), "adverse entry {} kept", e.id);
    }
    let out = run_subset(&manifest, &recipe, &t).unwrap();
    assert_eq!(out.len(), 3000);
    assert_eq!(out.entries.iter().map(|e| &e.id).collect::<HashSet<_>>().len(), 3000);
    assert!(out.entries.iter().all(|e| !adverse.contains(&e.condition_tag.as_deref().unwrap())));
}

fn map1(v: &[u8]) -> SemanticMap {
    SemanticMap::new(v.len() as u32, 1, v.to_vec()).unwrap()
}

fn metrics_suite() {
    let (road, wall, fence, sky, car) = (0u8, 3u8, 4u8, 10u8, 13u8);
    let eval: BTreeSet<u8> = [road, sky, car].into();

    // gt [road, road, sky, car], pred [road, sky, road, car]:
    // road tp 1 fp 1 fn 1 -> 1/3; sky tp 0 fp 1 fn 1 -> 0; car 1 -> mIoU 4/9.
    let mut cm = ConfusionMatrix::new(19);
    cm.accumulate(&map1(&[road, sky, road, car]), &map1(&[road, road, sky, car])).unwrap();
    let r = cm.iou_report(&eval).unwrap();
    assert!((r.iou(road).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.iou(sky), Some(0.0));
    assert_eq!(r.iou(car), Some(1.0));
    assert!((r.miou - 4.0 / 9.0).abs() < 1e-15);
    assert_eq!(r.iou(wall), None);

    // Void ground truth is ignored; a void prediction is a false negative.
    // gt [road, void, car, car], pred [road, road, void, car]:
    // road 1/1, car tp 1 fn 1 -> 1/2, mIoU 3/4.
    let mut cm = ConfusionMatrix::new(19);
    cm.accumulate(&map1(&[road, road, VOID_ID, car]), &map1(&[road, VOID_ID, car, car])).unwrap();
    let r = cm.iou_report(&[road, car].into()).unwrap();
    assert_eq!(r.iou(road), Some(1.0));
    assert_eq!(r.iou(car), Some(0.5));
    assert_eq!(r.miou, 0.75);

    // Wall and fence outside the evaluated set: "-" columns and a mean over
    // 17 classes. Every class has one correct pixel, except the wall pixel
    // predicted as road, which costs road a false positive (IoU 1/2).
    let t = ClassTaxonomy::urban19();
    let gt: Vec<u8> = (0..19).collect();
    let mut pred = gt.clone();
    pred[wall as usize] = road;
    let mut cm = ConfusionMatrix::new(19);
    cm.accumulate(&map1(&pred), &map1(&gt)).unwrap();
    let seventeen: BTreeSet<u8> = (0..19).filter(|&c| c != wall && c != fence).collect();
    let r = cm.iou_report(&seventeen).unwrap();
    assert!((r.miou - 16.5 / 17.0).abs() < 1e-15, "mIoU {}", r.miou);
    let table = r.render_table(&t, "VEIS");
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows[0][..4], ["Method", "mIoU", "Rd", "Sdwk"]);
    let col = |name: &str| rows[0].iter().position(|h| *h == name).unwrap();
    assert_eq!(rows[1][col("Wall")], "-");
    assert_eq!(rows[1][col("Fnc")], "-");
    assert_eq!(rows[1][col("Rd")], "50.0");
    assert_eq!(rows[1][col("mIoU")], format!("{:.1}", 16.5 / 17.0 * 100.0));
    assert_eq!(rows[1].iter().filter(|c| **c == "-").count(), 2);

    // Accumulation order does not matter.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs: Vec<(SemanticMap, SemanticMap)> = (0..12)
        .map(|_| {
            let g = random_map(&mut rng, 8, 8, 19, 0.1);
            let p = perturb(&mut rng, &g, 0.4, 19);
            (p, g)
        })
        .collect();
    let mut forward = ConfusionMatrix::new(19);
    for (p, g) in &pairs {
        forward.accumulate(p, g).unwrap();
    }
    let mut backward = ConfusionMatrix::new(19);
    for (p, g) in pairs.iter().rev() {
        backward.accumulate(p, g).unwrap();
    }
    let (mut left, mut right) = (ConfusionMatrix::new(19), ConfusionMatrix::new(19));
    for (i, (p, g)) in pairs.iter().enumerate() {
        if i % 3 == 0 { &mut left } else { &mut right }.accumulate(p, g).unwrap();
    }
    right.merge(&left).unwrap();
    assert_eq!(forward, backward);
    assert_eq!(forward, right);

    // Three entries on disk, aligned by id although listed in another order.
    // Per class: road tp 3 fp 1 fn 0 -> 3/4; sky tp 2 fp 0 fn 1 -> 2/3;
    // car tp 1 fp 0 fn 1 (void prediction) -> 1/2.
    let dir = tempfile::tempdir().unwrap();
    let fixtures = [
        ("e1", [road, road, sky], [road, road, sky]),
        ("e2", [sky, sky, car], [sky, road, car]),
        ("e3", [road, car, VOID_ID], [road, VOID_ID, sky]),
    ];
    let header = ManifestHeader::for_taxonomy(&t);
    let mut gt_entries = Vec::new();
    let mut pred_entries = Vec::new();
    for (id, g, p) in fixtures {
        gt_entries.push(ManifestEntry::new(id, write_map(dir.path(), &format!("{id}.gt.png"), &g), "toy"));
        pred_entries.push(ManifestEntry::new(id, write_map(dir.path(), &format!("{id}.pred.png"), &p), "toy"));
    }
    pred_entries.reverse();
    let gt_m = DatasetManifest::new(dir.path(), header.clone(), gt_entries);
    let pred_m = DatasetManifest::new(dir.path(), header, pred_entries);
    let r = run_evaluate(&pred_m, &gt_m, &eval, &t).unwrap();
    assert_eq!(r.iou(road), Some(0.75));
    assert!((r.iou(sky).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.iou(car), Some(0.5));
    assert!((r.miou - (0.75 + 2.0 / 3.0 + 0.5) / 3.0).abs() < 1e-15);
    let identical = run_evaluate(&gt_m, &gt_m, &eval, &t).unwrap();
    assert_eq!(identical.miou, 1.0);
}

fn crop_rule() {
    assert_eq!(crop_window(1914, 1052, 2, 1).unwrap(), (0, 48, 1914, 957));
    let v: Vec<u8> = (0..1914u32 * 1052).map(|i| ((i / 1914) % 19) as u8).collect();
    let gta = SemanticMap::new(1914, 1052, v).unwrap();
    let cropped = center_crop_ratio(&gta, 2, 1).unwrap();
    assert_eq!(cropped.dimensions(), (1914, 957));
    assert_eq!(cropped.get(0, 0), gta.get(0, 48));
    assert_eq!(cropped.get(1913, 956), gta.get(1913, 48 + 956));
    assert_eq!(center_crop_ratio(&cropped, 2, 1).unwrap(), cropped);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (w, h) = (rng.random_range(2..80), rng.random_range(1..80));
        let m = random_map(&mut rng, w, h, 19, 0.1);
        let once = center_crop_ratio(&m, 2, 1).unwrap();
        assert_eq!(once.width(), 2 * once.height());
        assert_eq!(center_crop_ratio(&once, 2, 1).unwrap(), once, "idempotence at {w}x{h}");
        let s = rng.random_range(1..40);
        let exact = random_map(&mut rng, 2 * s, s, 19, 0.1);
        assert_eq!(center_crop_ratio(&exact, 2, 1).unwrap(), exact);
    }
}

// ---------------------------------------------------------------------------
// End-to-end

/// Generator that stands in for a killed process: after `limit` calls in
/// total, it and every other lane's generator panic.
struct Doomed {
    inner: Box<dyn Generator>,
    calls: Arc<AtomicUsize>,
    dead: Arc<AtomicBool>,
    limit: usize,
}

impl Generator for Doomed {
    fn generate(&mut self, label: &str, seed: u64, n: u32, out_prefix: &str) -> BridgeResult<Vec<String>> {
        if self.dead.load(Ordering::SeqCst) || self.calls.fetch_add(1, Ordering::SeqCst) >= self.limit {
            self.dead.store(true, Ordering::SeqCst);
            panic!("simulated kill");
        }
        self.inner.generate(label, seed, n, out_prefix)
    }
}

fn end_to_end_pipeline() {
    let data = tempfile::tempdir().unwrap();
    let manifest_path = common::write_dataset(data.path(), 50, 128, 64, 1234);
    let t = ClassTaxonomy::urban19();
    let out = |name: &str| data.path().join(name);
    let plain = |_: usize, dir: &Path| -> segcurate::Result<Lane> { Ok(common::mock_lane(dir, BTreeMap::new())) };

    // (a) no corruption: every candidate is perfect, 3 pairs per entry.
    let config = common::mock_config(&manifest_path, &out("w1"));
    assert_eq!((config.candidates, config.select, config.tau), (10, 3, 0.7));
    let a = run_curation_with(&config, &t, &plain).unwrap();
    assert!(a.summary.failed.is_empty(), "{:?}", a.summary.failed);
    assert_eq!(a.manifest.len(), 150);
    assert_eq!(a.summary.mean_mcoc_selected, Some(1.0));
    assert!(a.records.iter().flat_map(|r| &r.candidates).all(|c| c.score == 1.0));
    let audit = std::fs::read_to_string(a.run_dir.join(AUDIT_FILE)).unwrap();
    assert_eq!(audit.lines().count(), 500, "every candidate is audited");

    // (b) one severely corrupted candidate per entry, at a varying index.
    let source = DatasetManifest::load(&manifest_path).unwrap();
    let mut bad: BTreeMap<String, u32> = BTreeMap::new();
    let mut overrides = BTreeMap::new();
    for (i, e) in source.entries.iter().enumerate() {
        let idx = (i % 10) as u32;
        bad.insert(e.id.clone(), idx);
        overrides.insert(
            candidate_seed(config.seed, &e.id, idx),
            Corruption {
                probability: 1.0,
                style: CorruptionStyle::Scramble,
            },
        );
    }
    let corrupted = move |_: usize, dir: &Path| -> segcurate::Result<Lane> { Ok(common::mock_lane(dir, overrides.clone())) };
    let b_config = PipelineConfig {
        out: out("corrupt"),
        ..config.clone()
    };
    let b = run_curation_with(&b_config, &t, &corrupted).unwrap();
    assert_eq!(b.records.len(), 50);
    let mut selected_bad = 0;
    for rec in &b.records {
        let idx = bad[&rec.source_id];
        let cand = &rec.candidates[idx as usize];
        assert!(cand.score < 1.0, "{}: corrupted candidate scored {}", rec.source_id, cand.score);
        assert!(rec.candidates.iter().filter(|c| c.candidate != idx).all(|c| c.score == 1.0));
        selected_bad += usize::from(rec.selected.contains(&idx));
    }
    assert_eq!(selected_bad, 0, "corrupted candidate selected in {selected_bad} of 50 entries");

    // (c) byte-identical reruns at W = 1, and the same output at W = 4.
    let reference = common::snapshot(&a.run_dir);
    let again = run_curation_with(&PipelineConfig { out: out("w1-again"), ..config.clone() }, &t, &plain).unwrap();
    assert_eq!(again.resumed, 0);
    assert_eq!(common::first_difference(&reference, &common::snapshot(&again.run_dir)), None);
    let w4 = run_curation_with(&PipelineConfig { out: out("w4"), workers: 4, ..config.clone() }, &t, &plain).unwrap();
    assert_eq!(w4.run_dir.file_name(), a.run_dir.file_name(), "run id ignores W");
    assert_eq!(common::first_difference(&reference, &common::snapshot(&w4.run_dir)), None);

    // (d) kill a W = 2 run part way, then resume it.
    let resumable = PipelineConfig {
        out: out("killed"),
        workers: 2,
        ..config.clone()
    };
    let calls = Arc::new(AtomicUsize::new(0));
    let dead = Arc::new(AtomicBool::new(false));
    let doomed = {
        let (calls, dead) = (calls.clone(), dead.clone());
        move |_: usize, dir: &Path| -> segcurate::Result<Lane> {
            let mut lane = common::mock_lane(dir, BTreeMap::new());
            lane.generator = Box::new(Doomed {
                inner: lane.generator,
                calls: calls.clone(),
                dead: dead.clone(),
                limit: 237,
            });
            Ok(lane)
        }
    };
    let quiet = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let killed = panic::catch_unwind(AssertUnwindSafe(|| run_curation_with(&resumable, &t, &doomed)));
    panic::set_hook(quiet);
    assert!(killed.is_err(), "the run should have been killed");
    let run_dir = resumable.run_dir();
    assert!(!run_dir.join("manifest.jsonl").exists());
    let finished = std::fs::read_dir(run_dir.join("records")).unwrap().count();
    assert!(finished > 0 && finished < 50, "{finished} records before the kill");

    let resumed = run_curation_with(&resumable, &t, &plain).unwrap();
    assert_eq!(resumed.resumed, finished);
    assert_eq!(common::first_difference(&reference, &common::snapshot(&resumed.run_dir)), None);
}
