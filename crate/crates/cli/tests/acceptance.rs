//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fail.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use xray_core::bench::run_bench;
use xray_core::datasetio::{generate_dataset, read_shard, regenerate_sample, DatasetConfig};
use xray_core::heapgen::sample_heap;
use xray_core::occupancy::{distribution_metrics, occupancy_distribution, CandidateGrid, OccupancyDistribution};
use xray_core::search::{rollout, PolicyKind, SearchConfig};
use xray_core::{sensor, Dims};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

/// Optimized distribution equals the naive triple loop on 50 random
/// 64x48 scenes with 5 objects, in under 60 s.
fn oracle_equivalence() -> Outcome {
    let dims = Dims::new(64, 48);
    let grid = CandidateGrid::covering(dims, 1, 16);
    let start = Instant::now();
    let mismatches: Vec<u64> = (0..50u64)
        .filter(|&seed| {
            let scene = common::random_scene(seed, dims, 4, 16);
            let fast = occupancy_distribution(&scene, &grid).unwrap();
            let naive = common::naive_distribution(&scene, &grid, 0.9);
            let slow = OccupancyDistribution::from_values(dims, naive.values.clone()).unwrap();
            let m = distribution_metrics(&fast, &slow).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            !(m.balanced_accuracy == 1.0
                && m.iou == 1.0
                && fast.matched_poses() == naive.matched.as_slice()
                && bits(fast.values()) == bits(&naive.values))
        })
        .collect();
    let t = start.elapsed();
    outcome(
        mismatches.is_empty() && t < Duration::from_secs(60),
        format!("{}/50 scenes identical (mismatched seeds {mismatches:?}), {} (< 60 s)", 50 - mismatches.len(), secs(t)),
    )
}

/// Observed target modal mask lies inside the support whenever the target is
/// fully visible and the true pose is injected.
fn collapse() -> Outcome {
    let cfg = SearchConfig::default();
    let mut checked = 0;
    let mut held = 0;
    let mut seed = 0;
    while checked < 100 {
        let scene = sample_heap(seed, &cfg.heap).unwrap();
        seed += 1;
        let t = scene.target().unwrap();
        let observed = sensor::modal_mask(&scene, t.id).unwrap();
        if observed != sensor::amodal_mask(&scene, t.id).unwrap() {
            continue;
        }
        checked += 1;
        let d = occupancy_distribution(&scene, &cfg.grid).unwrap();
        held += observed.is_subset_of(&d.support()).unwrap() as u32;
    }
    outcome(held == 100, format!("{held}/100 scenes (seeds 0..{seed})"))
}

/// Support never grows over removal steps taken while the target is hidden.
fn occlusion_monotonicity() -> Outcome {
    let cfg = SearchConfig::default();
    let mut prefixes = 0;
    let mut removals = 0;
    let mut violations = Vec::new();
    let mut seed = 0;
    while prefixes < 100 {
        let r = rollout(seed, PolicyKind::XRay, &cfg).unwrap();
        seed += 1;
        if r.steps.first().is_none_or(|s| s.target_visible_before > 0) {
            continue;
        }
        prefixes += 1;
        for s in r.steps.iter().take_while(|s| s.target_visible_before == 0) {
            if s.graspable {
                removals += 1;
                let (b, a) = (s.support_before.unwrap(), s.support_after.unwrap());
                if a > b {
                    violations.push((r.seed, s.k, b, a));
                }
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!("{prefixes} prefixes, {removals} removals, {} violations {violations:?}", violations.len()),
    )
}

fn policy_ordering() -> Outcome {
    let cfg = SearchConfig::default();
    let seeds: Vec<u64> = (0..200).collect();
    let start = Instant::now();
    let report = run_bench(&PolicyKind::ALL, &seeds, &cfg).unwrap();
    let t = start.elapsed();
    let s = |p| report.summary(p).unwrap().clone();
    let (x, l, r) = (s(PolicyKind::XRay), s(PolicyKind::Largest), s(PolicyKind::Random));
    let med = |q: Option<[f64; 3]>| q.map_or(f64::INFINITY, |q| q[1]);
    let pass = x.success_rate > l.success_rate
        && l.success_rate > r.success_rate
        && x.success_rate - l.success_rate >= 0.05
        && med(x.quartiles) <= med(l.quartiles)
        && t <= Duration::from_secs(15 * 60);
    outcome(
        pass,
        format!(
            "success xray {:.1}% > largest {:.1}% > random {:.1}%, margin {:.1} pts (>= 5), median {} <= {}, {}",
            100.0 * x.success_rate,
            100.0 * l.success_rate,
            100.0 * r.success_rate,
            100.0 * (x.success_rate - l.success_rate),
            med(x.quartiles),
            med(l.quartiles),
            secs(t)
        ),
    )
}

fn median_time(workers: usize, scene: &xray_core::Scene, grid: &CandidateGrid) -> Duration {
    let p = pool(workers);
    let mut times: Vec<Duration> = (0..5)
        .map(|_| {
            let start = Instant::now();
            p.install(|| occupancy_distribution(scene, grid).unwrap());
            start.elapsed()
        })
        .collect();
    times.sort();
    times[2]
}

fn performance() -> Outcome {
    let cfg = SearchConfig::default();
    let scene = sample_heap(0, &cfg.heap).unwrap();
    assert_eq!(cfg.grid.grid_len(), 64 * 48 * 16);
    let one = median_time(1, &scene, &cfg.grid);
    let eight = median_time(8, &scene, &cfg.grid);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        one <= Duration::from_millis(1500) && eight <= Duration::from_millis(300),
        format!(
            "512x384, 64x48x16 grid: 1 worker {} (<= 1.5 s), 8 workers {} (<= 0.3 s), {cores} core(s) available",
            secs(one),
            secs(eight)
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn xray(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_xray")).args(args).output().unwrap();
    assert!(out.status.success(), "xray {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Dataset shards, rollout logs and bench CSVs are byte-identical across
/// runs and worker counts.
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut failed = Vec::new();
    let runs = [("a", "1"), ("b", "8"), ("c", "8")];

    let mut datasets = Vec::new();
    let mut benches = Vec::new();
    let mut rollouts = Vec::new();
    for (tag, threads) in runs {
        let ds = tmp.path().join(format!("ds_{tag}"));
        xray(&["--threads", threads, "gen-dataset", "--seeds", "0..11", "--shard-size", "5", "--out", ds.to_str().unwrap()]);
        datasets.push(dir_bytes(&ds));
        let bench = tmp.path().join(format!("bench_{tag}"));
        xray(&["--threads", threads, "bench", "--heaps", "12", "--seed", "100", "--out", bench.to_str().unwrap()]);
        benches.push(dir_bytes(&bench));
        let mut log = Vec::new();
        for policy in ["xray", "largest", "random"] {
            log.extend(xray(&["--threads", threads, "rollout", "--seed", "7", "--policy", policy, "--track-support"]));
        }
        rollouts.push(log);
    }
    for (name, outputs) in [("dataset", &datasets), ("bench", &benches)] {
        if outputs[0].is_empty() || outputs.iter().any(|o| o != &outputs[0]) {
            failed.push(name);
        }
    }
    if rollouts.iter().any(|o| o != &rollouts[0]) {
        failed.push("rollout");
    }
    outcome(
        failed.is_empty(),
        format!(
            "gen-dataset ({} files), bench ({} files), rollout x3 policies; runs --threads 1/8/8; differing: {failed:?}",
            datasets[0].len(),
            benches[0].len()
        ),
    )
}

/// 1,000 samples at 256x192 read back and regenerate bit-identically within
/// 10 minutes.
fn dataset_integrity() -> Outcome {
    let cfg = DatasetConfig::default();
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let manifest = generate_dataset(0..1000, &cfg, tmp.path()).unwrap();
    let gen_time = start.elapsed();
    let records: Vec<_> = manifest
        .shards
        .iter()
        .flat_map(|e| read_shard(&manifest.shard_path(tmp.path(), e)).unwrap())
        .collect();
    let bad: Vec<u64> = records
        .par_iter()
        .filter(|r| {
            let dims = r.dims();
            !(dims == Dims::new(256, 192) && r.bitwise_eq(&regenerate_sample(&r.meta, &cfg).unwrap()))
        })
        .map(|r| r.meta.seed)
        .collect();
    outcome(
        records.len() == 1000 && manifest.sample_count == 1000 && bad.is_empty() && gen_time <= Duration::from_secs(600),
        format!(
            "{} records, {} mismatched, generation {} (<= 600 s), total {}",
            records.len(),
            bad.len(),
            secs(gen_time),
            secs(start.elapsed())
        ),
    )
}

fn telescoping() -> Outcome {
    let cfg = SearchConfig::default();
    let records: Vec<_> = (0..100u64).into_par_iter().map(|s| rollout(s, PolicyKind::XRay, &cfg).unwrap()).collect();
    let mut bad = Vec::new();
    for r in &records {
        let logged: Vec<_> = r.steps.iter().filter_map(|s| s.surrogate_reward).collect();
        let sum: i64 = logged.iter().sum();
        let (Some(a), Some(b)) = (r.initial_support(), r.final_support()) else {
            // A rollout whose first grasp lifts the target logs no transition.
            if !logged.is_empty() {
                bad.push(r.seed);
            }
            continue;
        };
        if sum != a as i64 - b as i64 {
            bad.push(r.seed);
        }
    }
    outcome(bad.is_empty(), format!("100 rollouts, {} mismatched {bad:?}", bad.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("collapse", collapse),
        ("full-occlusion monotonicity", occlusion_monotonicity),
        ("policy ordering", policy_ordering),
        ("performance budget", performance),
        ("determinism", determinism),
        ("dataset integrity", dataset_integrity),
        ("telescoping surrogate reward", telescoping),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failures += !o.pass as usize;
        println!("[{}] {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, k + 1, o.detail);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
