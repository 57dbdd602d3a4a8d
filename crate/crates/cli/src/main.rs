use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use xray_core::bench;
use xray_core::datasetio::{self, DatasetConfig, Manifest};
use xray_core::occupancy::CandidateGrid;
use xray_core::search::{self, PolicyKind, SearchConfig};
use xray_core::sensor;

#[derive(Parser)]
#[command(name = "xray", version, about = "Occupancy-distribution mechanical search simulator")]
struct Cli {
    /// Worker threads (default: all cores). Never changes outputs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare policies on a shared set of seeded heaps.
    Bench(BenchArgs),
    /// Run one episode and print its JSON-lines record.
    Rollout(RolloutArgs),
    /// Generate a labeled dataset.
    GenDataset(GenArgs),
    /// Summarize a dataset directory or a shard file.
    Inspect(InspectArgs),
}

#[derive(Args, Clone)]
struct SimArgs {
    /// JSON search config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Distractors per heap.
    #[arg(long, default_value_t = 14)]
    objects: u32,
    #[arg(long, default_value_t = 10)]
    horizon: u32,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    grid_stride: u32,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    rot_bins: u32,
    #[arg(long, default_value_t = 0.75)]
    tau_grasp: f64,
}

impl SimArgs {
    fn search_config(&self) -> Result<SearchConfig> {
        let mut cfg: SearchConfig = match &self.config {
            Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => SearchConfig::default(),
        };
        cfg.heap.n_min = self.objects;
        cfg.heap.n_max = self.objects;
        cfg.horizon = self.horizon;
        cfg.tau_grasp = self.tau_grasp;
        cfg.heap.n_rot = self.rot_bins;
        cfg.grid = CandidateGrid {
            include_true_pose: cfg.grid.include_true_pose,
            ..CandidateGrid::covering(cfg.heap.dims(), self.grid_stride, self.rot_bins)
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Number of heaps; seeds are `seed..seed + heaps`.
    #[arg(long, default_value_t = 200)]
    heaps: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated policies, or `all`.
    #[arg(long, default_value = "all")]
    policy: String,
    /// Directory for report.txt and the CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "xray")]
    policy: String,
    /// Also compute supports for baseline policies.
    #[arg(long)]
    track_support: bool,
    /// Write per-step PNG dumps of depth, masks and distribution here.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Append the JSON line here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Seeds `a..b` (both ends included) or a single seed.
    #[arg(long)]
    seeds: String,
    /// JSON dataset config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    grid_stride: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    rot_bins: Option<u32>,
    #[arg(long)]
    shard_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Dataset directory (with manifest.json) or a `.xrd` shard.
    path: PathBuf,
}

fn parse_policies(s: &str) -> Result<Vec<PolicyKind>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(PolicyKind::ALL.to_vec());
    }
    s.split(',')
        .map(|p| p.trim().parse::<PolicyKind>().map_err(Into::into))
        .collect()
}

fn parse_seeds(s: &str) -> Result<Range<u64>> {
    let num = |x: &str| x.trim().parse::<u64>().with_context(|| format!("bad seed {x:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if b < a {
            bail!("empty seed range {s:?}");
        }
        Ok(a..b + 1)
    } else {
        let a = num(s)?;
        Ok(a..a + 1)
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XRAY_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match cli.command {
        Command::Bench(a) => cmd_bench(a),
        Command::Rollout(a) => cmd_rollout(a),
        Command::GenDataset(a) => cmd_gen_dataset(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let cfg = args.sim.search_config()?;
    let policies = parse_policies(&args.policy)?;
    let seeds: Vec<u64> = (args.seed..args.seed + args.heaps).collect();
    log::info!("bench: {} heaps x {} policies", seeds.len(), policies.len());
    let report = bench::run_bench(&policies, &seeds, &cfg)?;
    let table = report.table();
    print!("{table}");
    if let Some(out) = args.out {
        fs::create_dir_all(&out)?;
        fs::write(out.join("report.txt"), &table)?;
        fs::write(out.join("summary.csv"), report.summary_csv())?;
        fs::write(out.join("rollouts.csv"), report.rollouts_csv())?;
        fs::write(out.join("histogram.csv"), report.histogram_csv())?;
        let mut lines = String::new();
        for r in &report.records {
            lines.push_str(&r.to_json_line());
            lines.push('\n');
        }
        fs::write(out.join("rollouts.jsonl"), lines)?;
    }
    Ok(())
}

fn dump_step(
    dir: &Path,
    k: u32,
    scene: &xray_core::Scene,
    dist: Option<&xray_core::OccupancyDistribution>,
    camera: sensor::Camera,
) -> std::io::Result<()> {
    let obs = sensor::observe(scene, camera).map_err(std::io::Error::other)?;
    sensor::write_depth_png(&obs.depth, &dir.join(format!("step_{k:02}_depth.png")))?;
    sensor::write_mask_png(&obs.target_modal, &dir.join(format!("step_{k:02}_target_modal.png")))?;
    // Instance label image: each visible instance at its own gray level.
    let owner = sensor::visibility_map(scene);
    let n = scene.len().max(1) as f32;
    let labels: Vec<f32> = owner
        .iter()
        .map(|o| o.map_or(0.0, |k| (k as f32 + 1.0) / n))
        .collect();
    sensor::write_heatmap_png(&labels, scene.dims(), &dir.join(format!("step_{k:02}_masks.png")))?;
    if let Some(d) = dist {
        sensor::write_heatmap_png(d.values(), d.dims(), &dir.join(format!("step_{k:02}_distribution.png")))?;
        datasetio::write_f32_raster(d.values(), &dir.join(format!("step_{k:02}_distribution.f32")))?;
    }
    Ok(())
}

fn cmd_rollout(args: RolloutArgs) -> Result<()> {
    let mut cfg = args.sim.search_config()?;
    cfg.track_support |= args.track_support;
    let policy: PolicyKind = args.policy.parse()?;
    let scene = xray_core::heapgen::sample_heap(args.seed, &cfg.heap)?;
    let mut dump_err = None;
    if let Some(dir) = &args.dump {
        fs::create_dir_all(dir)?;
    }
    let record = search::run_episode_with(scene, args.seed, policy, &cfg, |k, s, d| {
        if let Some(dir) = &args.dump {
            if let Err(e) = dump_step(dir, k, s, d, cfg.camera) {
                dump_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = dump_err {
        return Err(e).context("writing step dumps");
    }
    let line = record.to_json_line();
    match args.out {
        Some(p) => {
            let mut f = fs::OpenOptions::new().create(true).append(true).open(&p)?;
            writeln!(f, "{line}")?;
        }
        None => println!("{line}"),
    }
    Ok(())
}

fn cmd_gen_dataset(args: GenArgs) -> Result<()> {
    let seeds = parse_seeds(&args.seeds)?;
    let mut cfg: DatasetConfig = match &args.config {
        Some(p) => serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => DatasetConfig::default(),
    };
    if args.grid_stride.is_some() || args.rot_bins.is_some() {
        let stride = args.grid_stride.unwrap_or(cfg.grid.stride);
        let bins = args.rot_bins.unwrap_or(cfg.grid.n_rot);
        cfg.grid = CandidateGrid {
            include_true_pose: cfg.grid.include_true_pose,
            ..CandidateGrid::covering(cfg.heap.dims(), stride, bins)
        };
    }
    if let Some(n) = args.shard_size {
        cfg.shard_size = n;
    }
    let manifest = datasetio::generate_dataset(seeds, &cfg, &args.out)?;
    println!(
        "wrote {} samples in {} shards to {}",
        manifest.sample_count,
        manifest.shards.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let path = &args.path;
    if path.is_dir() {
        let manifest = Manifest::read(path)?;
        println!("format version: {}", manifest.format_version);
        println!("config hash:    {}", manifest.config_hash);
        println!(
            "grid:           stride {} x {}x{} x {} rotations",
            manifest.config.grid.stride, manifest.config.grid.n_tx, manifest.config.grid.n_ty, manifest.config.grid.n_rot
        );
        println!(
            "split:          train seeds {:?} prototypes {:?}; test seeds {:?} prototypes {:?}",
            manifest.split.train_seeds,
            manifest.split.train_prototypes,
            manifest.split.test_seeds,
            manifest.split.test_prototypes
        );
        let mut found = 0;
        for entry in &manifest.shards {
            let records = datasetio::read_shard(&manifest.shard_path(path, entry))
                .with_context(|| format!("reading {}", entry.file))?;
            if records.len() != entry.count {
                bail!("{}: {} samples, manifest says {}", entry.file, records.len(), entry.count);
            }
            found += records.len();
        }
        println!("shards:         {}", manifest.shards.len());
        println!("samples:        {found} (manifest {})", manifest.sample_count);
        if !manifest.complete {
            println!("incomplete:     {} failed shard(s)", manifest.failures.len());
        }
        if found != manifest.sample_count {
            bail!("sample count mismatch");
        }
    } else {
        let records = datasetio::read_shard(path)?;
        let dims = records.first().map(|r| r.dims());
        println!("samples: {}", records.len());
        if let Some(d) = dims {
            println!("raster:  {}x{}", d.width, d.height);
        }
        for r in &records {
            let support = r.distribution.iter().filter(|&&v| v > 0.0).count();
            println!(
                "seed {:>6} {:<5} objects {:>2} target_visible {:>5} support {:>6} matched {:>5}",
                r.meta.seed,
                format!("{:?}", r.meta.split).to_lowercase(),
                r.meta.object_count,
                r.target_modal.count(),
                support,
                r.meta.matched_poses
            );
        }
    }
    Ok(())
}
