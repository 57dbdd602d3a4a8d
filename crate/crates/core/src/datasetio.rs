//! On-disk dataset of observations labeled with occupancy distributions.
//!
//! A shard file (`.xrd`) is little-endian throughout:
//!
//! ```text
//! magic    [u8; 8]   "XRAYDS1\0"
//! version  u32       FORMAT_VERSION
//! width    u32
//! height   u32
//! flags    u32       bit 0: depth stands for two identical channels
//! count    u32       samples in this shard
//! count x {
//!   depth        f32[width * height]   meters, row-major
//!   distribution f32[width * height]   row-major
//!   target_modal u8[width * height]    0 or 1, row-major
//! }
//! crc32    u32       CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Per-sample metadata lives in a JSON sidecar with the same stem. A dataset
//! directory holds `shards/NNNN.xrd`, `shards/NNNN.json` and `manifest.json`.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::heapgen::{self, HeapConfig};
use crate::occupancy::{self, CandidateGrid};
use crate::raster::{DepthImage, Dims, Mask};
use crate::scene::{Footprint, Pose};
use crate::sensor::{self, Camera};

pub const MAGIC: &[u8; 8] = b"XRAYDS1\0";
pub const FORMAT_VERSION: u32 = 1;
pub const FLAG_TWO_CHANNEL_DEPTH: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 5;
const MANIFEST_FILE: &str = "manifest.json";
const SHARD_DIR: &str = "shards";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("file truncated: {len} bytes, expected {expected}")]
    Truncated { len: usize, expected: usize },
    #[error("{0} trailing bytes after the checksum")]
    TrailingBytes(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{} shard(s) failed; partial manifest at {}", failures.len(), manifest.display())]
    PartialFailure {
        manifest: PathBuf,
        failures: Vec<ShardFailure>,
    },
}

impl From<serde_json::Error> for DatasetError {
    fn from(e: serde_json::Error) -> Self {
        DatasetError::Metadata(e.to_string())
    }
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub config_hash: String,
    pub split: Split,
    pub target_pose: Pose,
    pub object_count: usize,
    pub matched_poses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub target_modal: Mask,
    pub depth: DepthImage,
    pub distribution: Vec<f32>,
    pub meta: SampleMeta,
}

impl SampleRecord {
    pub fn dims(&self) -> Dims {
        self.target_modal.dims()
    }

    /// Equality on raw float bits rather than float comparison.
    pub fn bitwise_eq(&self, other: &SampleRecord) -> bool {
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.target_modal == other.target_modal
            && self.depth.dims() == other.depth.dims()
            && bits(self.depth.as_slice()) == bits(other.depth.as_slice())
            && bits(&self.distribution) == bits(&other.distribution)
            && self.meta == other.meta
    }

    fn check(&self) -> Result<()> {
        let dims = self.dims();
        if self.depth.dims() != dims || self.distribution.len() != dims.len() {
            return Err(DatasetError::Metadata("sample rasters differ in size".into()));
        }
        Ok(())
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Encodes samples that share one raster size.
pub fn encode_shard(records: &[SampleRecord]) -> Result<Vec<u8>> {
    let dims = records.first().map_or(Dims::new(0, 0), |r| r.dims());
    for r in records {
        r.check()?;
        if r.dims() != dims {
            return Err(DatasetError::Metadata("shard samples differ in size".into()));
        }
    }
    let n = dims.len();
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * 9 * n + 4);
    out.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        dims.width as u32,
        dims.height as u32,
        FLAG_TWO_CHANNEL_DEPTH,
        records.len() as u32,
    ] {
        out.extend(v.to_le_bytes());
    }
    for r in records {
        for &v in r.depth.as_slice() {
            out.extend(v.to_le_bytes());
        }
        for &v in &r.distribution {
            out.extend(v.to_le_bytes());
        }
        out.extend(r.target_modal.to_u8());
    }
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

/// Decodes shard bytes against their sidecar metadata.
pub fn decode_shard(bytes: &[u8], metas: Vec<SampleMeta>) -> Result<Vec<SampleRecord>> {
    if bytes.len() < MAGIC.len() {
        return Err(DatasetError::Truncated {
            len: bytes.len(),
            expected: HEADER_LEN + 4,
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(DatasetError::Truncated {
            len: bytes.len(),
            expected: HEADER_LEN + 4,
        });
    }
    let version = u32_at(bytes, 8);
    if version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch { found: version });
    }
    let dims = Dims::new(u32_at(bytes, 12) as usize, u32_at(bytes, 16) as usize);
    let count = u32_at(bytes, 24) as usize;
    let n = dims.len();
    let expected = HEADER_LEN + count * 9 * n + 4;
    if bytes.len() < expected {
        return Err(DatasetError::Truncated {
            len: bytes.len(),
            expected,
        });
    }
    if bytes.len() > expected {
        return Err(DatasetError::TrailingBytes(bytes.len() - expected));
    }
    let stored = u32_at(bytes, expected - 4);
    let computed = crc32fast::hash(&bytes[..expected - 4]);
    if stored != computed {
        return Err(DatasetError::ChecksumMismatch { stored, computed });
    }
    if metas.len() != count {
        return Err(DatasetError::Metadata(format!(
            "sidecar lists {} samples, shard holds {count}",
            metas.len()
        )));
    }
    let mut at = HEADER_LEN;
    let mut out = Vec::with_capacity(count);
    for meta in metas {
        let depth = DepthImage::from_vec(dims, f32s(&bytes[at..at + 4 * n]))?;
        at += 4 * n;
        let distribution = f32s(&bytes[at..at + 4 * n]);
        at += 4 * n;
        let mut modal = Vec::with_capacity(n);
        for &b in &bytes[at..at + n] {
            match b {
                0 => modal.push(false),
                1 => modal.push(true),
                other => {
                    return Err(DatasetError::Metadata(format!("mask byte {other} is not 0 or 1")))
                }
            }
        }
        at += n;
        out.push(SampleRecord {
            target_modal: Mask::from_vec(dims, modal)?,
            depth,
            distribution,
            meta,
        });
    }
    Ok(out)
}

/// Writes a shard and its `.json` sidecar.
pub fn write_shard(records: &[SampleRecord], path: &Path) -> Result<()> {
    let bytes = encode_shard(records)?;
    let metas: Vec<&SampleMeta> = records.iter().map(|r| &r.meta).collect();
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&metas)?)?;
    Ok(())
}

pub fn read_shard(path: &Path) -> Result<Vec<SampleRecord>> {
    let bytes = fs::read(path)?;
    let metas: Vec<SampleMeta> = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    decode_shard(&bytes, metas)
}

pub fn write_sample(record: &SampleRecord, path: &Path) -> Result<()> {
    write_shard(std::slice::from_ref(record), path)
}

pub fn read_sample(path: &Path) -> Result<SampleRecord> {
    let mut records = read_shard(path)?;
    if records.len() != 1 {
        return Err(DatasetError::Metadata(format!(
            "expected one sample, found {}",
            records.len()
        )));
    }
    Ok(records.remove(0))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub heap: HeapConfig,
    pub grid: CandidateGrid,
    pub camera: Camera,
    pub shard_size: usize,
    /// Fraction of seeds and of library prototypes assigned to training.
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let heap = HeapConfig {
            width: 256,
            height: 192,
            pixel_size: 0.002,
            placement_sigma: 20.0,
            ..HeapConfig::default()
        };
        let grid = CandidateGrid {
            include_true_pose: false,
            ..CandidateGrid::covering(heap.dims(), 4, 16)
        };
        Self {
            heap,
            grid,
            camera: Camera::default(),
            shard_size: 100,
            train_fraction: 0.8,
        }
    }
}

impl DatasetConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(json)[..8])
    }

    fn validate(&self) -> Result<()> {
        self.heap.validate()?;
        self.grid.validate()?;
        if self.shard_size == 0 {
            return Err(Error::InvalidConfig("shard_size must be >= 1".into()).into());
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::InvalidConfig("train_fraction must be in [0, 1]".into()).into());
        }
        let (train, test) = self.prototype_split();
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidConfig("both splits need library prototypes".into()).into());
        }
        Ok(())
    }

    fn prototype_split(&self) -> (Range<usize>, Range<usize>) {
        let n = self.heap.library.size;
        let k = ((n as f64 * self.train_fraction).round() as usize).min(n);
        (0..k, k..n)
    }

    fn heap_for(&self, split: Split) -> HeapConfig {
        let (train, test) = self.prototype_split();
        let r = match split {
            Split::Train => train,
            Split::Test => test,
        };
        HeapConfig {
            prototype_range: Some([r.start, r.end]),
            ..self.heap.clone()
        }
    }
}

/// Generates the labeled sample for one seed.
pub fn make_sample(
    seed: u64,
    split: Split,
    config: &DatasetConfig,
    library: &[Arc<Footprint>],
) -> Result<SampleRecord> {
    let scene = heapgen::sample_heap_with_library(seed, &config.heap_for(split), library)?;
    let obs = sensor::observe(&scene, config.camera)?;
    let dist = occupancy::occupancy_distribution(&scene, &config.grid)?;
    let target = scene.target().ok_or(Error::NoTarget)?;
    Ok(SampleRecord {
        target_modal: obs.target_modal,
        depth: obs.depth,
        distribution: dist.values().to_vec(),
        meta: SampleMeta {
            seed,
            config_hash: config.hash(),
            split,
            target_pose: target.pose,
            object_count: scene.len(),
            matched_poses: dist.matched_poses().len(),
        },
    })
}

/// Rebuilds a stored sample from its seed, checking the config hash.
pub fn regenerate_sample(meta: &SampleMeta, config: &DatasetConfig) -> Result<SampleRecord> {
    if meta.config_hash != config.hash() {
        return Err(DatasetError::Metadata(format!(
            "config hash {} does not match sample's {}",
            config.hash(),
            meta.config_hash
        )));
    }
    let library = config.heap.library.build(config.heap.pixel_size)?;
    make_sample(meta.seed, meta.split, config, &library)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_seeds: [u64; 2],
    pub test_seeds: [u64; 2],
    pub train_prototypes: [usize; 2],
    pub test_prototypes: [usize; 2],
}

impl SplitSpec {
    /// Both seed ranges and both prototype ranges are disjoint.
    pub fn is_disjoint(&self) -> bool {
        let apart = |a: [u64; 2], b: [u64; 2]| a[1] <= b[0] || b[1] <= a[0] || a[0] == a[1] || b[0] == b[1];
        let apart_us = |a: [usize; 2], b: [usize; 2]| apart([a[0] as u64, a[1] as u64], [b[0] as u64, b[1] as u64]);
        apart(self.train_seeds, self.test_seeds) && apart_us(self.train_prototypes, self.test_prototypes)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub split: Split,
    pub first_seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShardFailure {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub sample_count: usize,
    pub config_hash: String,
    pub config: DatasetConfig,
    pub split: SplitSpec,
    pub shards: Vec<ShardEntry>,
    pub complete: bool,
    pub failures: Vec<ShardFailure>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?)
    }

    pub fn shard_path(&self, dir: &Path, entry: &ShardEntry) -> PathBuf {
        dir.join(&entry.file)
    }
}

struct ShardJob {
    file: String,
    split: Split,
    seeds: Range<u64>,
}

/// Generates one sample per seed into `out_dir`, sharded and split into
/// train and test by seed range and by library prototype range.
///
/// Shards are written in parallel; the manifest is written last. When a
/// shard fails the manifest lists the shards that succeeded and the failures,
/// and `PartialFailure` is returned.
pub fn generate_dataset(seeds: Range<u64>, config: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let total = seeds.end.saturating_sub(seeds.start);
    let n_train = (total as f64 * config.train_fraction).round() as u64;
    let train = seeds.start..seeds.start + n_train;
    let test = train.end..seeds.end.max(train.end);

    let mut jobs = Vec::new();
    for (split, range) in [(Split::Train, train.clone()), (Split::Test, test.clone())] {
        let mut s = range.start;
        while s < range.end {
            let e = (s + config.shard_size as u64).min(range.end);
            jobs.push(ShardJob {
                file: format!("{SHARD_DIR}/{:04}.xrd", jobs.len()),
                split,
                seeds: s..e,
            });
            s = e;
        }
    }

    fs::create_dir_all(out_dir.join(SHARD_DIR))?;
    let library = config.heap.library.build(config.heap.pixel_size)?;
    let results: Vec<std::result::Result<ShardEntry, ShardFailure>> = jobs
        .par_iter()
        .map(|job| {
            let run = || -> Result<ShardEntry> {
                let records = job
                    .seeds
                    .clone()
                    .map(|seed| make_sample(seed, job.split, config, &library))
                    .collect::<Result<Vec<_>>>()?;
                write_shard(&records, &out_dir.join(&job.file))?;
                Ok(ShardEntry {
                    file: job.file.clone(),
                    split: job.split,
                    first_seed: job.seeds.start,
                    count: records.len(),
                })
            };
            run().map_err(|e| ShardFailure {
                file: job.file.clone(),
                error: e.to_string(),
            })
        })
        .collect();

    let mut shards = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(entry) => shards.push(entry),
            Err(f) => failures.push(f),
        }
    }
    let (train_p, test_p) = config.prototype_split();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        sample_count: shards.iter().map(|s| s.count).sum(),
        config_hash: config.hash(),
        config: config.clone(),
        split: SplitSpec {
            train_seeds: [train.start, train.end],
            test_seeds: [test.start, test.end],
            train_prototypes: [train_p.start, train_p.end],
            test_prototypes: [test_p.start, test_p.end],
        },
        shards,
        complete: failures.is_empty(),
        failures: failures.clone(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    if failures.is_empty() {
        Ok(manifest)
    } else {
        Err(DatasetError::PartialFailure {
            manifest: manifest_path,
            failures,
        })
    }
}

/// Raw little-endian `f32` dump of a raster.
pub fn write_f32_raster(values: &[f32], path: &Path) -> std::io::Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)
}
