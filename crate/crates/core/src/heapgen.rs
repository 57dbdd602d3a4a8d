//! Seeded procedural heaps.
//!
//! The target is dropped first, then `N` distractors, each at a truncated
//! Gaussian offset from a uniformly drawn heap center. `N` follows a Poisson
//! law truncated to `[n_min, n_max]` by rejection. Distractor footprints come
//! from a fixed procedural library of rectangles, L-shapes and discs.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::Dims;
use crate::scene::{Footprint, Pose, Scene};

/// Rejections allowed before a count or placement draw gives up.
const MAX_REJECTIONS: usize = 100_000;

/// Box target, in meters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TargetSpec {
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            length: 0.03,
            width: 0.03,
            thickness: 0.005,
        }
    }
}

impl TargetSpec {
    pub fn footprint(&self, pixel_size: f64) -> Result<Footprint> {
        let w = (self.length / pixel_size).round().max(1.0) as usize;
        let h = (self.width / pixel_size).round().max(1.0) as usize;
        Footprint::rectangle(w, h, self.thickness)
    }
}

/// Parameters of the procedural distractor library. Sizes in meters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FootprintLibraryConfig {
    pub seed: u64,
    pub size: usize,
    pub rect_weight: f64,
    pub l_weight: f64,
    pub disc_weight: f64,
    pub min_extent: f64,
    pub max_extent: f64,
    pub min_thickness: f64,
    pub max_thickness: f64,
}

impl Default for FootprintLibraryConfig {
    fn default() -> Self {
        Self {
            seed: 0x0005_eed0_f11b,
            size: 60,
            rect_weight: 0.5,
            l_weight: 0.25,
            disc_weight: 0.25,
            min_extent: 0.02,
            max_extent: 0.10,
            min_thickness: 0.01,
            max_thickness: 0.05,
        }
    }
}

impl FootprintLibraryConfig {
    /// Builds the prototype list. Deterministic in the config and pixel size.
    pub fn build(&self, pixel_size: f64) -> Result<Vec<Arc<Footprint>>> {
        let total = self.rect_weight + self.l_weight + self.disc_weight;
        if !(total > 0.0) || self.rect_weight < 0.0 || self.l_weight < 0.0 || self.disc_weight < 0.0
        {
            return Err(Error::InvalidConfig("footprint kind weights must be >= 0 and not all 0".into()));
        }
        if !(self.min_extent > 0.0 && self.min_extent <= self.max_extent) {
            return Err(Error::InvalidConfig("need 0 < min_extent <= max_extent".into()));
        }
        if !(self.min_thickness > 0.0 && self.min_thickness <= self.max_thickness) {
            return Err(Error::InvalidConfig("need 0 < min_thickness <= max_thickness".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let px = |m: f64| (m / pixel_size).round().max(1.0) as usize;
        let mut out = Vec::with_capacity(self.size);
        for _ in 0..self.size {
            let kind: f64 = rng.random::<f64>() * total;
            let a = rng.random_range(self.min_extent..=self.max_extent);
            let b = rng.random_range(self.min_extent..=self.max_extent);
            let t = rng.random_range(self.min_thickness..=self.max_thickness);
            let fp = if kind < self.rect_weight {
                Footprint::rectangle(px(a), px(b), t)?
            } else if kind < self.rect_weight + self.l_weight {
                let (w, h) = (px(a).max(2), px(b).max(2));
                let arm_frac = rng.random_range(0.3..0.5);
                let arm = ((w.min(h) as f64 * arm_frac).round() as usize).clamp(1, w.min(h));
                Footprint::l_shape(w, h, arm, t)?
            } else {
                Footprint::disc(a / pixel_size / 2.0, t)?
            };
            out.push(Arc::new(fp));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct HeapConfig {
    pub width: usize,
    pub height: usize,
    /// Meters per pixel.
    pub pixel_size: f64,
    pub n_lambda: f64,
    pub n_min: u32,
    pub n_max: u32,
    /// Standard deviation of per-object offsets from the heap center, pixels.
    pub placement_sigma: f64,
    /// Offsets longer than this many sigmas are redrawn.
    pub truncation: f64,
    /// Heap centers are uniform over the workspace shrunk by this fraction
    /// on every side.
    pub center_margin: f64,
    pub n_rot: u32,
    pub target: TargetSpec,
    pub library: FootprintLibraryConfig,
    /// Restrict distractors to library prototypes in `[start, end)`.
    pub prototype_range: Option<[usize; 2]>,
}

impl Default for HeapConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 384,
            pixel_size: 0.001,
            n_lambda: 12.0,
            n_min: 10,
            n_max: 15,
            placement_sigma: 40.0,
            truncation: 2.5,
            center_margin: 0.3,
            n_rot: 16,
            target: TargetSpec::default(),
            library: FootprintLibraryConfig::default(),
            prototype_range: None,
        }
    }
}

impl HeapConfig {
    /// Fixed 14 distractors, 15 objects in total.
    pub fn simulation() -> Self {
        Self {
            n_min: 14,
            n_max: 14,
            ..Self::default()
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("workspace must be non-empty");
        }
        if !(self.pixel_size > 0.0) {
            return bad("pixel_size must be > 0");
        }
        if self.n_min > self.n_max {
            return bad("n_min must be <= n_max");
        }
        if !(self.n_lambda > 0.0) {
            return bad("n_lambda must be > 0");
        }
        if !(self.placement_sigma > 0.0) {
            return bad("placement_sigma must be > 0");
        }
        if !(self.truncation > 0.0) {
            return bad("truncation must be > 0");
        }
        if !(0.0..0.5).contains(&self.center_margin) {
            return bad("center_margin must be in [0, 0.5)");
        }
        if self.n_rot == 0 {
            return bad("n_rot must be >= 1");
        }
        if let Some([a, b]) = self.prototype_range {
            if a >= b || b > self.library.size {
                return bad("prototype_range must be a non-empty range within the library");
            }
        }
        Ok(())
    }

    /// Short hex digest of the JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(json)[..8])
    }

    fn prototypes(&self) -> Range<usize> {
        match self.prototype_range {
            Some([a, b]) => a..b,
            None => 0..self.library.size,
        }
    }
}

/// Poisson draw rejected until it lands in `[n_min, n_max]`.
pub fn sample_object_count<R: Rng + ?Sized>(rng: &mut R, config: &HeapConfig) -> u32 {
    if config.n_min == config.n_max {
        return config.n_min;
    }
    let poisson = Poisson::new(config.n_lambda).expect("validated lambda");
    for _ in 0..MAX_REJECTIONS {
        let n = poisson.sample(rng) as u64;
        if n >= config.n_min as u64 && n <= config.n_max as u64 {
            return n as u32;
        }
    }
    log::warn!(
        "Poisson({}) rarely falls in [{}, {}]; clamping",
        config.n_lambda,
        config.n_min,
        config.n_max
    );
    (config.n_lambda.round() as u32).clamp(config.n_min, config.n_max)
}

struct Placer {
    center: (f64, f64),
    offset: Normal<f64>,
    radius: f64,
    dims: Dims,
    n_rot: u32,
}

impl Placer {
    /// Pose putting the footprint's origin at a truncated Gaussian point
    /// inside the workspace.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, footprint: &Footprint) -> Pose {
        let (w, h) = (self.dims.width as f64, self.dims.height as f64);
        let mut point = self.center;
        for _ in 0..MAX_REJECTIONS {
            let dx = self.offset.sample(rng);
            let dy = self.offset.sample(rng);
            let (x, y) = (self.center.0 + dx, self.center.1 + dy);
            if dx.hypot(dy) <= self.radius && (0.0..w).contains(&x) && (0.0..h).contains(&y) {
                point = (x, y);
                break;
            }
        }
        let rot = rng.random_range(0..self.n_rot);
        let [ox, oy] = footprint.origin();
        Pose::new(
            (point.0 - ox).round() as i32,
            (point.1 - oy).round() as i32,
            rot,
            self.n_rot,
        )
    }
}

/// Generates the heap for `seed`. The target always rests fully inside the
/// workspace; distractors that clip away entirely are discarded.
pub fn sample_heap(seed: u64, config: &HeapConfig) -> Result<Scene> {
    let library = config.library.build(config.pixel_size)?;
    sample_heap_with_library(seed, config, &library)
}

/// [`sample_heap`] with a prebuilt library, for batch generation.
pub fn sample_heap_with_library(
    seed: u64,
    config: &HeapConfig,
    library: &[Arc<Footprint>],
) -> Result<Scene> {
    config.validate()?;
    if library.len() < config.library.size {
        return Err(Error::InvalidConfig("library smaller than configured".into()));
    }
    let dims = config.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sample_object_count(&mut rng, config);

    let (mx, my) = (
        config.center_margin * dims.width as f64,
        config.center_margin * dims.height as f64,
    );
    let cx = if mx > 0.0 { rng.random_range(mx..dims.width as f64 - mx) } else { dims.width as f64 / 2.0 };
    let cy = if my > 0.0 { rng.random_range(my..dims.height as f64 - my) } else { dims.height as f64 / 2.0 };
    let placer = Placer {
        center: (cx, cy),
        offset: Normal::new(0.0, config.placement_sigma).expect("validated sigma"),
        radius: config.truncation * config.placement_sigma,
        dims,
        n_rot: config.n_rot,
    };

    let target = Arc::new(config.target.footprint(config.pixel_size)?);
    let mut scene = Scene::new(dims, config.pixel_size);
    let mut placed = false;
    for _ in 0..MAX_REJECTIONS {
        let pose = placer.sample(&mut rng, &target);
        let full = target.rotated(pose.rotation());
        let inside = full.indices_at(pose.tx, pose.ty, dims).len();
        let unclipped: usize = full.runs().iter().map(|r| (r.x1 - r.x0) as usize).sum();
        if inside == unclipped {
            scene = scene.place(target.clone(), pose, true)?.0;
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(Error::InvalidConfig("target never fits inside the workspace".into()));
    }

    let protos = config.prototypes();
    for _ in 0..n {
        let fp = library[rng.random_range(protos.clone())].clone();
        let pose = placer.sample(&mut rng, &fp);
        match scene.place(fp, pose, false) {
            Ok((next, _)) => scene = next,
            Err(Error::EmptyPlacement) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(scene)
}

/// Canonical 16x12 scene: a 4x2 target (thickness 1) at `(5, 3)` buried
/// under a 6x6 occluder (thickness 2), plus a free 3x3 box (thickness 1.5).
/// Units are abstract: one pixel per unit length.
pub fn fixture_f1() -> Scene {
    let n_rot = 16;
    let scene = Scene::new(Dims::new(16, 12), 1.0);
    let rect = |w, h, t| Arc::new(Footprint::rectangle(w, h, t).expect("valid fixture"));
    let (scene, _) = scene
        .place(rect(4, 2, 1.0), Pose::new(5, 3, 0, n_rot), true)
        .expect("fixture target");
    let (scene, _) = scene
        .place(rect(6, 6, 2.0), Pose::new(4, 1, 0, n_rot), false)
        .expect("fixture occluder");
    let (scene, _) = scene
        .place(rect(3, 3, 1.5), Pose::new(12, 8, 0, n_rot), false)
        .expect("fixture box");
    scene
}
