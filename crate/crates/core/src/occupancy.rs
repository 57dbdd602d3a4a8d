//! Exact target occupancy distributions.
//!
//! Every candidate target pose on a translation x rotation grid is tested
//! against the observed target modal mask. A candidate is consistent when the
//! modal mask the target would have there, lying on the floor under the other
//! objects, matches the observed one (IoU above a threshold, or both empty).
//! The amodal masks of all consistent candidates are summed and normalized
//! by the maximum.
//!
//! Consistency is decided from per-row prefix counts over two rasters, the
//! pixels where a floor-level target would be visible and those that are also
//! observed target pixels, so one candidate costs `O(rows of the footprint)`.
//! Candidates are checked in parallel and merged in enumeration order; the
//! result does not depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{Dims, HeightField, Mask};
use crate::scene::{Footprint, Pose, RotatedFootprint, Scene};
use crate::sensor;

/// IoU a candidate modal mask must exceed to count as the same observation.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.9;

/// Translation x rotation grid of candidate target poses.
///
/// Translations are `tx = i * stride` for `i < n_tx` and likewise for `ty`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CandidateGrid {
    pub stride: u32,
    pub n_tx: u32,
    pub n_ty: u32,
    pub n_rot: u32,
    /// Add the target's true pose when it is not already a grid point.
    pub include_true_pose: bool,
}

impl Default for CandidateGrid {
    fn default() -> Self {
        Self {
            stride: 8,
            n_tx: 64,
            n_ty: 48,
            n_rot: 16,
            include_true_pose: true,
        }
    }
}

impl CandidateGrid {
    /// Grid with the given stride whose translations span `dims`.
    pub fn covering(dims: Dims, stride: u32, n_rot: u32) -> Self {
        let s = stride.max(1) as usize;
        Self {
            stride: stride.max(1),
            n_tx: dims.width.div_ceil(s) as u32,
            n_ty: dims.height.div_ceil(s) as u32,
            n_rot,
            include_true_pose: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.n_rot == 0 {
            return Err(Error::InvalidConfig(
                "candidate grid needs stride >= 1 and n_rot >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn grid_len(&self) -> usize {
        self.n_tx as usize * self.n_ty as usize * self.n_rot as usize
    }

    /// Whether `pose` coincides (same translation, same angle) with a grid point.
    pub fn contains(&self, pose: Pose) -> bool {
        let s = self.stride as i64;
        let on_axis = |t: i32, n: u32| t >= 0 && (t as i64) % s == 0 && (t as i64) / s < n as i64;
        if !on_axis(pose.tx, self.n_tx) || !on_axis(pose.ty, self.n_ty) {
            return false;
        }
        let r = pose.rotation().reduced();
        (r.bin as u64 * self.n_rot as u64).is_multiple_of(r.bins as u64)
    }

    /// Candidate poses in enumeration order: `ty`, then `tx`, then rotation.
    pub fn poses(&self) -> impl Iterator<Item = Pose> + '_ {
        let s = self.stride as i32;
        (0..self.n_ty).flat_map(move |iy| {
            (0..self.n_tx).flat_map(move |ix| {
                (0..self.n_rot)
                    .map(move |r| Pose::new(ix as i32 * s, iy as i32 * s, r, self.n_rot))
            })
        })
    }

    /// Grid poses followed by the injected true pose, when applicable.
    pub fn candidates(&self, true_pose: Option<Pose>) -> Vec<Pose> {
        let mut out: Vec<Pose> = self.poses().collect();
        if let Some(p) = true_pose {
            if self.include_true_pose && !self.contains(p) {
                out.push(p);
            }
        }
        out
    }
}

/// Per-pixel likelihood that the target's amodal mask covers the pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyDistribution {
    dims: Dims,
    values: Vec<f32>,
    matched_poses: Vec<Pose>,
}

impl OccupancyDistribution {
    /// Wraps raw values, e.g. a prediction to compare against a ground truth.
    pub fn from_values(dims: Dims, values: Vec<f32>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::InvalidRaster(format!(
                "{} values for a {}x{} distribution",
                values.len(),
                dims.width,
                dims.height
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidRaster("distribution values must be finite and >= 0".into()));
        }
        Ok(Self {
            dims,
            values,
            matched_poses: Vec::new(),
        })
    }

    /// Normalizes summed coverage counts by their maximum.
    pub fn from_counts(dims: Dims, counts: &[u32], matched_poses: Vec<Pose>) -> Self {
        assert_eq!(counts.len(), dims.len());
        let max = counts.iter().copied().max().unwrap_or(0);
        let values = if max == 0 {
            vec![0.0; counts.len()]
        } else {
            counts.iter().map(|&c| c as f32 / max as f32).collect()
        };
        Self {
            dims,
            values,
            matched_poses,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn matched_poses(&self) -> &[Pose] {
        &self.matched_poses
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[self.dims.index(x, y)]
    }

    /// Nonzero pixels as a mask.
    pub fn support(&self) -> Mask {
        Mask::from_vec(self.dims, self.values.iter().map(|&v| v > 0.0).collect())
            .expect("dims match")
    }

    /// Every value multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            dims: self.dims,
            values: self.values.iter().map(|v| v * factor).collect(),
            matched_poses: self.matched_poses.clone(),
        }
    }
}

/// Number of nonzero pixels.
pub fn support_size(dist: &OccupancyDistribution) -> u64 {
    dist.values.iter().filter(|&&v| v > 0.0).count() as u64
}

/// Reduction in support from `before` to `after`.
pub fn surrogate_reward(before: &OccupancyDistribution, after: &OccupancyDistribution) -> Result<i64> {
    before.dims.check_same(after.dims)?;
    Ok(support_size(before) as i64 - support_size(after) as i64)
}

/// Modal mask of the target footprint placed on the floor at `pose`, under
/// the top surface `others` of every other object.
///
/// A pixel is visible when the target's top strictly exceeds `others` there.
pub fn candidate_modal_mask(
    others: &HeightField,
    floor_height: f64,
    target: &Footprint,
    pose: Pose,
) -> Mask {
    let top = floor_height + target.thickness();
    let mut mask = crate::scene::rasterize(target, pose, others.dims());
    for (m, &h) in mask.as_mut_slice().iter_mut().zip(others.as_slice()) {
        *m = *m && top > h;
    }
    mask
}

/// Same observation test on pre-counted pixels.
#[inline]
pub fn consistent_counts(candidate: u64, observed: u64, intersection: u64, threshold: f64) -> bool {
    if candidate == 0 && observed == 0 {
        return true;
    }
    let union = candidate + observed - intersection;
    intersection as f64 / union as f64 > threshold
}

/// Whether a candidate modal mask yields the observed one: both empty, or IoU
/// strictly above `threshold`.
pub fn is_consistent(candidate: &Mask, observed: &Mask, threshold: f64) -> Result<bool> {
    let inter = candidate.intersection_count(observed)? as u64;
    Ok(consistent_counts(
        candidate.count() as u64,
        observed.count() as u64,
        inter,
        threshold,
    ))
}

/// Per-row inclusive prefix counts; row `y` occupies `y * (w + 1)..`.
struct RowPrefix {
    stride: usize,
    counts: Vec<u32>,
}

impl RowPrefix {
    fn new(dims: Dims, pixel: impl Fn(usize) -> bool) -> Self {
        let stride = dims.width + 1;
        let mut counts = vec![0u32; stride * dims.height];
        for y in 0..dims.height {
            let row = &mut counts[y * stride..(y + 1) * stride];
            for x in 0..dims.width {
                row[x + 1] = row[x] + pixel(y * dims.width + x) as u32;
            }
        }
        Self { stride, counts }
    }

    #[inline]
    fn span(&self, y: usize, x0: usize, x1: usize) -> u32 {
        let row = y * self.stride;
        self.counts[row + x1] - self.counts[row + x0]
    }
}

/// Everything about the target's observation that candidates are tested against.
struct Observation<'a> {
    dims: Dims,
    footprint: &'a Footprint,
    visible: RowPrefix,
    visible_and_observed: RowPrefix,
    observed_count: u64,
    threshold: f64,
}

impl Observation<'_> {
    fn is_consistent(&self, rotated: &RotatedFootprint, pose: Pose) -> bool {
        let mut candidate = 0u64;
        let mut inter = 0u64;
        for (y, x0, x1) in rotated.clipped_runs(pose.tx, pose.ty, self.dims) {
            candidate += self.visible.span(y, x0, x1) as u64;
            inter += self.visible_and_observed.span(y, x0, x1) as u64;
            // Both-empty is the only match when nothing is observed.
            if self.observed_count == 0 && candidate > 0 {
                return false;
            }
        }
        consistent_counts(candidate, self.observed_count, inter, self.threshold)
    }
}

/// Exact occupancy distribution of the scene's target.
pub fn occupancy_distribution(scene: &Scene, grid: &CandidateGrid) -> Result<OccupancyDistribution> {
    occupancy_distribution_with_threshold(scene, grid, DEFAULT_IOU_THRESHOLD)
}

pub fn occupancy_distribution_with_threshold(
    scene: &Scene,
    grid: &CandidateGrid,
    threshold: f64,
) -> Result<OccupancyDistribution> {
    grid.validate()?;
    let target = scene.target().ok_or(Error::NoTarget)?;
    let dims = scene.dims();
    let observed = sensor::modal_mask(scene, target.id)?;
    let others = scene.heightmap_excluding(target.id);
    let top = scene.floor_height() + target.footprint.thickness();
    let visible: Vec<bool> = others.as_slice().iter().map(|&h| top > h).collect();
    let obs = observed.as_slice();
    let ctx = Observation {
        dims,
        footprint: &target.footprint,
        visible: RowPrefix::new(dims, |i| visible[i]),
        visible_and_observed: RowPrefix::new(dims, |i| visible[i] && obs[i]),
        observed_count: observed.count() as u64,
        threshold,
    };

    let rotations: Vec<RotatedFootprint> = (0..grid.n_rot)
        .into_par_iter()
        .map(|r| ctx.footprint.rotated(crate::scene::Rotation::new(r, grid.n_rot)))
        .collect();
    let injected = (grid.include_true_pose && !grid.contains(target.pose))
        .then(|| (target.pose, ctx.footprint.rotated(target.pose.rotation())));

    // One work item per grid row of translations.
    let s = grid.stride as i32;
    let mut matched: Vec<(Pose, &RotatedFootprint)> = (0..grid.n_ty)
        .into_par_iter()
        .flat_map_iter(|iy| {
            let mut row = Vec::new();
            for ix in 0..grid.n_tx {
                for (r, rotated) in rotations.iter().enumerate() {
                    let pose = Pose::new(ix as i32 * s, iy as i32 * s, r as u32, grid.n_rot);
                    if ctx.is_consistent(rotated, pose) {
                        row.push((pose, rotated));
                    }
                }
            }
            row
        })
        .collect();
    if let Some((pose, rotated)) = &injected {
        if ctx.is_consistent(rotated, *pose) {
            matched.push((*pose, rotated));
        }
    }

    Ok(accumulate(dims, &matched))
}

/// Sums matched amodal masks with per-row difference arrays.
fn accumulate(dims: Dims, matched: &[(Pose, &RotatedFootprint)]) -> OccupancyDistribution {
    let stride = dims.width + 1;
    let mut diff = vec![0i32; stride * dims.height];
    for (pose, rotated) in matched {
        for (y, x0, x1) in rotated.clipped_runs(pose.tx, pose.ty, dims) {
            diff[y * stride + x0] += 1;
            diff[y * stride + x1] -= 1;
        }
    }
    let mut counts = vec![0u32; dims.len()];
    for y in 0..dims.height {
        let mut acc = 0i32;
        for x in 0..dims.width {
            acc += diff[y * stride + x];
            counts[y * dims.width + x] = acc as u32;
        }
    }
    OccupancyDistribution::from_counts(dims, &counts, matched.iter().map(|(p, _)| *p).collect())
}

/// Balanced accuracy and IoU of a predicted distribution against a ground truth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistributionMetrics {
    pub balanced_accuracy: f64,
    pub iou: f64,
}

/// Ground-truth value above which a pixel is a positive.
pub const POSITIVE_THRESHOLD: f32 = 0.1;
/// Maximum prediction error for a pixel to count as correct.
pub const VALUE_TOLERANCE: f32 = 0.2;

/// A pixel is positive when its value exceeds 0.1, negative otherwise, and
/// correctly predicted when the prediction is within 0.2 of the truth. An
/// empty class scores accuracy 1, and two distributions with no positives
/// have IoU 1.
pub fn distribution_metrics(
    pred: &OccupancyDistribution,
    gt: &OccupancyDistribution,
) -> Result<DistributionMetrics> {
    gt.dims.check_same(pred.dims)?;
    let (mut pos, mut tp, mut neg, mut tn) = (0u64, 0u64, 0u64, 0u64);
    let (mut both, mut either) = (0u64, 0u64);
    for (&p, &g) in pred.values.iter().zip(&gt.values) {
        let close = (p - g).abs() <= VALUE_TOLERANCE;
        let g_pos = g > POSITIVE_THRESHOLD;
        let p_pos = p > POSITIVE_THRESHOLD;
        if g_pos {
            pos += 1;
            tp += close as u64;
        } else {
            neg += 1;
            tn += close as u64;
        }
        both += (g_pos && p_pos) as u64;
        either += (g_pos || p_pos) as u64;
    }
    let rate = |hit: u64, total: u64| if total == 0 { 1.0 } else { hit as f64 / total as f64 };
    Ok(DistributionMetrics {
        balanced_accuracy: 0.5 * (rate(tp, pos) + rate(tn, neg)),
        iou: rate(both, either),
    })
}
