//! Extruded-footprint objects on a planar workspace.
//!
//! Objects settle flat: a placed object rests at the maximum of the current
//! heightmap under its rasterized footprint. Removing an object re-settles
//! every remaining object in original placement order.

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::{Dims, HeightField, Mask};

/// Binary footprint in object-local pixel coordinates, extruded by `thickness`.
///
/// `origin` is the rotation center in continuous local coordinates where
/// local pixel `(i, j)` spans `[i, i + 1) x [j, j + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    grid: Mask,
    origin: [f64; 2],
    thickness: f64,
}

impl Footprint {
    pub fn new(grid: Mask, origin: [f64; 2], thickness: f64) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidFootprint("occupancy grid has no set pixel".into()));
        }
        if !(thickness > 0.0 && thickness.is_finite()) {
            return Err(Error::InvalidFootprint(format!("thickness {thickness} must be > 0")));
        }
        let [ox, oy] = origin;
        if !(ox >= 0.0 && oy >= 0.0 && ox <= grid.width() as f64 && oy <= grid.height() as f64) {
            return Err(Error::InvalidFootprint(format!(
                "origin ({ox}, {oy}) outside {}x{} grid",
                grid.width(),
                grid.height()
            )));
        }
        Ok(Self {
            grid,
            origin,
            thickness,
        })
    }

    /// Solid `width x height` rectangle rotating about its center.
    pub fn rectangle(width: usize, height: usize, thickness: f64) -> Result<Self> {
        let grid = Mask::from_vec(Dims::new(width, height), vec![true; width * height])?;
        Self::new(grid, [width as f64 / 2.0, height as f64 / 2.0], thickness)
    }

    /// Disc of the given radius in pixels, centered in a square grid.
    pub fn disc(radius: f64, thickness: f64) -> Result<Self> {
        let side = (2.0 * radius).ceil().max(1.0) as usize;
        let c = side as f64 / 2.0;
        let dims = Dims::new(side, side);
        let mut grid = Mask::empty(dims);
        for y in 0..side {
            for x in 0..side {
                let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
                if dx * dx + dy * dy <= radius * radius {
                    grid.set(x, y, true);
                }
            }
        }
        if grid.is_empty() {
            grid.set(side / 2, side / 2, true);
        }
        Self::new(grid, [c, c], thickness)
    }

    /// L-shape: a `width x height` box with the top-right
    /// `(width - arm) x (height - arm)` corner cut away.
    pub fn l_shape(width: usize, height: usize, arm: usize, thickness: f64) -> Result<Self> {
        if arm == 0 || arm > width || arm > height {
            return Err(Error::InvalidFootprint(format!(
                "L-shape arm {arm} does not fit {width}x{height}"
            )));
        }
        let mut grid = Mask::empty(Dims::new(width, height));
        for y in 0..height {
            for x in 0..width {
                if x < arm || y >= height - arm {
                    grid.set(x, y, true);
                }
            }
        }
        Self::new(grid, [width as f64 / 2.0, height as f64 / 2.0], thickness)
    }

    pub fn grid(&self) -> &Mask {
        &self.grid
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn area(&self) -> usize {
        self.grid.count()
    }

    /// Whether the workspace pixel at integer offset `(dx, dy)` from the pose
    /// translation is covered when rotated by `(cos, sin)`.
    ///
    /// Nearest-neighbor inverse mapping: the offset pixel's center is rotated
    /// back about the origin and looked up in the local grid.
    #[inline]
    fn covers_offset(&self, dx: i64, dy: i64, (cos, sin): (f64, f64)) -> bool {
        let [ox, oy] = self.origin;
        let vx = dx as f64 + 0.5 - ox;
        let vy = dy as f64 + 0.5 - oy;
        let lx = (cos * vx + sin * vy + ox).floor();
        let ly = (-sin * vx + cos * vy + oy).floor();
        if lx < 0.0 || ly < 0.0 {
            return false;
        }
        let (lx, ly) = (lx as usize, ly as usize);
        lx < self.grid.width() && ly < self.grid.height() && self.grid.get(lx, ly)
    }

    /// Inclusive offset bounding box `(x0, y0, x1, y1)` of the rotated footprint.
    fn offset_bounds(&self, (cos, sin): (f64, f64)) -> (i64, i64, i64, i64) {
        let [ox, oy] = self.origin;
        let (w, h) = (self.grid.width() as f64, self.grid.height() as f64);
        let mut bounds = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (cx, cy) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
            let (vx, vy) = (cx - ox, cy - oy);
            let x = cos * vx - sin * vy + ox;
            let y = sin * vx + cos * vy + oy;
            bounds.0 = bounds.0.min(x);
            bounds.1 = bounds.1.min(y);
            bounds.2 = bounds.2.max(x);
            bounds.3 = bounds.3.max(y);
        }
        (
            bounds.0.floor() as i64 - 1,
            bounds.1.floor() as i64 - 1,
            bounds.2.ceil() as i64 + 1,
            bounds.3.ceil() as i64 + 1,
        )
    }

    /// Run-length form of the footprint rotated by `rotation`, in offsets
    /// relative to the pose translation.
    pub fn rotated(&self, rotation: Rotation) -> RotatedFootprint {
        let cs = rotation.cos_sin();
        let (x0, y0, x1, y1) = self.offset_bounds(cs);
        let mut runs = Vec::new();
        for dy in y0..=y1 {
            let mut start = None;
            for dx in x0..=x1 + 1 {
                let covered = dx <= x1 && self.covers_offset(dx, dy, cs);
                match (covered, start) {
                    (true, None) => start = Some(dx),
                    (false, Some(s)) => {
                        runs.push(Run {
                            dy: dy as i32,
                            x0: s as i32,
                            x1: dx as i32,
                        });
                        start = None;
                    }
                    _ => {}
                }
            }
        }
        RotatedFootprint { runs }
    }
}

/// Planar rotation of `bin` steps of `2 pi / bins`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Rotation {
    pub bin: u32,
    pub bins: u32,
}

impl Rotation {
    pub fn new(bin: u32, bins: u32) -> Self {
        Self { bin, bins }
    }

    /// The rotation reduced to lowest terms, so equal angles compare equal.
    pub fn reduced(self) -> Self {
        let bins = self.bins.max(1);
        let bin = self.bin % bins;
        let g = gcd(bin, bins);
        Self {
            bin: bin / g,
            bins: bins / g,
        }
    }

    pub fn angle(self) -> f64 {
        let r = self.reduced();
        std::f64::consts::TAU * r.bin as f64 / r.bins as f64
    }

    /// `(cos, sin)`, exact for multiples of a quarter turn.
    pub fn cos_sin(self) -> (f64, f64) {
        let r = self.reduced();
        if 4 % r.bins == 0 {
            match r.bin * (4 / r.bins) {
                0 => (1.0, 0.0),
                1 => (0.0, 1.0),
                2 => (-1.0, 0.0),
                _ => (0.0, -1.0),
            }
        } else {
            let a = self.angle();
            (a.cos(), a.sin())
        }
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Integer planar translation plus a rotation bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub tx: i32,
    pub ty: i32,
    pub rot_bin: u32,
    pub n_rot: u32,
}

impl Pose {
    pub fn new(tx: i32, ty: i32, rot_bin: u32, n_rot: u32) -> Self {
        Self {
            tx,
            ty,
            rot_bin,
            n_rot,
        }
    }

    pub fn rotation(&self) -> Rotation {
        Rotation::new(self.rot_bin, self.n_rot)
    }

    pub fn is_valid(&self) -> bool {
        self.n_rot >= 1 && self.rot_bin < self.n_rot
    }
}

/// Horizontal span `[x0, x1)` in row `dy`, as offsets from a pose translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub dy: i32,
    pub x0: i32,
    pub x1: i32,
}

/// A footprint resampled at one rotation, as row runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RotatedFootprint {
    runs: Vec<Run>,
}

impl RotatedFootprint {
    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    /// Runs translated by `(tx, ty)` and clipped to the workspace, as
    /// `(row, x0, x1)` with `x0 < x1`.
    pub fn clipped_runs(
        &self,
        tx: i32,
        ty: i32,
        dims: Dims,
    ) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (w, h) = (dims.width as i64, dims.height as i64);
        self.runs.iter().filter_map(move |r| {
            let y = ty as i64 + r.dy as i64;
            if y < 0 || y >= h {
                return None;
            }
            let x0 = (tx as i64 + r.x0 as i64).max(0);
            let x1 = (tx as i64 + r.x1 as i64).min(w);
            (x0 < x1).then_some((y as usize, x0 as usize, x1 as usize))
        })
    }

    /// Set pixel indices at a translation, clipped to the workspace, ascending.
    pub fn indices_at(&self, tx: i32, ty: i32, dims: Dims) -> Vec<u32> {
        let mut out = Vec::new();
        for (y, x0, x1) in self.clipped_runs(tx, ty, dims) {
            let base = y * dims.width;
            out.extend((base + x0..base + x1).map(|i| i as u32));
        }
        out
    }
}

/// Binary mask of the workspace pixels covered by `footprint` at `pose`.
///
/// The footprint is rotated about its origin by nearest-neighbor resampling,
/// then shifted so that at rotation zero local pixel `(i, j)` lands on
/// workspace pixel `(tx + i, ty + j)`. Pixels off the workspace are clipped.
pub fn rasterize(footprint: &Footprint, pose: Pose, dims: Dims) -> Mask {
    let cs = pose.rotation().cos_sin();
    let (x0, y0, x1, y1) = footprint.offset_bounds(cs);
    let mut mask = Mask::empty(dims);
    for dy in y0..=y1 {
        let y = pose.ty as i64 + dy;
        for dx in x0..=x1 {
            let x = pose.tx as i64 + dx;
            if dims.contains(x, y) && footprint.covers_offset(dx, dy, cs) {
                mask.set(x as usize, y as usize, true);
            }
        }
    }
    mask
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub id: ObjectId,
    pub footprint: Arc<Footprint>,
    pub pose: Pose,
    /// Height of the bottom face in meters.
    pub rest_height: f64,
    pub is_target: bool,
    amodal: Arc<[u32]>,
}

impl ObjectInstance {
    pub fn top(&self) -> f64 {
        self.rest_height + self.footprint.thickness()
    }

    /// Workspace pixel indices of the rasterized footprint, ascending.
    pub fn amodal_indices(&self) -> &[u32] {
        &self.amodal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    dims: Dims,
    pixel_size: f64,
    floor_height: f64,
    instances: Vec<ObjectInstance>,
    next_id: u32,
}

impl Scene {
    pub fn new(dims: Dims, pixel_size: f64) -> Self {
        Self {
            dims,
            pixel_size,
            floor_height: 0.0,
            instances: Vec::new(),
            next_id: 0,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn floor_height(&self) -> f64 {
        self.floor_height
    }

    /// Instances in placement order.
    pub fn instances(&self) -> &[ObjectInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance(&self, id: ObjectId) -> Result<&ObjectInstance> {
        self.instances
            .iter()
            .find(|o| o.id == id)
            .ok_or(Error::UnknownId(id))
    }

    pub(crate) fn position(&self, id: ObjectId) -> Result<usize> {
        self.instances
            .iter()
            .position(|o| o.id == id)
            .ok_or(Error::UnknownId(id))
    }

    pub fn target(&self) -> Option<&ObjectInstance> {
        self.instances.iter().find(|o| o.is_target)
    }

    /// Drops `footprint` at `pose`. It settles at the maximum height under its
    /// mask. Fails with `EmptyPlacement` when the mask is clipped away.
    pub fn place(
        &self,
        footprint: Arc<Footprint>,
        pose: Pose,
        is_target: bool,
    ) -> Result<(Scene, ObjectId)> {
        if !pose.is_valid() {
            return Err(Error::InvalidConfig(format!(
                "rotation bin {} outside [0, {})",
                pose.rot_bin, pose.n_rot
            )));
        }
        if is_target && self.target().is_some() {
            return Err(Error::InvalidConfig("scene already has a target".into()));
        }
        let amodal: Arc<[u32]> = footprint
            .rotated(pose.rotation())
            .indices_at(pose.tx, pose.ty, self.dims)
            .into();
        if amodal.is_empty() {
            return Err(Error::EmptyPlacement);
        }
        let rest_height = self
            .heightmap()
            .max_over(&amodal)
            .unwrap_or(self.floor_height);
        let id = ObjectId(self.next_id);
        let mut next = self.clone();
        next.next_id += 1;
        next.instances.push(ObjectInstance {
            id,
            footprint,
            pose,
            rest_height,
            is_target,
            amodal,
        });
        Ok((next, id))
    }

    /// Lifts `id` out and lets the rest re-settle in placement order.
    pub fn remove(&self, id: ObjectId) -> Result<Scene> {
        let pos = self.position(id)?;
        let mut next = self.clone();
        next.instances.remove(pos);
        let mut field = HeightField::filled(self.dims, self.floor_height);
        for inst in &mut next.instances {
            inst.rest_height = field.max_over(&inst.amodal).unwrap_or(self.floor_height);
            let top = inst.top();
            let values = field.as_mut_slice();
            for &i in inst.amodal.iter() {
                values[i as usize] = top;
            }
        }
        Ok(next)
    }

    /// Top-surface height: the floor where empty, else the highest covering top.
    pub fn heightmap(&self) -> HeightField {
        self.heightmap_filtered(|_| true)
    }

    /// Heightmap of every instance except `id`, at their current rest heights.
    pub fn heightmap_excluding(&self, id: ObjectId) -> HeightField {
        self.heightmap_filtered(|o| o.id != id)
    }

    fn heightmap_filtered(&self, keep: impl Fn(&ObjectInstance) -> bool) -> HeightField {
        let mut field = HeightField::filled(self.dims, self.floor_height);
        let values = field.as_mut_slice();
        for inst in self.instances.iter().filter(|o| keep(o)) {
            let top = inst.top();
            for &i in inst.amodal.iter() {
                let v = &mut values[i as usize];
                if top > *v {
                    *v = top;
                }
            }
        }
        field
    }

    /// Stable byte encoding of the full scene state.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend((self.dims.width as u64).to_le_bytes());
        out.extend((self.dims.height as u64).to_le_bytes());
        out.extend(self.pixel_size.to_bits().to_le_bytes());
        out.extend(self.floor_height.to_bits().to_le_bytes());
        out.extend((self.instances.len() as u64).to_le_bytes());
        for o in &self.instances {
            out.extend(o.id.0.to_le_bytes());
            out.extend(o.pose.tx.to_le_bytes());
            out.extend(o.pose.ty.to_le_bytes());
            out.extend(o.pose.rot_bin.to_le_bytes());
            out.extend(o.pose.n_rot.to_le_bytes());
            out.extend(o.rest_height.to_bits().to_le_bytes());
            out.push(o.is_target as u8);
            let fp = &o.footprint;
            out.extend(fp.thickness.to_bits().to_le_bytes());
            out.extend(fp.origin[0].to_bits().to_le_bytes());
            out.extend(fp.origin[1].to_bits().to_le_bytes());
            out.extend((fp.grid.width() as u64).to_le_bytes());
            out.extend((fp.grid.height() as u64).to_le_bytes());
            out.extend(fp.grid.to_u8());
        }
        out
    }

    /// Hex SHA-256 of [`Scene::canonical_bytes`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, t: f64) -> Arc<Footprint> {
        Arc::new(Footprint::rectangle(w, h, t).unwrap())
    }

    #[test]
    fn single_pixel_identity() {
        let fp = Footprint::rectangle(1, 1, 1.0).unwrap();
        let m = rasterize(&fp, Pose::new(5, 3, 0, 16), Dims::new(16, 12));
        assert_eq!(m.indices(), vec![3 * 16 + 5]);
    }

    #[test]
    fn rectangle_half_turn_is_symmetric() {
        let fp = Footprint::rectangle(4, 2, 1.0).unwrap();
        let dims = Dims::new(16, 12);
        let a = rasterize(&fp, Pose::new(5, 3, 0, 16), dims);
        let b = rasterize(&fp, Pose::new(5, 3, 8, 16), dims);
        assert_eq!(a, b);
        assert_eq!(a.count(), 8);
    }

    #[test]
    fn quarter_turn_swaps_extent() {
        let fp = Footprint::rectangle(4, 2, 1.0).unwrap();
        let m = rasterize(&fp, Pose::new(5, 3, 4, 16), Dims::new(16, 12));
        let xs: Vec<_> = m.indices().iter().map(|&i| i % 16).collect();
        let ys: Vec<_> = m.indices().iter().map(|&i| i / 16).collect();
        assert_eq!(m.count(), 8);
        assert_eq!(xs.iter().max().unwrap() - xs.iter().min().unwrap(), 1);
        assert_eq!(ys.iter().max().unwrap() - ys.iter().min().unwrap(), 3);
    }

    #[test]
    fn off_workspace_is_empty() {
        let fp = Footprint::rectangle(4, 2, 1.0).unwrap();
        let m = rasterize(&fp, Pose::new(-20, 3, 0, 16), Dims::new(16, 12));
        assert!(m.is_empty());
    }

    #[test]
    fn equal_angles_rasterize_identically() {
        let fp = Footprint::l_shape(7, 5, 2, 1.0).unwrap();
        let dims = Dims::new(20, 20);
        assert_eq!(
            rasterize(&fp, Pose::new(8, 8, 2, 16), dims),
            rasterize(&fp, Pose::new(8, 8, 1, 8), dims)
        );
    }

    #[test]
    fn rotated_runs_agree_with_rasterize() {
        let fp = Footprint::l_shape(9, 6, 3, 1.0).unwrap();
        let dims = Dims::new(24, 20);
        for bin in 0..16 {
            for (tx, ty) in [(0, 0), (10, 7), (-3, 15), (20, -2)] {
                let pose = Pose::new(tx, ty, bin, 16);
                let direct = rasterize(&fp, pose, dims);
                let runs = fp.rotated(pose.rotation()).indices_at(tx, ty, dims);
                assert_eq!(direct.indices(), runs, "bin {bin} at ({tx}, {ty})");
            }
        }
    }

    #[test]
    fn invalid_footprints_rejected() {
        let empty = Mask::empty(Dims::new(2, 2));
        assert!(Footprint::new(empty, [1.0, 1.0], 1.0).is_err());
        let full = Mask::from_rows(&["##"]).unwrap();
        assert!(Footprint::new(full.clone(), [1.0, 0.5], 0.0).is_err());
        assert!(Footprint::new(full, [3.0, 0.5], 1.0).is_err());
    }

    #[test]
    fn place_on_floor_and_stack() {
        let s = Scene::new(Dims::new(16, 12), 1.0);
        let (s, a) = s.place(rect(6, 6, 2.0), Pose::new(2, 2, 0, 16), false).unwrap();
        assert_eq!(s.instance(a).unwrap().rest_height, 0.0);
        assert_eq!(s.instance(a).unwrap().top(), 2.0);
        let (s, b) = s.place(rect(2, 2, 1.0), Pose::new(4, 4, 0, 16), false).unwrap();
        assert_eq!(s.instance(b).unwrap().rest_height, 2.0);
    }

    #[test]
    fn place_off_workspace_is_empty_placement() {
        let s = Scene::new(Dims::new(16, 12), 1.0);
        let err = s.place(rect(2, 2, 1.0), Pose::new(40, 4, 0, 16), false);
        assert_eq!(err.unwrap_err(), Error::EmptyPlacement);
    }

    #[test]
    fn remove_only_object_flattens() {
        let s = Scene::new(Dims::new(8, 8), 1.0);
        let (s, a) = s.place(rect(3, 3, 1.5), Pose::new(1, 1, 0, 16), false).unwrap();
        let s = s.remove(a).unwrap();
        assert!(s.is_empty());
        assert!(s.heightmap().as_slice().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn remove_support_drops_object() {
        let s = Scene::new(Dims::new(8, 8), 1.0);
        let (s, a) = s.place(rect(4, 4, 1.0), Pose::new(1, 1, 0, 16), false).unwrap();
        let (s, b) = s.place(rect(2, 2, 1.0), Pose::new(2, 2, 0, 16), false).unwrap();
        let s = s.remove(a).unwrap();
        assert_eq!(s.instance(b).unwrap().rest_height, 0.0);
        assert_eq!(s.remove(a).unwrap_err(), Error::UnknownId(a));
    }

    #[test]
    fn second_target_rejected() {
        let s = Scene::new(Dims::new(8, 8), 1.0);
        let (s, _) = s.place(rect(2, 2, 1.0), Pose::new(1, 1, 0, 16), true).unwrap();
        assert!(s.place(rect(2, 2, 1.0), Pose::new(4, 4, 0, 16), true).is_err());
    }
}
