//! Overhead orthographic depth camera and modal/amodal masks.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{DepthImage, Dims, Mask};
use crate::scene::{ObjectId, Scene};

/// Camera height above the floor in meters.
pub const DEFAULT_CAMERA_HEIGHT: f64 = 0.8;

/// Straight-down orthographic camera.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    pub height: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            height: DEFAULT_CAMERA_HEIGHT,
        }
    }
}

/// What the policy sees: the visible target pixels plus depth.
///
/// The network input this stands in for stacks the mask over two copies of
/// the depth channel; only one copy is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedObservation {
    pub target_modal: Mask,
    pub depth: DepthImage,
}

impl AugmentedObservation {
    /// Channels in network order: mask, depth, depth.
    pub fn channels(&self) -> [Vec<f32>; 3] {
        let mask = self
            .target_modal
            .as_slice()
            .iter()
            .map(|&b| b as u8 as f32)
            .collect();
        let depth = self.depth.as_slice().to_vec();
        [mask, depth.clone(), depth]
    }
}

pub fn render_depth(scene: &Scene, camera: Camera) -> DepthImage {
    let values = scene
        .heightmap()
        .as_slice()
        .iter()
        .map(|&h| (camera.height - h) as f32)
        .collect();
    DepthImage::from_vec(scene.dims(), values).expect("heightmap matches scene dims")
}

/// Index (into `scene.instances()`) of the instance visible at each pixel.
///
/// The highest top wins; equal tops go to the later-placed instance.
pub fn visibility_map(scene: &Scene) -> Vec<Option<u32>> {
    let mut owner: Vec<Option<u32>> = vec![None; scene.dims().len()];
    let mut best = vec![f64::NEG_INFINITY; scene.dims().len()];
    for (k, inst) in scene.instances().iter().enumerate() {
        let top = inst.top();
        for &i in inst.amodal_indices() {
            let i = i as usize;
            if top >= best[i] {
                best[i] = top;
                owner[i] = Some(k as u32);
            }
        }
    }
    owner
}

pub fn modal_mask(scene: &Scene, id: ObjectId) -> Result<Mask> {
    let pos = scene.position(id)? as u32;
    Ok(modal_from_visibility(scene.dims(), &visibility_map(scene), pos))
}

pub(crate) fn modal_from_visibility(dims: Dims, owner: &[Option<u32>], pos: u32) -> Mask {
    let data = owner.iter().map(|&o| o == Some(pos)).collect();
    Mask::from_vec(dims, data).expect("visibility map matches scene dims")
}

/// Modal masks of every instance, in placement order.
pub fn modal_masks(scene: &Scene) -> Vec<Mask> {
    let owner = visibility_map(scene);
    (0..scene.len() as u32)
        .map(|k| modal_from_visibility(scene.dims(), &owner, k))
        .collect()
}

pub fn amodal_mask(scene: &Scene, id: ObjectId) -> Result<Mask> {
    let inst = scene.instance(id)?;
    Ok(Mask::from_indices(scene.dims(), inst.amodal_indices()))
}

pub fn observe(scene: &Scene, camera: Camera) -> Result<AugmentedObservation> {
    let target = scene.target().ok_or(Error::NoTarget)?;
    Ok(AugmentedObservation {
        target_modal: modal_mask(scene, target.id)?,
        depth: render_depth(scene, camera),
    })
}

/// Sidecar written next to a 16-bit depth PNG.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DepthPngMeta {
    /// Meters per gray level: `depth = value * scale`.
    pub scale: f64,
    pub width: usize,
    pub height: usize,
}

/// Writes `depth` as a 16-bit grayscale PNG plus a sidecar with the same
/// stem and a `.json` extension holding the scale factor.
pub fn write_depth_png(depth: &DepthImage, path: &Path) -> std::io::Result<DepthPngMeta> {
    let max = depth.as_slice().iter().copied().fold(0.0f32, f32::max) as f64;
    let scale = if max > 0.0 { max / u16::MAX as f64 } else { 1.0 };
    let mut bytes = Vec::with_capacity(depth.as_slice().len() * 2);
    for &d in depth.as_slice() {
        let v = (d as f64 / scale).round().clamp(0.0, u16::MAX as f64) as u16;
        bytes.extend(v.to_be_bytes());
    }
    let dims = depth.dims();
    write_png(path, dims, png::BitDepth::Sixteen, &bytes)?;
    let meta = DepthPngMeta {
        scale,
        width: dims.width,
        height: dims.height,
    };
    let sidecar = path.with_extension("json");
    std::fs::write(sidecar, serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

/// Writes a mask as an 8-bit PNG (0 or 255).
pub fn write_mask_png(mask: &Mask, path: &Path) -> std::io::Result<()> {
    let bytes: Vec<u8> = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png(path, mask.dims(), png::BitDepth::Eight, &bytes)
}

/// Writes values in `[0, 1]` as an 8-bit grayscale heatmap.
pub fn write_heatmap_png(values: &[f32], dims: Dims, path: &Path) -> std::io::Result<()> {
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_png(path, dims, png::BitDepth::Eight, &bytes)
}

fn write_png(path: &Path, dims: Dims, depth: png::BitDepth, bytes: &[u8]) -> std::io::Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, dims.width as u32, dims.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(std::io::Error::other)?;
    writer.write_image_data(bytes).map_err(std::io::Error::other)?;
    writer.finish().map_err(std::io::Error::other)
}
