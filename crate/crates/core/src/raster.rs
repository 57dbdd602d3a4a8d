//! Single-channel rasters on the workspace pixel grid.
//!
//! All rasters are stored row-major: pixel `(x, y)` lives at index
//! `y * width + x`.

use crate::error::{Error, Result};

/// Workspace grid dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub(crate) fn check_same(&self, other: Dims) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: *self,
                found: other,
            })
        }
    }
}

/// Binary raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    dims: Dims,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![false; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::InvalidRaster(format!(
                "{} values for a {}x{} mask",
                data.len(),
                dims.width,
                dims.height
            )));
        }
        Ok(Self { dims, data })
    }

    /// Builds a mask from set pixel indices.
    pub fn from_indices(dims: Dims, indices: &[u32]) -> Self {
        let mut mask = Self::empty(dims);
        for &i in indices {
            mask.data[i as usize] = true;
        }
        mask
    }

    /// Parses rows of `#` (set) and `.` (clear). Used by fixtures and tests.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(width * height);
        for row in rows {
            if row.len() != width {
                return Err(Error::InvalidRaster("ragged mask rows".into()));
            }
            for c in row.chars() {
                match c {
                    '#' => data.push(true),
                    '.' => data.push(false),
                    other => {
                        return Err(Error::InvalidRaster(format!("unexpected mask char {other:?}")))
                    }
                }
            }
        }
        Ok(Self {
            dims: Dims::new(width, height),
            data,
        })
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[self.dims.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let i = self.dims.index(x, y);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Row-major indices of set pixels.
    pub fn indices(&self) -> Vec<u32> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i as u32))
            .collect()
    }

    pub fn intersection_count(&self, other: &Mask) -> Result<usize> {
        self.dims.check_same(other.dims)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn union_count(&self, other: &Mask) -> Result<usize> {
        self.dims.check_same(other.dims)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a || b)
            .count())
    }

    /// Intersection over union. Two empty masks have IoU 1 by convention.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        let union = self.union_count(other)?;
        if union == 0 {
            return Ok(1.0);
        }
        Ok(self.intersection_count(other)? as f64 / union as f64)
    }

    pub fn is_subset_of(&self, other: &Mask) -> Result<bool> {
        self.dims.check_same(other.dims)?;
        Ok(self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b))
    }

    /// Bytes with one `u8` (0 or 1) per pixel.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&b| b as u8).collect()
    }
}

/// Per-pixel top-surface height in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    dims: Dims,
    values: Vec<f64>,
}

impl HeightField {
    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            values: vec![value; dims.len()],
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[self.dims.index(x, y)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest value over a set of pixel indices, or `None` for an empty set.
    pub fn max_over(&self, indices: &[u32]) -> Option<f64> {
        indices
            .iter()
            .map(|&i| self.values[i as usize])
            .reduce(f64::max)
    }
}

/// Depth in meters from the camera plane.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    dims: Dims,
    values: Vec<f32>,
}

impl DepthImage {
    pub fn from_vec(dims: Dims, values: Vec<f32>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::InvalidRaster(format!(
                "{} values for a {}x{} depth image",
                values.len(),
                dims.width,
                dims.height
            )));
        }
        Ok(Self { dims, values })
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[self.dims.index(x, y)]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }
}
