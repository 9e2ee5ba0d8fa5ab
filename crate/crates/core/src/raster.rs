//! Raster containers shared by every stage of the pipeline.
//!
//! All rasters are stored row-major: index `row * width + col`. Column index
//! maps to the surface `x` axis and row index to the surface `y` axis.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Pixel grid of the sensor surface: resolution and the mm size of one pixel.
///
/// The grid is centered on the optical axis, so pixel `(col, row)` sits at
/// `x = (col - (width - 1) / 2) * pitch`, `y = (row - (height - 1) / 2) * pitch`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, pixel_pitch: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(contract("grid dimensions must be positive"));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(contract(format!("pixel pitch must be positive, got {pixel_pitch}")));
        }
        Ok(Self { width, height, pixel_pitch })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_to_mm(&self, col: usize, row: usize) -> (f64, f64) {
        let x = (col as f64 - (self.width as f64 - 1.0) * 0.5) * self.pixel_pitch;
        let y = (row as f64 - (self.height as f64 - 1.0) * 0.5) * self.pixel_pitch;
        (x, y)
    }

    /// Continuous pixel coordinates of a point given in mm.
    pub fn mm_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x / self.pixel_pitch + (self.width as f64 - 1.0) * 0.5,
            y / self.pixel_pitch + (self.height as f64 - 1.0) * 0.5,
        )
    }

    /// Extent of the grid in mm as `(x_min, x_max, y_min, y_max)`, pixel centers.
    pub fn extent_mm(&self) -> (f64, f64, f64, f64) {
        let (x0, y0) = self.pixel_to_mm(0, 0);
        let (x1, y1) = self.pixel_to_mm(self.width - 1, self.height - 1);
        (x0, x1, y0, y1)
    }
}

/// Boolean raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, bits: vec![value; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(contract(format!(
                "mask has {} entries, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, bits })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if !self.same_shape(other) {
            return Err(contract("mask dimensions differ"));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Ok(Mask { width: self.width, height: self.height, bits })
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        if !self.same_shape(other) {
            return Err(contract("mask dimensions differ"));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect();
        Ok(Mask { width: self.width, height: self.height, bits })
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_shape(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn flip_horizontal(&self) -> Mask {
        let mut out = self.clone();
        for row in 0..self.height {
            for col in 0..self.width {
                out.set(col, row, self.get(self.width - 1 - col, row));
            }
        }
        out
    }
}

/// Scalar field with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub mask: Mask,
}

impl RasterGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>, mask: Mask) -> Result<Self> {
        if values.len() != width * height || mask.width != width || mask.height != height {
            return Err(contract("raster values and mask dimensions disagree"));
        }
        let grid = Self { width, height, values, mask };
        grid.check_finite()?;
        Ok(grid)
    }

    pub fn filled(width: usize, height: usize, value: f64, mask: Mask) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], mask)
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, (&v, &m)) in self.values.iter().zip(&self.mask.bits).enumerate() {
            if m && !v.is_finite() {
                return Err(contract(format!("non-finite raster value at index {i}")));
            }
        }
        Ok(())
    }

    pub fn flip_horizontal(&self) -> RasterGrid {
        let mut values = self.values.clone();
        for row in 0..self.height {
            for col in 0..self.width {
                values[row * self.width + col] = self.get(self.width - 1 - col, row);
            }
        }
        RasterGrid {
            width: self.width,
            height: self.height,
            values,
            mask: self.mask.flip_horizontal(),
        }
    }
}

/// Per-pixel unit normals. `nz > 0` at every valid pixel (facing the camera).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub nx: Vec<f64>,
    pub ny: Vec<f64>,
    pub nz: Vec<f64>,
    pub mask: Mask,
}

impl NormalMap {
    /// A map of `(0, 0, 1)` normals over `mask`.
    pub fn flat(mask: Mask) -> Self {
        let n = mask.width * mask.height;
        Self {
            width: mask.width,
            height: mask.height,
            nx: vec![0.0; n],
            ny: vec![0.0; n],
            nz: vec![1.0; n],
            mask,
        }
    }

    #[inline]
    pub fn get(&self, idx: usize) -> [f64; 3] {
        [self.nx[idx], self.ny[idx], self.nz[idx]]
    }

    #[inline]
    pub fn set(&mut self, idx: usize, n: [f64; 3]) {
        self.nx[idx] = n[0];
        self.ny[idx] = n[1];
        self.nz[idx] = n[2];
    }

    /// Checks unit norm within `tol` and `nz > 0` at every valid pixel.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.width * self.height;
        if self.nx.len() != n || self.ny.len() != n || self.nz.len() != n {
            return Err(contract("normal map component sizes disagree"));
        }
        for i in 0..n {
            if !self.mask.bits[i] {
                continue;
            }
            let [x, y, z] = self.get(i);
            let norm2 = x * x + y * y + z * z;
            if !((norm2.sqrt() - 1.0).abs() <= tol) || !(z > 0.0) {
                return Err(contract(format!(
                    "normal at index {i} is ({x}, {y}, {z}): not a camera-facing unit vector"
                )));
            }
        }
        Ok(())
    }

    pub fn flip_horizontal(&self) -> NormalMap {
        let mut out = self.clone();
        for row in 0..self.height {
            for col in 0..self.width {
                let dst = row * self.width + col;
                let src = row * self.width + (self.width - 1 - col);
                out.nx[dst] = -self.nx[src];
                out.ny[dst] = self.ny[src];
                out.nz[dst] = self.nz[src];
            }
        }
        out.mask = self.mask.flip_horizontal();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_centered() {
        let g = GridSpec::new(5, 3, 0.5).unwrap();
        assert_eq!(g.pixel_to_mm(2, 1), (0.0, 0.0));
        assert_eq!(g.pixel_to_mm(0, 0), (-1.0, -0.5));
        let (c, r) = g.mm_to_pixel(1.0, 0.5);
        assert_eq!((c, r), (4.0, 2.0));
    }

    #[test]
    fn rejects_bad_grid() {
        assert!(GridSpec::new(0, 3, 0.1).is_err());
        assert!(GridSpec::new(3, 3, 0.0).is_err());
    }

    #[test]
    fn raster_rejects_nan_in_mask_only() {
        let mut mask = Mask::new(2, 1, true);
        assert!(RasterGrid::new(2, 1, vec![f64::NAN, 1.0], mask.clone()).is_err());
        mask.set(0, 0, false);
        assert!(RasterGrid::new(2, 1, vec![f64::NAN, 1.0], mask).is_ok());
    }

    #[test]
    fn subset_and_difference() {
        let a = Mask::from_bits(2, 2, vec![true, false, false, false]).unwrap();
        let b = Mask::from_bits(2, 2, vec![true, true, false, false]).unwrap();
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
        assert!(a.and_not(&b).unwrap().is_empty());
    }
}
