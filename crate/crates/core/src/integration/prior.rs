use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::geometry::SensorSurface;
use crate::raster::{Mask, RasterGrid};

pub const DEFAULT_BAND_WIDTH: usize = 10;
pub const DEFAULT_PRIOR_WEIGHT: f64 = 1.0;

/// Soft depth constraints on selected pixels.
///
/// `entries` hold `(pixel index, depth)` with depth in grid units
/// (mm divided by the pixel pitch), the unit the Poisson solve works in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthPrior {
    pub entries: Vec<(usize, f64)>,
    pub weight: f64,
    pub band_width: usize,
}

/// True for pixels closer than `band_width` to the raster border.
#[inline]
pub fn in_edge_band(col: usize, row: usize, width: usize, height: usize, band_width: usize) -> bool {
    let d = col.min(row).min(width - 1 - col).min(height - 1 - row);
    d < band_width
}

/// Collects the valid pixels of the `band_width`-wide image border and pairs
/// each with the reference depth `source_mm / pixel_pitch`.
pub fn extract_boundary_prior(
    source_mm: &RasterGrid,
    mask: &Mask,
    band_width: usize,
    weight: f64,
    pixel_pitch: f64,
) -> Result<DepthPrior> {
    if band_width < 1 {
        return Err(contract("prior band width must be at least 1 pixel"));
    }
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(contract(format!("prior weight must be >= 0, got {weight}")));
    }
    if !(pixel_pitch > 0.0) {
        return Err(contract("pixel pitch must be positive"));
    }
    if source_mm.width != mask.width || source_mm.height != mask.height {
        return Err(contract("prior source and mask dimensions differ"));
    }
    let (w, h) = (mask.width, mask.height);
    let mut entries = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            if mask.bits[idx] && source_mm.mask.bits[idx] && in_edge_band(col, row, w, h, band_width) {
                entries.push((idx, source_mm.values[idx] / pixel_pitch));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyRegion(format!("{band_width}-pixel edge band holds no valid pixels")));
    }
    Ok(DepthPrior { entries, weight, band_width })
}

/// Edge prior taken from the undeformed CAD surface.
pub fn surface_edge_prior(surface: &SensorSurface, mask: &Mask, band_width: usize, weight: f64) -> Result<DepthPrior> {
    extract_boundary_prior(&surface.heights, mask, band_width, weight, surface.grid.pixel_pitch)
}
