use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{contract, Result};
use crate::geometry::CameraModel;
use crate::raster::{GridSpec, Mask, NormalMap, RasterGrid};
use crate::render::shading::{shade_all, RenderConfig, CHANNELS};

/// Six-channel intensity image `(R, G, B, NIR1, NIR2, NIR3)`, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct TactileFrame {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Vec<f64>>,
    pub mask: Mask,
}

impl TactileFrame {
    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.channels.len() != CHANNELS || self.channels.iter().any(|c| c.len() != n) {
            return Err(contract("frame must hold six rasters of equal size"));
        }
        if self.mask.width != self.width || self.mask.height != self.height {
            return Err(contract("frame mask dimensions disagree"));
        }
        for c in &self.channels {
            for (v, &m) in c.iter().zip(&self.mask.bits) {
                if m && !(0.0..=1.0).contains(v) {
                    return Err(contract(format!("intensity {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn pixel(&self, idx: usize) -> [f64; CHANNELS] {
        std::array::from_fn(|c| self.channels[c][idx])
    }

    pub fn flip_horizontal(&self) -> TactileFrame {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut out = c.clone();
                for row in 0..self.height {
                    for col in 0..self.width {
                        out[row * self.width + col] = c[row * self.width + self.width - 1 - col];
                    }
                }
                out
            })
            .collect();
        TactileFrame { width: self.width, height: self.height, channels, mask: self.mask.flip_horizontal() }
    }
}

/// Shades every valid pixel of a height field, then adds seeded Gaussian noise.
///
/// Pixel `(col, row)` sits at `(x, y, heights[col, row])` in mm, with `x, y`
/// from `grid`. Noise is drawn channel by channel in row-major pixel order.
pub fn render_frame(
    heights: &RasterGrid,
    normals: &NormalMap,
    grid: &GridSpec,
    camera: &CameraModel,
    config: &RenderConfig,
) -> Result<TactileFrame> {
    let (w, h) = (grid.width, grid.height);
    if heights.width != w || heights.height != h || normals.width != w || normals.height != h {
        return Err(contract("height and normal rasters must match the surface grid"));
    }
    if camera.width != w || camera.height != h {
        return Err(contract(format!(
            "camera resolution {}x{} differs from raster {}x{}",
            camera.width, camera.height, w, h
        )));
    }
    config.validate()?;
    let mask = heights.mask.and(&normals.mask)?;
    let response = config.channel_response();
    let mut channels = vec![vec![0.0; w * h]; CHANNELS];
    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            if !mask.bits[idx] {
                continue;
            }
            let (x, y) = grid.pixel_to_mm(col, row);
            let point = Vector3::new(x, y, heights.values[idx]);
            let [nx, ny, nz] = normals.get(idx);
            let vals = shade_all(&Vector3::new(nx, ny, nz), &point, config, &response)?;
            for c in 0..CHANNELS {
                channels[c][idx] = vals[c];
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    for (c, data) in channels.iter_mut().enumerate() {
        let sigma = config.noise_sigma[c];
        if sigma == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, sigma).map_err(|e| contract(e.to_string()))?;
        for (v, &m) in data.iter_mut().zip(&mask.bits) {
            if m {
                *v = (*v + dist.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }
    Ok(TactileFrame { width: w, height: h, channels, mask })
}
