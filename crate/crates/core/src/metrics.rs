//! Gradient and depth error metrics and the evaluation report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::integration::{DepthMap, GradientField};
use crate::raster::{Mask, NormalMap};

/// Mean absolute gradient errors. `total` is `gx + gy`, not a Euclidean norm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientMae {
    pub gx: f64,
    pub gy: f64,
    pub total: f64,
    pub pixels: usize,
}

impl GradientMae {
    fn from_sums(sx: f64, sy: f64, pixels: usize) -> Result<Self> {
        if pixels == 0 {
            return Err(Error::EmptyRegion("no pixels in the metric region".into()));
        }
        let (gx, gy) = (sx / pixels as f64, sy / pixels as f64);
        Ok(Self { gx, gy, total: gx + gy, pixels })
    }

    /// Pixel-weighted mean of several per-frame errors.
    pub fn pooled(parts: &[GradientMae]) -> Result<Self> {
        let pixels = parts.iter().map(|p| p.pixels).sum();
        let sx = parts.iter().map(|p| p.gx * p.pixels as f64).sum();
        let sy = parts.iter().map(|p| p.gy * p.pixels as f64).sum();
        Self::from_sums(sx, sy, pixels)
    }
}

fn region_of(masks: &[&Mask], region: &Mask) -> Result<Mask> {
    let mut out = region.clone();
    for m in masks {
        if !m.same_shape(region) {
            return Err(contract("metric rasters disagree in size"));
        }
        out = out.and(m)?;
    }
    Ok(out)
}

fn slopes(n: [f64; 3]) -> (f64, f64) {
    (-n[0] / n[2], -n[1] / n[2])
}

/// MAE of the slopes `(-nx/nz, -ny/nz)` over `region` ∩ both masks.
pub fn mae_gradients(estimated: &NormalMap, truth: &NormalMap, region: &Mask) -> Result<GradientMae> {
    let r = region_of(&[&estimated.mask, &truth.mask], region)?;
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0);
    for p in (0..r.bits.len()).filter(|&p| r.bits[p]) {
        let (ex, ey) = slopes(estimated.get(p));
        let (tx, ty) = slopes(truth.get(p));
        sx += (ex - tx).abs();
        sy += (ey - ty).abs();
        n += 1;
    }
    GradientMae::from_sums(sx, sy, n)
}

pub fn mae_gradient_field(estimated: &GradientField, truth: &NormalMap, region: &Mask) -> Result<GradientMae> {
    let r = region_of(&[&estimated.mask, &truth.mask], region)?;
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0);
    for p in (0..r.bits.len()).filter(|&p| r.bits[p]) {
        let (tx, ty) = slopes(truth.get(p));
        sx += (estimated.p[p] - tx).abs();
        sy += (estimated.q[p] - ty).abs();
        n += 1;
    }
    GradientMae::from_sums(sx, sy, n)
}

/// Mean absolute depth error in mm over `region` ∩ both masks.
pub fn mae_depth(estimated: &DepthMap, truth: &DepthMap, region: &Mask) -> Result<f64> {
    let r = region_of(&[&estimated.z.mask, &truth.z.mask], region)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for p in (0..r.bits.len()).filter(|&p| r.bits[p]) {
        sum += (estimated.mm(p) - truth.mm(p)).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyRegion("no pixels in the metric region".into()));
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub method: String,
    pub gx: f64,
    pub gy: f64,
    pub total: f64,
    /// The same errors times the pixel pitch (mm per pixel).
    pub gx_mm_per_px: f64,
    pub gy_mm_per_px: f64,
    pub total_mm_per_px: f64,
    pub pixels: usize,
}

impl GradientRow {
    pub fn new(method: impl Into<String>, mae: GradientMae, pixel_pitch: f64) -> Self {
        Self {
            method: method.into(),
            gx: mae.gx,
            gy: mae.gy,
            total: mae.total,
            gx_mm_per_px: mae.gx * pixel_pitch,
            gy_mm_per_px: mae.gy * pixel_pitch,
            total_mm_per_px: mae.total * pixel_pitch,
            pixels: mae.pixels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub method: String,
    /// Over every valid pixel, mm.
    pub mae_overall: f64,
    /// Over contact pixels only, mm.
    pub mae_contact: f64,
    pub samples: usize,
    pub clamped_normals: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub test_samples: usize,
    pub pixel_pitch: f64,
    pub gradients: Vec<GradientRow>,
    pub depth: Vec<DepthRow>,
    /// Wall-clock seconds per stage. Not compared by determinism checks.
    pub runtimes: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        for g in &self.gradients {
            if ![g.gx, g.gy, g.total].iter().all(|v| v.is_finite()) || (g.total - (g.gx + g.gy)).abs() > 1e-12 {
                return Err(contract(format!("gradient row {} is inconsistent", g.method)));
            }
        }
        if self.depth.iter().any(|d| !(d.mae_overall.is_finite() && d.mae_contact.is_finite())) {
            return Err(contract("depth metrics must be finite"));
        }
        Ok(())
    }

    /// Plain-text tables: gradient errors per estimator, depth errors per variant.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("test samples: {}\n\n", self.test_samples));
        s.push_str(&format!("{:<24} {:>12} {:>12} {:>12} {:>10}\n", "estimator", "Gx MAE", "Gy MAE", "Total MAE", "pixels"));
        for g in &self.gradients {
            s.push_str(&format!("{:<24} {:>12.6} {:>12.6} {:>12.6} {:>10}\n", g.method, g.gx, g.gy, g.total, g.pixels));
        }
        if !self.depth.is_empty() {
            s.push_str(&format!("\n{:<24} {:>16} {:>16}\n", "integration", "depth MAE (mm)", "contact (mm)"));
            for d in &self.depth {
                s.push_str(&format!("{:<24} {:>16.6} {:>16.6}\n", d.method, d.mae_overall, d.mae_contact));
            }
        }
        s
    }
}
