use std::fmt::Write as _;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use nalgebra::Vector3;

use crate::error::{contract, Result};
use crate::io::write_atomic;
use crate::raster::{Mask, NormalMap};

/// ASCII PLY with one `x y z` vertex per line, six decimals.
pub fn ply_string(points: &[Vector3<f64>]) -> String {
    let mut s = String::with_capacity(64 + 32 * points.len());
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in points {
        let _ = writeln!(s, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
    }
    s
}

pub fn write_ply(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    write_atomic(path, ply_string(points).as_bytes())
}

/// Anchor colours of the heatmap colormap (perceptually ordered, dark blue
/// through green to yellow), evenly spaced over `[0, 1]`.
pub const COLORMAP_ANCHORS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [72, 40, 120],
    [62, 74, 137],
    [49, 104, 142],
    [38, 130, 142],
    [31, 158, 137],
    [53, 183, 121],
    [109, 205, 89],
    [253, 231, 37],
];

/// 256-entry table, integer interpolation between the anchors.
pub fn colormap() -> [[u8; 3]; 256] {
    let segments = (COLORMAP_ANCHORS.len() - 1) as u32;
    std::array::from_fn(|i| {
        let pos = i as u32 * segments;
        let (seg, frac) = ((pos / 255).min(segments - 1) as usize, pos - (pos / 255).min(segments - 1) * 255);
        let (a, b) = (COLORMAP_ANCHORS[seg], COLORMAP_ANCHORS[seg + 1]);
        std::array::from_fn(|c| {
            let (a, b) = (a[c] as i32, b[c] as i32);
            (a + ((b - a) * frac as i32 + 127 * (b - a).signum()) / 255) as u8
        })
    })
}

/// 8-bit RGB image buffer, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Min-max scaled heatmap of `values` over `mask`; masked-out pixels are black.
pub fn scalar_heatmap(values: &[f64], mask: &Mask) -> Result<RgbImage> {
    if values.len() != mask.bits.len() {
        return Err(contract("heatmap values and mask disagree in size"));
    }
    let valid = || values.iter().zip(&mask.bits).filter(|(_, m)| **m).map(|(v, _)| *v);
    let lo = valid().fold(f64::INFINITY, f64::min);
    let hi = valid().fold(f64::NEG_INFINITY, f64::max);
    let table = colormap();
    let mut data = vec![0u8; 3 * values.len()];
    for (i, (v, m)) in values.iter().zip(&mask.bits).enumerate() {
        if !*m {
            continue;
        }
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        let idx = (t * 255.0).round().clamp(0.0, 255.0) as usize;
        data[3 * i..3 * i + 3].copy_from_slice(&table[idx]);
    }
    Ok(RgbImage { width: mask.width, height: mask.height, data })
}

/// `(n + 1) / 2` mapped to 0..255 per component; masked-out pixels are black.
pub fn normal_image(normals: &NormalMap) -> RgbImage {
    let mut data = vec![0u8; 3 * normals.nx.len()];
    for i in 0..normals.nx.len() {
        if normals.mask.bits[i] {
            for (c, v) in normals.get(i).iter().enumerate() {
                data[3 * i + c] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage { width: normals.width, height: normals.height, data }
}

pub fn encode_png_rgb8(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(&img.data, img.width as u32, img.height as u32, ExtendedColorType::Rgb8)?;
    Ok(out)
}

/// 16-bit grayscale PNG of values in `[0, 1]`.
pub fn encode_png_gray16(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(contract("image values disagree with its size"));
    }
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|v| (((v.clamp(0.0, 1.0)) * 65535.0).round() as u16).to_ne_bytes())
        .collect();
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(&bytes, width as u32, height as u32, ExtendedColorType::L16)?;
    Ok(out)
}

pub fn write_png_rgb8(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_png_rgb8(img)?)
}
