//! Rectangular Poisson solve with a zero Dirichlet border via the type-I
//! discrete sine transform: the classic planar-sensor baseline.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{contract, Result};
use crate::integration::gradients::GradientField;
use crate::integration::solve::{DepthMap, DepthUnit};
use crate::raster::{Mask, RasterGrid};

/// DST-I along contiguous rows of length `n`: `X_k = Σ_j x_j sin(π (j+1)(k+1) / (n+1))`.
struct Dst1 {
    n: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Dst1 {
    fn new(planner: &mut FftPlanner<f64>, n: usize) -> Self {
        Self { n, fft: planner.plan_fft_forward(2 * (n + 1)) }
    }

    fn apply(&self, data: &mut [f64]) {
        let n = self.n;
        let m = 2 * (n + 1);
        let mut buf = vec![Complex::new(0.0, 0.0); m];
        for seq in data.chunks_exact_mut(n) {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (j, &v) in seq.iter().enumerate() {
                buf[j + 1] = Complex::new(v, 0.0);
                buf[m - 1 - j] = Complex::new(-v, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, out) in seq.iter_mut().enumerate() {
                *out = -0.5 * buf[k + 1].im;
            }
        }
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Solves `∇²z = ∂p/∂x + ∂q/∂y` on the full rectangle with `z = 0` on the
/// outermost pixel ring. Gradients outside the mask count as zero.
pub fn fast_poisson(grad: &GradientField, pixel_pitch: f64) -> Result<DepthMap> {
    let (w, h) = (grad.width, grad.height);
    if w < 3 || h < 3 {
        return Err(contract("fast Poisson needs at least a 3x3 raster"));
    }
    let g = |v: &[f64], i: usize| if grad.mask.bits[i] { v[i] } else { 0.0 };
    let (iw, ih) = (w - 2, h - 2);
    let mut f = vec![0.0; iw * ih];
    for r in 0..ih {
        for c in 0..iw {
            let idx = (r + 1) * w + (c + 1);
            let dpdx = 0.5 * (g(&grad.p, idx + 1) - g(&grad.p, idx - 1));
            let dqdy = 0.5 * (g(&grad.q, idx + w) - g(&grad.q, idx - w));
            f[r * iw + c] = dpdx + dqdy;
        }
    }

    let mut planner = FftPlanner::new();
    let dst_x = Dst1::new(&mut planner, iw);
    let dst_y = Dst1::new(&mut planner, ih);

    dst_x.apply(&mut f);
    let mut ft = transpose(&f, ih, iw);
    dst_y.apply(&mut ft);

    // ft is laid out [c][r]
    let eig = |k: usize, n: usize| 2.0 * (std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64).cos() - 2.0;
    for c in 0..iw {
        let ex = eig(c, iw);
        for r in 0..ih {
            ft[c * ih + r] /= ex + eig(r, ih);
        }
    }

    dst_y.apply(&mut ft);
    let mut z = transpose(&ft, iw, ih);
    dst_x.apply(&mut z);
    let norm = 4.0 / ((iw + 1) * (ih + 1)) as f64;

    let mut values = vec![0.0; w * h];
    for r in 0..ih {
        for c in 0..iw {
            values[(r + 1) * w + c + 1] = z[r * iw + c] * norm;
        }
    }
    let z = RasterGrid::new(w, h, values, Mask::new(w, h, true))?;
    Ok(DepthMap { z, unit: DepthUnit::Grid, pixel_pitch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dst_matches_direct_sum() {
        let n = 7;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).sin() + 0.2).collect();
        let mut planner = FftPlanner::new();
        let mut y = x.clone();
        Dst1::new(&mut planner, n).apply(&mut y);
        for (k, yk) in y.iter().enumerate() {
            let direct: f64 = x
                .iter()
                .enumerate()
                .map(|(j, xj)| xj * (std::f64::consts::PI * ((j + 1) * (k + 1)) as f64 / (n + 1) as f64).sin())
                .sum();
            assert!((yk - direct).abs() < 1e-12);
        }
    }

    /// Gradients whose central-difference divergence equals the five-point
    /// Laplacian of a known zero-border surface.
    #[test]
    fn recovers_zero_border_surface() {
        let (w, h) = (17, 13);
        let surf = |c: usize, r: usize| -> f64 {
            if c == 0 || r == 0 || c == w - 1 || r == h - 1 {
                0.0
            } else {
                ((c * r) as f64 * 0.07).sin() + 0.01 * c as f64
            }
        };
        let mut lap = vec![0.0; w * h];
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                lap[r * w + c] = surf(c + 1, r) + surf(c - 1, r) + surf(c, r + 1) + surf(c, r - 1) - 4.0 * surf(c, r);
            }
        }
        // p chosen so (p[c+1] - p[c-1]) / 2 = lap along x, q = 0: integrate
        // p[c+1] = p[c-1] + 2 lap[c] from p[0] = p[1] = 0 per row.
        let mut p = vec![0.0; w * h];
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                p[r * w + c + 1] = p[r * w + c - 1] + 2.0 * lap[r * w + c];
            }
        }
        let grad = GradientField::new(p, vec![0.0; w * h], Mask::new(w, h, true)).unwrap();
        let depth = fast_poisson(&grad, 1.0).unwrap();
        for r in 0..h {
            for c in 0..w {
                assert!((depth.z.get(c, r) - surf(c, r)).abs() < 1e-10, "({c},{r})");
            }
        }
    }
}
