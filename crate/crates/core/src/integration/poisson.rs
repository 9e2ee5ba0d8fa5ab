//! Masked five-point Poisson system and its depth-prior augmentation.

use crate::error::{contract, Error, Result};
use crate::integration::gradients::GradientField;
use crate::integration::prior::DepthPrior;

/// Sparse least-squares system `A z = b` over the depths of the valid pixels.
///
/// Rows are stored CSR-style with ascending column indices. The first
/// `poisson_rows` rows are the Laplacian equations, one per valid pixel in
/// row-major order; any further rows are prior constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonSystem {
    pub width: usize,
    pub height: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Pixel index -> unknown index.
    pub unknown_of_pixel: Vec<Option<usize>>,
    /// Unknown index -> pixel index.
    pub pixel_of_unknown: Vec<usize>,
    pub poisson_rows: usize,
}

impl PoissonSystem {
    pub fn n_unknowns(&self) -> usize {
        self.pixel_of_unknown.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *o = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// `Aᵀ y`.
    pub fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &yr) in y.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * yr;
            }
        }
    }

    fn push_row(&mut self, entries: &[(usize, f64)], rhs: f64) {
        for &(c, v) in entries {
            self.cols.push(c);
            self.vals.push(v);
        }
        self.row_ptr.push(self.cols.len());
        self.rhs.push(rhs);
    }
}

/// Builds one Laplacian equation per valid pixel.
///
/// Left-hand side: `sum over valid 4-neighbours n of (z_n - z_c)`, i.e. the
/// five-point stencil with the centre weight reduced to the number of valid
/// neighbours (homogeneous Neumann at the mask boundary).
///
/// Right-hand side: the matching sum of edge slopes, each taken as the mean
/// of the two endpoint gradients. At interior pixels this is exactly the
/// central-difference divergence `(p[i+1] - p[i-1]) / 2 + (q[j+1] - q[j-1]) / 2`.
pub fn assemble_poisson(grad: &GradientField) -> Result<PoissonSystem> {
    let (w, h) = (grad.width, grad.height);
    let mask = &grad.mask.bits;
    let mut unknown_of_pixel = vec![None; w * h];
    let mut pixel_of_unknown = Vec::new();
    for (idx, &valid) in mask.iter().enumerate() {
        if valid {
            unknown_of_pixel[idx] = Some(pixel_of_unknown.len());
            pixel_of_unknown.push(idx);
        }
    }
    if pixel_of_unknown.is_empty() {
        return Err(Error::EmptyRegion("gradient mask has no valid pixels".into()));
    }

    let n = pixel_of_unknown.len();
    let mut sys = PoissonSystem {
        width: w,
        height: h,
        row_ptr: Vec::with_capacity(n + 1),
        cols: Vec::with_capacity(5 * n),
        vals: Vec::with_capacity(5 * n),
        rhs: Vec::with_capacity(n),
        unknown_of_pixel,
        pixel_of_unknown,
        poisson_rows: n,
    };
    sys.row_ptr.push(0);

    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(5);
    for u in 0..n {
        let idx = sys.pixel_of_unknown[u];
        let (col, row) = (idx % w, idx / w);
        let (pc, qc) = (grad.p[idx], grad.q[idx]);
        let up = (row > 0).then(|| idx - w).and_then(|i| sys.unknown_of_pixel[i].map(|k| (i, k)));
        let left = (col > 0).then(|| idx - 1).and_then(|i| sys.unknown_of_pixel[i].map(|k| (i, k)));
        let right = (col + 1 < w).then(|| idx + 1).and_then(|i| sys.unknown_of_pixel[i].map(|k| (i, k)));
        let down = (row + 1 < h).then(|| idx + w).and_then(|i| sys.unknown_of_pixel[i].map(|k| (i, k)));

        entries.clear();
        let mut degree = 0.0;
        let mut b = 0.0;
        if let Some((i, k)) = up {
            entries.push((k, 1.0));
            degree += 1.0;
            b -= 0.5 * (qc + grad.q[i]);
        }
        if let Some((i, k)) = left {
            entries.push((k, 1.0));
            degree += 1.0;
            b -= 0.5 * (pc + grad.p[i]);
        }
        entries.push((u, 0.0));
        let centre = entries.len() - 1;
        if let Some((i, k)) = right {
            entries.push((k, 1.0));
            degree += 1.0;
            b += 0.5 * (pc + grad.p[i]);
        }
        if let Some((i, k)) = down {
            entries.push((k, 1.0));
            degree += 1.0;
            b += 0.5 * (qc + grad.q[i]);
        }
        entries[centre].1 = -degree;
        sys.push_row(&entries, b);
    }
    Ok(sys)
}

/// Appends `sqrt(λ) z_k = sqrt(λ) z_prior` for every prior entry.
pub fn augment_with_prior(system: &PoissonSystem, prior: &DepthPrior) -> Result<PoissonSystem> {
    if !(prior.weight >= 0.0 && prior.weight.is_finite()) {
        return Err(contract("prior weight must be finite and >= 0"));
    }
    let s = prior.weight.sqrt();
    let mut out = system.clone();
    for &(pixel, z) in &prior.entries {
        let unknown = system
            .unknown_of_pixel
            .get(pixel)
            .copied()
            .flatten()
            .ok_or_else(|| contract(format!("prior pixel {pixel} is not an unknown of the system")))?;
        if !z.is_finite() {
            return Err(contract(format!("non-finite prior depth at pixel {pixel}")));
        }
        out.push_row(&[(unknown, s)], s * z);
    }
    Ok(out)
}
