//! Least-squares solve of the (augmented) Poisson system.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::integration::poisson::PoissonSystem;
use crate::raster::{Mask, RasterGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Sparse Cholesky of `AᵀA` with iterative refinement.
    Cholesky,
    /// Jacobi-preconditioned conjugate gradient on `AᵀA z = Aᵀb`.
    ConjugateGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Relative residual `‖Aᵀ(b - Az)‖ / ‖Aᵀb‖` to reach.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { method: SolverMethod::Cholesky, tolerance: 1e-10, max_iterations: 10_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthUnit {
    /// Depth measured in pixel steps, as produced by the Poisson solve.
    Grid,
    Millimeters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub z: RasterGrid,
    pub unit: DepthUnit,
    pub pixel_pitch: f64,
}

impl DepthMap {
    pub fn to_mm(&self) -> DepthMap {
        match self.unit {
            DepthUnit::Millimeters => self.clone(),
            DepthUnit::Grid => {
                let mut z = self.z.clone();
                z.values.iter_mut().for_each(|v| *v *= self.pixel_pitch);
                DepthMap { z, unit: DepthUnit::Millimeters, pixel_pitch: self.pixel_pitch }
            }
        }
    }

    /// Depth at a pixel in mm.
    pub fn mm(&self, idx: usize) -> f64 {
        match self.unit {
            DepthUnit::Millimeters => self.z.values[idx],
            DepthUnit::Grid => self.z.values[idx] * self.pixel_pitch,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Depth in grid units.
    pub depth: DepthMap,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `min ‖A z − b‖²` and scatters `z` back onto the pixel grid.
///
/// Connected mask components not touched by any non-zero prior row have a
/// free additive constant; each such component is returned with zero mean.
pub fn solve_depth(system: &PoissonSystem, options: &SolverOptions, pixel_pitch: f64) -> Result<Solution> {
    if !(options.tolerance > 0.0) {
        return Err(contract("solver tolerance must be positive"));
    }
    let n = system.n_unknowns();
    let components = components(system);
    let anchored = anchored_components(system, &components);
    // one pin per free component: the first unknown, pulled to 0
    let pins: Vec<usize> = first_unknowns(&components)
        .into_iter()
        .enumerate()
        .filter(|(c, _)| !anchored[*c])
        .map(|(_, u)| u)
        .collect();

    let mut atb = vec![0.0; n];
    system.apply_transpose(&system.rhs, &mut atb);
    let normal = NormalEquations { system, pins: &pins };

    let (mut z, iterations) = match options.method {
        SolverMethod::Cholesky => cholesky_solve(&normal, &atb, options.tolerance)?,
        SolverMethod::ConjugateGradient => pcg_solve(&normal, &atb, options)?,
    };
    let residual = normal.relative_residual(&z, &atb);
    if !(residual <= options.tolerance) {
        return Err(Error::Convergence { iterations, residual });
    }

    let n_comp = anchored.len();
    let mut sums = vec![0.0; n_comp];
    let mut counts = vec![0usize; n_comp];
    for (u, &c) in components.iter().enumerate() {
        sums[c] += z[u];
        counts[c] += 1;
    }
    for (u, &c) in components.iter().enumerate() {
        if !anchored[c] {
            z[u] -= sums[c] / counts[c] as f64;
        }
    }

    let mut values = vec![0.0; system.width * system.height];
    let mut bits = vec![false; system.width * system.height];
    for (u, &pix) in system.pixel_of_unknown.iter().enumerate() {
        values[pix] = z[u];
        bits[pix] = true;
    }
    let mask = Mask::from_bits(system.width, system.height, bits)?;
    let z = RasterGrid::new(system.width, system.height, values, mask)?;
    Ok(Solution { depth: DepthMap { z, unit: DepthUnit::Grid, pixel_pitch }, iterations, residual })
}

/// Connected component id (4-neighbourhood) of every unknown.
fn components(system: &PoissonSystem) -> Vec<usize> {
    let n = system.n_unknowns();
    let w = system.width;
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        stack.push(start);
        while let Some(u) = stack.pop() {
            let pix = system.pixel_of_unknown[u];
            let (col, row) = (pix % w, pix / w);
            let neighbours = [
                (row > 0).then(|| pix - w),
                (col > 0).then(|| pix - 1),
                (col + 1 < w).then(|| pix + 1),
                (row + 1 < system.height).then(|| pix + w),
            ];
            for nb in neighbours.into_iter().flatten() {
                if let Some(v) = system.unknown_of_pixel[nb] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
        }
        next += 1;
    }
    comp
}

fn anchored_components(system: &PoissonSystem, comp: &[usize]) -> Vec<bool> {
    let n_comp = comp.iter().max().map_or(0, |m| m + 1);
    let mut anchored = vec![false; n_comp];
    for r in system.poisson_rows..system.n_rows() {
        let (cols, vals) = system.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            if v != 0.0 {
                anchored[comp[c]] = true;
            }
        }
    }
    anchored
}

fn first_unknowns(comp: &[usize]) -> Vec<usize> {
    let n_comp = comp.iter().max().map_or(0, |m| m + 1);
    let mut first = vec![usize::MAX; n_comp];
    for (u, &c) in comp.iter().enumerate() {
        if first[c] == usize::MAX {
            first[c] = u;
        }
    }
    first
}

/// `M = AᵀA + Σ e_pin e_pinᵀ`, applied matrix-free.
struct NormalEquations<'a> {
    system: &'a PoissonSystem,
    pins: &'a [usize],
}

impl NormalEquations<'_> {
    fn apply(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        self.system.apply(x, scratch);
        self.system.apply_transpose(scratch, out);
        for &p in self.pins {
            out[p] += x[p];
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.system.n_unknowns()];
        for (&c, &v) in self.system.cols.iter().zip(&self.system.vals) {
            d[c] += v * v;
        }
        for &p in self.pins {
            d[p] += 1.0;
        }
        d
    }

    fn relative_residual(&self, z: &[f64], atb: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.system.n_rows()];
        let mut mz = vec![0.0; z.len()];
        self.apply(z, &mut scratch, &mut mz);
        let r = norm(&mz.iter().zip(atb).map(|(a, b)| b - a).collect::<Vec<_>>());
        let scale = norm(atb);
        if scale == 0.0 {
            // homogeneous system: report the absolute residual
            r
        } else {
            r / scale
        }
    }

    /// Lower triangle of `M` as sorted, duplicate-free triplets.
    fn lower_triplets(&self) -> Vec<Triplet<usize, usize, f64>> {
        let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(self.system.cols.len() * 3);
        for r in 0..self.system.n_rows() {
            let (cols, vals) = self.system.row(r);
            for (a, (&ci, &vi)) in cols.iter().zip(vals).enumerate() {
                for (&cj, &vj) in cols[..=a].iter().zip(&vals[..=a]) {
                    // cols ascending, so ci >= cj: (row ci, col cj) is in the lower triangle
                    raw.push((cj, ci, vi * vj));
                }
            }
        }
        for &p in self.pins {
            raw.push((p, p, 1.0));
        }
        raw.sort_by_key(|&(c, r, _)| (c, r));
        let mut out: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(raw.len() / 2);
        for (c, r, v) in raw {
            match out.last_mut() {
                Some(t) if t.row == r && t.col == c => t.val += v,
                _ => out.push(Triplet::new(r, c, v)),
            }
        }
        out
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cholesky_solve(eq: &NormalEquations, atb: &[f64], tol: f64) -> Result<(Vec<f64>, usize)> {
    let n = atb.len();
    let triplets = eq.lower_triplets();
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let llt = m.sp_cholesky(Side::Lower).map_err(|e| Error::Factorization(format!("{e:?}")))?;

    let rhs = Mat::<f64>::from_fn(n, 1, |i, _| atb[i]);
    let sol = llt.solve(&rhs);
    let mut z: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();

    let mut scratch = vec![0.0; eq.system.n_rows()];
    let mut mz = vec![0.0; n];
    let mut steps = 1;
    for _ in 0..3 {
        if eq.relative_residual(&z, atb) <= tol * 1e-2 {
            break;
        }
        eq.apply(&z, &mut scratch, &mut mz);
        let r = Mat::<f64>::from_fn(n, 1, |i, _| atb[i] - mz[i]);
        let dz = llt.solve(&r);
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += dz[(i, 0)];
        }
        steps += 1;
    }
    Ok((z, steps))
}

fn pcg_solve(eq: &NormalEquations, atb: &[f64], options: &SolverOptions) -> Result<(Vec<f64>, usize)> {
    let n = atb.len();
    let inv_diag: Vec<f64> = eq.diagonal().into_iter().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let scale = norm(atb);
    let mut x = vec![0.0; n];
    if scale == 0.0 {
        return Ok((x, 0));
    }
    let mut r = atb.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut scratch = vec![0.0; eq.system.n_rows()];
    let mut mp = vec![0.0; n];
    for it in 1..=options.max_iterations {
        eq.apply(&p, &mut scratch, &mut mp);
        let pmp: f64 = p.iter().zip(&mp).map(|(a, b)| a * b).sum();
        if pmp <= 0.0 {
            return Err(Error::Convergence { iterations: it, residual: norm(&r) / scale });
        }
        let alpha = rz / pmp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * mp[i];
        }
        if norm(&r) / scale <= options.tolerance {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Convergence { iterations: options.max_iterations, residual: norm(&r) / scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integration::gradients::GradientField;
    use crate::integration::poisson::{assemble_poisson, augment_with_prior};
    use crate::integration::prior::{in_edge_band, DepthPrior};

    fn band_prior(w: usize, h: usize, band: usize, f: impl Fn(f64, f64) -> f64) -> DepthPrior {
        let mut entries = Vec::new();
        for row in 0..h {
            for col in 0..w {
                if in_edge_band(col, row, w, h, band) {
                    entries.push((row * w + col, f(col as f64, row as f64)));
                }
            }
        }
        DepthPrior { entries, weight: 1.0, band_width: band }
    }

    fn max_error(sol: &Solution, f: impl Fn(f64, f64) -> f64) -> f64 {
        let z = &sol.depth.z;
        let mut worst: f64 = 0.0;
        for row in 0..z.height {
            for col in 0..z.width {
                if z.mask.get(col, row) {
                    worst = worst.max((z.get(col, row) - f(col as f64, row as f64)).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn plane_with_prior_is_exact() {
        let (w, h) = (40, 30);
        let plane = |x: f64, y: f64| 0.3 * x - 0.2 * y + 4.0;
        let grad = GradientField::from_fn(crate::raster::Mask::new(w, h, true), |_, _| (0.3, -0.2)).unwrap();
        let sys = augment_with_prior(&assemble_poisson(&grad).unwrap(), &band_prior(w, h, 10, plane)).unwrap();
        for method in [SolverMethod::Cholesky, SolverMethod::ConjugateGradient] {
            let opts = SolverOptions { method, ..SolverOptions::default() };
            let sol = solve_depth(&sys, &opts, 1.0).unwrap();
            assert!(max_error(&sol, plane) < 1e-6, "{method:?}");
        }
    }

    #[test]
    fn no_prior_gives_zero_mean() {
        let mut mask = crate::raster::Mask::new(12, 9, true);
        mask.set(3, 3, false);
        let grad = GradientField::from_fn(mask, |c, r| ((c as f64 * 0.37).sin(), (r as f64 * 0.11).cos())).unwrap();
        let sys = assemble_poisson(&grad).unwrap();
        let sol = solve_depth(&sys, &SolverOptions::default(), 1.0).unwrap();
        let vals: Vec<f64> = (0..sol.depth.z.values.len())
            .filter(|&i| sol.depth.z.mask.bits[i])
            .map(|i| sol.depth.z.values[i])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn disconnected_components_are_each_centred() {
        let mut mask = crate::raster::Mask::new(9, 4, true);
        for row in 0..4 {
            mask.set(4, row, false);
        }
        let grad = GradientField::from_fn(mask, |c, _| (c as f64 * 0.1, 0.05)).unwrap();
        let sys = assemble_poisson(&grad).unwrap();
        let sol = solve_depth(&sys, &SolverOptions::default(), 1.0).unwrap();
        for cols in [0..4, 5..9] {
            let mut sum = 0.0;
            for row in 0..4 {
                for col in cols.clone() {
                    sum += sol.depth.z.get(col, row);
                }
            }
            assert!(sum.abs() < 1e-9);
        }
    }

    #[test]
    fn cholesky_and_cg_agree_on_noisy_field() {
        let (w, h) = (24, 20);
        let grad = GradientField::from_fn(crate::raster::Mask::new(w, h, true), |c, r| {
            (((c * 7 + r * 3) % 11) as f64 * 0.01, ((c * 5 + r) % 13) as f64 * -0.01)
        })
        .unwrap();
        let prior = band_prior(w, h, 3, |x, y| 0.1 * x + 0.05 * y);
        let sys = augment_with_prior(&assemble_poisson(&grad).unwrap(), &prior).unwrap();
        let a = solve_depth(&sys, &SolverOptions::default(), 1.0).unwrap();
        let b = solve_depth(&sys, &SolverOptions { method: SolverMethod::ConjugateGradient, ..Default::default() }, 1.0)
            .unwrap();
        for (x, y) in a.depth.z.values.iter().zip(&b.depth.z.values) {
            assert!((x - y).abs() < 1e-7, "{x} vs {y}");
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let (w, h) = (30, 30);
        let grad = GradientField::from_fn(crate::raster::Mask::new(w, h, true), |c, r| (c as f64 * 0.01, r as f64 * 0.02))
            .unwrap();
        let sys = augment_with_prior(&assemble_poisson(&grad).unwrap(), &band_prior(w, h, 1, |_, _| 0.0)).unwrap();
        let opts = SolverOptions { method: SolverMethod::ConjugateGradient, tolerance: 1e-10, max_iterations: 5 };
        assert!(matches!(solve_depth(&sys, &opts, 1.0), Err(Error::Convergence { iterations: 5, .. })));
    }

    #[test]
    fn solve_is_bit_deterministic() {
        let (w, h) = (20, 16);
        let grad =
            GradientField::from_fn(crate::raster::Mask::new(w, h, true), |c, r| ((c as f64).sin(), (r as f64).cos())).unwrap();
        let sys = augment_with_prior(&assemble_poisson(&grad).unwrap(), &band_prior(w, h, 2, |_, _| 1.0)).unwrap();
        let a = solve_depth(&sys, &SolverOptions::default(), 0.1).unwrap();
        let b = solve_depth(&sys, &SolverOptions::default(), 0.1).unwrap();
        assert_eq!(a, b);
    }
}
