use crate::error::{contract, Result};
use crate::raster::{Mask, NormalMap};

pub const DEFAULT_NZ_FLOOR: f64 = 1e-3;

/// Depth slopes `p = dz/dx`, `q = dz/dy` per pixel (dimensionless).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub mask: Mask,
    /// Pixels whose `nz` was raised to the floor before division.
    pub clamped: usize,
}

impl GradientField {
    pub fn new(p: Vec<f64>, q: Vec<f64>, mask: Mask) -> Result<Self> {
        let n = mask.width * mask.height;
        if p.len() != n || q.len() != n {
            return Err(contract("gradient components must match the mask size"));
        }
        for i in 0..n {
            if mask.bits[i] && !(p[i].is_finite() && q[i].is_finite()) {
                return Err(contract(format!("non-finite gradient at index {i}")));
            }
        }
        Ok(Self { width: mask.width, height: mask.height, p, q, mask, clamped: 0 })
    }

    /// Samples `f(col, row) -> (p, q)` on every pixel of `mask`.
    pub fn from_fn(mask: Mask, f: impl Fn(usize, usize) -> (f64, f64)) -> Result<Self> {
        let (w, h) = (mask.width, mask.height);
        let mut p = vec![0.0; w * h];
        let mut q = vec![0.0; w * h];
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                if mask.bits[i] {
                    (p[i], q[i]) = f(col, row);
                }
            }
        }
        Self::new(p, q, mask)
    }
}

/// `p = -nx / nz`, `q = -ny / nz`, with `nz` raised to at least `nz_floor`.
pub fn normals_to_gradients(normals: &NormalMap, nz_floor: f64) -> Result<GradientField> {
    if !(nz_floor > 0.0) {
        return Err(contract("nz_floor must be positive"));
    }
    let n = normals.width * normals.height;
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut clamped = 0;
    for i in 0..n {
        if !normals.mask.bits[i] {
            continue;
        }
        let mut nz = normals.nz[i];
        if nz < nz_floor {
            nz = nz_floor;
            clamped += 1;
        }
        p[i] = -normals.nx[i] / nz;
        q[i] = -normals.ny[i] / nz;
    }
    let mut field = GradientField::new(p, q, normals.mask.clone())?;
    field.clamped = clamped;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SensorSurface, SurfaceKind};
    use crate::raster::GridSpec;

    fn one_pixel(n: [f64; 3]) -> NormalMap {
        let mut map = NormalMap::flat(Mask::new(1, 1, true));
        map.set(0, n);
        map
    }

    #[test]
    fn flat_and_45_degree() {
        let g = normals_to_gradients(&one_pixel([0.0, 0.0, 1.0]), DEFAULT_NZ_FLOOR).unwrap();
        assert_eq!((g.p[0], g.q[0]), (-0.0, -0.0));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let g = normals_to_gradients(&one_pixel([s, 0.0, s]), DEFAULT_NZ_FLOOR).unwrap();
        assert!((g.p[0] + 1.0).abs() < 1e-15);
        assert_eq!(g.q[0], -0.0);
    }

    #[test]
    fn grazing_normals_are_clamped_and_counted() {
        let g = normals_to_gradients(&one_pixel([1.0, 0.0, 0.0]), 1e-3).unwrap();
        assert_eq!(g.clamped, 1);
        assert_eq!(g.p[0], -1000.0);
    }

    #[test]
    fn sphere_cap_normals_give_surface_derivatives() {
        let grid = GridSpec::new(50, 40, 0.2).unwrap();
        let surf = SensorSurface::new(SurfaceKind::SphereCap { radius: 12.0, apex_height: 0.0 }, grid).unwrap();
        let g = normals_to_gradients(&surf.normal_map(), DEFAULT_NZ_FLOOR).unwrap();
        assert_eq!(g.clamped, 0);
        for row in 0..grid.height {
            for col in 0..grid.width {
                let i = row * grid.width + col;
                if !g.mask.bits[i] {
                    continue;
                }
                let (x, y) = grid.pixel_to_mm(col, row);
                let (zx, zy) = surf.kind.gradient(x, y).unwrap();
                assert!((g.p[i] - zx).abs() < 1e-9 && (g.q[i] - zy).abs() < 1e-9);
            }
        }
    }
}
