use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::raster::{GridSpec, Mask, NormalMap, RasterGrid};

/// Parametric shape of the undeformed sensor membrane (the CAD model).
///
/// Heights are in mm along the camera axis; the apex sits at `(0, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceKind {
    Plane,
    SphereCap { radius: f64, apex_height: f64 },
    /// Cylinder with its axis along `y`.
    CylinderSection { radius: f64, apex_height: f64 },
    EllipsoidCap { a: f64, b: f64, c: f64, apex_height: f64 },
}

impl SurfaceKind {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SurfaceKind::Plane => true,
            SurfaceKind::SphereCap { radius, apex_height }
            | SurfaceKind::CylinderSection { radius, apex_height } => {
                radius > 0.0 && apex_height.is_finite()
            }
            SurfaceKind::EllipsoidCap { a, b, c, apex_height } => {
                a > 0.0 && b > 0.0 && c > 0.0 && apex_height.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(contract(format!("invalid surface parameters: {self:?}")))
        }
    }

    /// Height `z0(x, y)` in mm.
    pub fn height(&self, x: f64, y: f64) -> Result<f64> {
        match *self {
            SurfaceKind::Plane => Ok(0.0),
            SurfaceKind::SphereCap { radius, apex_height } => {
                let s = domain_sqrt(radius * radius - x * x - y * y, x, y)?;
                Ok(apex_height - (radius - s))
            }
            SurfaceKind::CylinderSection { radius, apex_height } => {
                let s = domain_sqrt(radius * radius - x * x, x, y)?;
                Ok(apex_height - (radius - s))
            }
            SurfaceKind::EllipsoidCap { a, b, c, apex_height } => {
                let t = domain_sqrt(1.0 - (x / a).powi(2) - (y / b).powi(2), x, y)?;
                Ok(apex_height - c * (1.0 - t))
            }
        }
    }

    /// Analytic `(dz/dx, dz/dy)`.
    pub fn gradient(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        match *self {
            SurfaceKind::Plane => Ok((0.0, 0.0)),
            SurfaceKind::SphereCap { radius, .. } => {
                let s = domain_sqrt(radius * radius - x * x - y * y, x, y)?;
                Ok((-x / s, -y / s))
            }
            SurfaceKind::CylinderSection { radius, .. } => {
                let s = domain_sqrt(radius * radius - x * x, x, y)?;
                Ok((-x / s, 0.0))
            }
            SurfaceKind::EllipsoidCap { a, b, c, .. } => {
                let t = domain_sqrt(1.0 - (x / a).powi(2) - (y / b).powi(2), x, y)?;
                Ok((-c * x / (a * a * t), -c * y / (b * b * t)))
            }
        }
    }

    /// Camera-facing unit normal `normalize(-dz/dx, -dz/dy, 1)`.
    pub fn normal(&self, x: f64, y: f64) -> Result<[f64; 3]> {
        let (zx, zy) = self.gradient(x, y)?;
        Ok(normal_from_gradient(zx, zy))
    }
}

/// Unit normal of a height field with slopes `(zx, zy)`.
pub fn normal_from_gradient(zx: f64, zy: f64) -> [f64; 3] {
    let inv = 1.0 / (zx * zx + zy * zy + 1.0).sqrt();
    [-zx * inv, -zy * inv, inv]
}

fn domain_sqrt(arg: f64, x: f64, y: f64) -> Result<f64> {
    if arg > 0.0 {
        Ok(arg.sqrt())
    } else {
        Err(Error::Domain(format!("point ({x}, {y}) mm lies outside the surface domain")))
    }
}

/// CAD surface sampled on the sensor pixel grid.
///
/// `heights` caches `kind.height` at every valid pixel; pixels outside the
/// parametric domain are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSurface {
    pub kind: SurfaceKind,
    pub grid: GridSpec,
    pub heights: RasterGrid,
}

impl SensorSurface {
    pub fn new(kind: SurfaceKind, grid: GridSpec) -> Result<Self> {
        kind.validate()?;
        let mut values = vec![0.0; grid.len()];
        let mut mask = Mask::new(grid.width, grid.height, false);
        for row in 0..grid.height {
            for col in 0..grid.width {
                let (x, y) = grid.pixel_to_mm(col, row);
                if let Ok(z) = kind.height(x, y) {
                    values[row * grid.width + col] = z;
                    mask.set(col, row, true);
                }
            }
        }
        let heights = RasterGrid::new(grid.width, grid.height, values, mask)?;
        Ok(Self { kind, grid, heights })
    }

    pub fn valid_mask(&self) -> &Mask {
        &self.heights.mask
    }

    pub fn height(&self, x: f64, y: f64) -> Result<f64> {
        self.kind.height(x, y)
    }

    pub fn normal(&self, x: f64, y: f64) -> Result<[f64; 3]> {
        self.kind.normal(x, y)
    }

    /// Analytic normals at every valid pixel.
    pub fn normal_map(&self) -> NormalMap {
        let mut normals = NormalMap::flat(self.valid_mask().clone());
        for row in 0..self.grid.height {
            for col in 0..self.grid.width {
                let idx = row * self.grid.width + col;
                if !normals.mask.bits[idx] {
                    continue;
                }
                let (x, y) = self.grid.pixel_to_mm(col, row);
                // valid pixels are inside the domain by construction
                normals.set(idx, self.kind.normal(x, y).expect("valid pixel in domain"));
            }
        }
        normals
    }
}
