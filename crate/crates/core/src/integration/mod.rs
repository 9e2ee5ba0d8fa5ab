//! Normal map to depth: gradients, masked Poisson assembly, edge depth
//! priors, the least-squares solve and point-cloud conversion.

mod fast_poisson;
mod gradients;
mod poisson;
mod prior;
mod solve;

pub use fast_poisson::fast_poisson;
pub use gradients::*;
pub use poisson::*;
pub use prior::*;
pub use solve::*;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster::NormalMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMethod {
    /// Masked Poisson least squares, optionally with a depth prior.
    Poisson,
    /// Rectangular zero-border sine-transform solve; ignores any prior.
    FastPoisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationOptions {
    pub method: IntegrationMethod,
    pub nz_floor: f64,
    pub solver: SolverOptions,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self { method: IntegrationMethod::Poisson, nz_floor: DEFAULT_NZ_FLOOR, solver: SolverOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Integrated {
    /// Depth in grid units.
    pub depth: DepthMap,
    pub clamped_normals: usize,
    pub iterations: usize,
    pub residual: f64,
}

/// Normals -> gradients -> Poisson system (+ prior rows) -> depth.
pub fn integrate_normals(
    normals: &NormalMap,
    prior: Option<&DepthPrior>,
    pixel_pitch: f64,
    options: &IntegrationOptions,
) -> Result<Integrated> {
    let grad = normals_to_gradients(normals, options.nz_floor)?;
    integrate_gradients(&grad, prior, pixel_pitch, options)
}

pub fn integrate_gradients(
    grad: &GradientField,
    prior: Option<&DepthPrior>,
    pixel_pitch: f64,
    options: &IntegrationOptions,
) -> Result<Integrated> {
    match options.method {
        IntegrationMethod::FastPoisson => Ok(Integrated {
            depth: fast_poisson(grad, pixel_pitch)?,
            clamped_normals: grad.clamped,
            iterations: 0,
            residual: 0.0,
        }),
        IntegrationMethod::Poisson => {
            let mut system = assemble_poisson(grad)?;
            if let Some(prior) = prior {
                system = augment_with_prior(&system, prior)?;
            }
            let sol = solve_depth(&system, &options.solver, pixel_pitch)?;
            Ok(Integrated {
                depth: sol.depth,
                clamped_normals: grad.clamped,
                iterations: sol.iterations,
                residual: sol.residual,
            })
        }
    }
}

/// One point per valid pixel: `(x, y, z)` in mm with `x = col * pitch`, `y = row * pitch`.
pub fn depth_to_pointcloud(depth: &DepthMap, pixel_pitch: f64) -> Vec<Vector3<f64>> {
    let z = &depth.z;
    let scale = match depth.unit {
        DepthUnit::Grid => pixel_pitch,
        DepthUnit::Millimeters => 1.0,
    };
    let mut points = Vec::with_capacity(z.mask.count());
    for row in 0..z.height {
        for col in 0..z.width {
            if z.mask.get(col, row) {
                points.push(Vector3::new(col as f64 * pixel_pitch, row as f64 * pixel_pitch, z.get(col, row) * scale));
            }
        }
    }
    points
}
