//! Synthetic curved-surface vision tactile sensor pipeline.
//!
//! Stages, in data-flow order:
//!
//! * [`geometry`]: camera model, parametric membrane surfaces, rigid sphere
//!   indentation and RANSAC alignment of the two camera views.
//! * [`render`]: Lambertian RGB + NIR rendering and calibration datasets.
//! * [`estimation`]: the per-pixel MLP normal estimator and the lookup-table baseline.
//! * [`integration`]: gradient field, masked Poisson system, edge depth priors and the solve.
//! * [`metrics`] and [`io`]: evaluation and on-disk formats.

pub mod error;
pub mod estimation;
pub mod geometry;
pub mod integration;
pub mod io;
pub mod metrics;
pub mod raster;
pub mod render;

pub use error::{Error, Result};
pub use raster::{GridSpec, Mask, NormalMap, RasterGrid};
