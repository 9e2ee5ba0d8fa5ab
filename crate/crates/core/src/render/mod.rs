//! Lambertian RGB + NIR rendering of the (indented) membrane and
//! generation of probe calibration datasets.

mod dataset;
mod frame;
mod shading;

pub use dataset::*;
pub use frame::*;
pub use shading::*;
