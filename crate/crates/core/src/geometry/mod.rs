//! Camera model, CAD sensor surfaces, probe indentation and cross-view alignment.

mod camera;
mod probe;
mod ransac;
mod surface;

pub use camera::*;
pub use probe::*;
pub use ransac::*;
pub use surface::*;
