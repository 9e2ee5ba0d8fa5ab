//! Per-pixel normal estimation: the MLP estimator with its training loop and
//! the intensity lookup-table baseline.

mod encoding;
mod estimate;
mod lut;
mod psnn;
mod train;

pub use encoding::*;
pub use estimate::*;
pub use lut::*;
pub use psnn::*;
pub use train::*;
