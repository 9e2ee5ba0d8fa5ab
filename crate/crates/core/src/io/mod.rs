//! On-disk formats: TRAS rasters, model and table files, dataset
//! directories, PLY point clouds and fixed-colormap PNGs.

mod checkpoint;
mod dataset;
mod export;
mod tras;

pub use checkpoint::*;
pub use dataset::*;
pub use export::*;
pub use tras::*;

use std::fs;
use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
