use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, SensorSurface, SphereProbe, SurfaceKind};
use crate::integration::surface_edge_prior;
use crate::io::tras::TrasRaster;
use crate::raster::{GridSpec, Mask, NormalMap, RasterGrid};
use crate::render::{CalibrationDataset, CalibrationSample, DatasetParams, RenderConfig, Split, TactileFrame};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const METADATA_FILE: &str = "metadata.json";

/// Channel layout of every sample raster.
pub const SAMPLE_CHANNELS: [&str; 11] =
    ["r", "g", "b", "nir1", "nir2", "nir3", "normal_x", "normal_y", "normal_z", "height_mm", "contact"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub index: usize,
    pub split: Split,
    pub probe: SphereProbe,
    pub file: String,
    pub contact_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub format_version: u32,
    pub surface: SurfaceKind,
    pub grid: GridSpec,
    pub camera: CameraModel,
    pub render: RenderConfig,
    pub params: DatasetParams,
    pub channels: Vec<String>,
    pub samples: Vec<SampleMeta>,
}

pub fn sample_file_name(index: usize) -> String {
    format!("sample_{index:03}.tras")
}

pub fn sample_to_raster(s: &CalibrationSample) -> TrasRaster {
    let mut channels = s.frame.channels.clone();
    channels.push(s.gt_normals.nx.clone());
    channels.push(s.gt_normals.ny.clone());
    channels.push(s.gt_normals.nz.clone());
    channels.push(s.heights.values.clone());
    channels.push(s.contact.bits.iter().map(|&b| b as u8 as f64).collect());
    TrasRaster { width: s.frame.width, height: s.frame.height, channels, mask: Some(s.frame.mask.clone()) }
}

/// Writes `metadata.json` and one raster per sample into a temp directory,
/// then renames it to `dir`, replacing any previous dataset there.
pub fn save_dataset(dir: &Path, ds: &CalibrationDataset) -> Result<()> {
    let meta = DatasetMetadata {
        format_version: DATASET_FORMAT_VERSION,
        surface: ds.surface.kind.clone(),
        grid: ds.surface.grid,
        camera: ds.camera.clone(),
        render: ds.render.clone(),
        params: ds.params.clone(),
        channels: SAMPLE_CHANNELS.iter().map(|s| s.to_string()).collect(),
        samples: ds
            .samples
            .iter()
            .map(|s| SampleMeta {
                index: s.index,
                split: s.split,
                probe: s.probe,
                file: sample_file_name(s.index),
                contact_pixels: s.contact.count(),
            })
            .collect(),
    };
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp)?;
    for (s, m) in ds.samples.iter().zip(&meta.samples) {
        fs::write(tmp.join(&m.file), sample_to_raster(s).to_bytes()?)?;
    }
    fs::write(tmp.join(METADATA_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

pub fn load_metadata(dir: &Path) -> Result<DatasetMetadata> {
    let text = fs::read_to_string(dir.join(METADATA_FILE))?;
    let meta: DatasetMetadata =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", METADATA_FILE)))?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", meta.format_version)));
    }
    Ok(meta)
}

pub fn load_sample(dir: &Path, meta: &DatasetMetadata, sample: &SampleMeta, surface: &SensorSurface) -> Result<CalibrationSample> {
    let r = TrasRaster::from_bytes(&fs::read(dir.join(&sample.file))?)?;
    let (w, h) = (meta.grid.width, meta.grid.height);
    if r.width != w || r.height != h || r.channels.len() != SAMPLE_CHANNELS.len() {
        return Err(Error::Format(format!("{} does not match the dataset layout", sample.file)));
    }
    let mask = r.mask.clone().ok_or_else(|| Error::Format(format!("{} has no mask", sample.file)))?;
    let mut ch = r.channels.into_iter();
    let frame = TactileFrame { width: w, height: h, channels: ch.by_ref().take(6).collect(), mask: mask.clone() };
    let (nx, ny, nz) = (ch.next().expect("11 channels"), ch.next().expect("11 channels"), ch.next().expect("11 channels"));
    let gt_normals = NormalMap { width: w, height: h, nx, ny, nz, mask: mask.clone() };
    let heights = RasterGrid::new(w, h, ch.next().expect("11 channels"), mask.clone())
        .map_err(|e| Error::Format(e.to_string()))?;
    let contact = Mask::from_bits(w, h, ch.next().expect("11 channels").iter().map(|v| *v != 0.0).collect())?;
    frame.validate().map_err(|e| Error::Format(format!("{}: {e}", sample.file)))?;
    gt_normals.validate(1e-5).map_err(|e| Error::Format(format!("{}: {e}", sample.file)))?;
    let prior = surface_edge_prior(surface, surface.valid_mask(), meta.params.band_width, meta.params.prior_weight)?;
    Ok(CalibrationSample { index: sample.index, split: sample.split, probe: sample.probe, frame, gt_normals, contact, heights, prior })
}

pub fn load_dataset(dir: &Path) -> Result<CalibrationDataset> {
    let meta = load_metadata(dir)?;
    let surface = SensorSurface::new(meta.surface.clone(), meta.grid)?;
    let samples = meta.samples.iter().map(|s| load_sample(dir, &meta, s, &surface)).collect::<Result<Vec<_>>>()?;
    Ok(CalibrationDataset { surface, camera: meta.camera, render: meta.render, params: meta.params, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::generate_calibration_dataset;

    fn small() -> CalibrationDataset {
        let grid = GridSpec::new(48, 36, 0.25).unwrap();
        let surf = SensorSurface::new(SurfaceKind::SphereCap { radius: 30.0, apex_height: 0.0 }, grid).unwrap();
        let cam = CameraModel::centered(300.0, 300.0, 48, 36).unwrap();
        let mut render = RenderConfig::default();
        render.noise_sigma = [0.01; 6];
        let params = DatasetParams { n_samples: 4, band_width: 2, seed: 5, ..Default::default() };
        generate_calibration_dataset(&surf, &cam, &render, &params).unwrap()
    }

    #[test]
    fn round_trip_within_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds");
        let ds = small();
        save_dataset(&path, &ds).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.samples.len(), 4);
        assert_eq!(back.params, ds.params);
        assert_eq!(back.surface, ds.surface);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.contact, b.contact);
            assert_eq!(a.split, b.split);
            assert_eq!(a.prior, b.prior);
            for (ca, cb) in a.frame.channels.iter().zip(&b.frame.channels) {
                assert!(ca.iter().zip(cb).all(|(x, y)| (x - y).abs() < 1e-6));
            }
            assert!(a.heights.values.iter().zip(&b.heights.values).all(|(x, y)| (x - y).abs() < 1e-5));
        }
    }

    #[test]
    fn rewriting_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a"), dir.path().join("b"));
        let ds = small();
        save_dataset(&p1, &ds).unwrap();
        save_dataset(&p2, &ds).unwrap();
        save_dataset(&p2, &ds).unwrap();
        for name in [METADATA_FILE.to_string(), sample_file_name(0), sample_file_name(3)] {
            assert_eq!(fs::read(p1.join(&name)).unwrap(), fs::read(p2.join(&name)).unwrap());
        }
        assert_eq!(fs::read_dir(&p2).unwrap().count(), 5);
    }

    #[test]
    fn missing_or_corrupt_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(&dir.path().join("nope")), Err(Error::Io(_))));
        let path = dir.path().join("ds");
        save_dataset(&path, &small()).unwrap();
        fs::write(path.join(sample_file_name(1)), b"TRASjunk").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
    }
}
