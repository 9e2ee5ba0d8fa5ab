use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::geometry::{indent_surface, CameraModel, IndentOptions, SensorSurface, SphereProbe, DEFAULT_PROBE_RADIUS};
use crate::integration::{surface_edge_prior, DepthPrior, DEFAULT_BAND_WIDTH, DEFAULT_PRIOR_WEIGHT};
use crate::raster::{Mask, NormalMap, RasterGrid};
use crate::render::frame::{render_frame, TactileFrame};
use crate::render::shading::RenderConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSample {
    pub index: usize,
    pub split: Split,
    pub probe: SphereProbe,
    pub frame: TactileFrame,
    pub gt_normals: NormalMap,
    pub contact: Mask,
    /// Deformed membrane heights in mm (depth ground truth).
    pub heights: RasterGrid,
    pub prior: DepthPrior,
}

impl CalibrationSample {
    /// Contact mask, restricted to the frame's valid pixels.
    pub fn contact_mask(&self) -> Mask {
        self.contact.and(&self.frame.mask).expect("sample rasters share dimensions")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationDataset {
    pub surface: SensorSurface,
    pub camera: CameraModel,
    pub render: RenderConfig,
    pub params: DatasetParams,
    pub samples: Vec<CalibrationSample>,
}

impl CalibrationDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CalibrationSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// Probe sampling and labelling parameters for [`generate_calibration_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetParams {
    pub n_samples: usize,
    pub probe_radius: f64,
    /// Indentation depth range in mm, sampled uniformly per probe.
    pub indentation_range: (f64, f64),
    pub test_fraction: f64,
    pub band_width: usize,
    pub prior_weight: f64,
    pub indent: IndentOptions,
    pub seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            n_samples: 50,
            probe_radius: DEFAULT_PROBE_RADIUS,
            indentation_range: (0.3, 1.0),
            test_fraction: 0.2,
            band_width: DEFAULT_BAND_WIDTH,
            prior_weight: DEFAULT_PRIOR_WEIGHT,
            indent: IndentOptions::default(),
            seed: 0,
        }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(contract("n_samples must be at least 1"));
        }
        if !(self.probe_radius > 0.0) {
            return Err(contract("probe radius must be positive"));
        }
        let (lo, hi) = self.indentation_range;
        if !(lo >= 0.0 && hi >= lo && hi < self.probe_radius) {
            return Err(contract(format!(
                "indentation range ({lo}, {hi}) must satisfy 0 <= min <= max < probe radius"
            )));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(contract("test fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Evenly interleaved split: sample `i` is a test sample when the running
    /// count `floor((i + 1) * f)` steps up.
    pub fn split_of(&self, index: usize) -> Split {
        let f = self.test_fraction;
        if ((index + 1) as f64 * f).floor() > (index as f64 * f).floor() {
            Split::Test
        } else {
            Split::Train
        }
    }
}

/// Radical inverse of `index` in `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut scale = inv;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

/// Per-sample random stream; depends only on `(seed, index)`.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Probe centre of sample `index`: a Cranley-Patterson rotated Halton (2, 3)
/// point in the box of centres that keeps the contact away from the edge band.
pub fn probe_center(surface: &SensorSurface, params: &DatasetParams, index: usize) -> Result<(f64, f64)> {
    let (x0, x1, y0, y1) = surface.grid.extent_mm();
    let margin = params.band_width as f64 * surface.grid.pixel_pitch + params.probe_radius;
    let (bx0, bx1, by0, by1) = (x0 + margin, x1 - margin, y0 + margin, y1 - margin);
    if !(bx1 >= bx0 && by1 >= by0) {
        return Err(Error::EmptyRegion("sensor is too small for the probe and edge band".into()));
    }
    let mut shift_rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (sx, sy): (f64, f64) = (shift_rng.random(), shift_rng.random());
    let u = (radical_inverse(index as u64 + 1, 2) + sx).fract();
    let v = (radical_inverse(index as u64 + 1, 3) + sy).fract();
    Ok((bx0 + u * (bx1 - bx0), by0 + v * (by1 - by0)))
}

/// Renders one probed frame per sample with ground-truth normals, contact
/// mask, deformed heights and the CAD edge prior.
pub fn generate_calibration_dataset(
    surface: &SensorSurface,
    camera: &CameraModel,
    render: &RenderConfig,
    params: &DatasetParams,
) -> Result<CalibrationDataset> {
    params.validate()?;
    render.validate()?;
    camera.validate()?;
    if surface.valid_mask().is_empty() {
        return Err(Error::EmptyRegion("surface has no valid pixels".into()));
    }
    let prior = surface_edge_prior(surface, surface.valid_mask(), params.band_width, params.prior_weight)?;
    let samples = (0..params.n_samples)
        .map(|i| render_sample(surface, camera, render, params, &prior, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationDataset {
        surface: surface.clone(),
        camera: camera.clone(),
        render: render.clone(),
        params: params.clone(),
        samples,
    })
}

fn render_sample(
    surface: &SensorSurface,
    camera: &CameraModel,
    render: &RenderConfig,
    params: &DatasetParams,
    prior: &DepthPrior,
    index: usize,
) -> Result<CalibrationSample> {
    let mut rng = sample_rng(params.seed, index);
    let (lo, hi) = params.indentation_range;
    let depth = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let (x, y) = probe_center(surface, params, index)?;
    let probe = SphereProbe::pressing(&surface.kind, x, y, params.probe_radius, depth)?;
    let ind = indent_surface(surface, &probe, params.indent)?;

    let mut cfg = render.clone();
    cfg.rng_seed = rng.random();
    let frame = render_frame(&ind.deformed, &ind.normals, &surface.grid, camera, &cfg)?;
    Ok(CalibrationSample {
        index,
        split: params.split_of(index),
        probe,
        contact: ind.contact.and(&frame.mask)?,
        frame,
        gt_normals: ind.normals,
        heights: ind.deformed,
        prior: prior.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SurfaceKind;
    use crate::raster::GridSpec;

    fn small_surface() -> SensorSurface {
        SensorSurface::new(
            SurfaceKind::SphereCap { radius: 30.0, apex_height: 0.0 },
            GridSpec::new(96, 72, 0.2).unwrap(),
        )
        .unwrap()
    }

    fn camera(s: &SensorSurface) -> CameraModel {
        CameraModel::centered(400.0, 400.0, s.grid.width, s.grid.height).unwrap()
    }

    #[test]
    fn halton_prefix() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(1, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((radical_inverse(5, 3) - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn fifty_samples_with_eighty_twenty_split() {
        let s = small_surface();
        let params = DatasetParams { seed: 3, ..Default::default() };
        let ds = generate_calibration_dataset(&s, &camera(&s), &RenderConfig::default(), &params).unwrap();
        assert_eq!(ds.samples.len(), 50);
        assert_eq!(ds.split(Split::Test).count(), 10);
        assert_eq!(ds.split(Split::Train).count(), 40);
        for sample in &ds.samples {
            assert!(!sample.contact.is_empty());
            assert!(sample.contact.is_subset_of(&sample.frame.mask));
            sample.gt_normals.validate(1e-6).unwrap();
            sample.frame.validate().unwrap();
            assert_eq!(sample.probe.radius, 2.5);
        }
    }

    #[test]
    fn zero_indentation_sample_is_the_undeformed_render() {
        let s = small_surface();
        let params = DatasetParams { n_samples: 1, indentation_range: (0.0, 0.0), ..Default::default() };
        let render = RenderConfig::default();
        let ds = generate_calibration_dataset(&s, &camera(&s), &render, &params).unwrap();
        let sample = &ds.samples[0];
        assert!(sample.contact_mask().is_empty());
        let plain = render_frame(&s.heights, &s.normal_map(), &s.grid, &camera(&s), &render).unwrap();
        assert_eq!(sample.frame, plain);
    }

    #[test]
    fn generation_is_deterministic_and_order_free() {
        let s = small_surface();
        let mut render = RenderConfig::default();
        render.noise_sigma = [0.01; 6];
        let params = DatasetParams { n_samples: 6, seed: 9, ..Default::default() };
        let a = generate_calibration_dataset(&s, &camera(&s), &render, &params).unwrap();
        let b = generate_calibration_dataset(&s, &camera(&s), &render, &params).unwrap();
        assert_eq!(a, b);
        // sample content depends only on (seed, index)
        let longer = DatasetParams { n_samples: 8, ..params.clone() };
        let c = generate_calibration_dataset(&s, &camera(&s), &render, &longer).unwrap();
        for i in [5, 0, 3] {
            let prior = &a.samples[i].prior;
            let lone = render_sample(&s, &camera(&s), &render, &params, prior, i).unwrap();
            assert_eq!(lone, a.samples[i]);
            assert_eq!(c.samples[i], a.samples[i]);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let s = small_surface();
        let cam = camera(&s);
        let render = RenderConfig::default();
        let zero = DatasetParams { n_samples: 0, ..Default::default() };
        assert!(generate_calibration_dataset(&s, &cam, &render, &zero).is_err());
        let deep = DatasetParams { indentation_range: (0.5, 2.6), ..Default::default() };
        assert!(generate_calibration_dataset(&s, &cam, &render, &deep).is_err());
        let tiny = SensorSurface::new(SurfaceKind::Plane, GridSpec::new(20, 20, 0.1).unwrap()).unwrap();
        let cam = CameraModel::centered(400.0, 400.0, 20, 20).unwrap();
        let params = DatasetParams { n_samples: 1, ..Default::default() };
        assert!(matches!(
            generate_calibration_dataset(&tiny, &cam, &render, &params),
            Err(Error::EmptyRegion(_))
        ));
    }
}
