use tactile_core::estimation::{estimate_normal_map, lut_build, ChannelMode, Estimator, LutRegion};
use tactile_core::geometry::{CameraModel, SensorSurface, SurfaceKind};
use tactile_core::integration::{integrate_normals, DepthMap, DepthUnit, IntegrationOptions};
use tactile_core::io::{load_dataset, save_dataset};
use tactile_core::metrics::{mae_depth, mae_gradients};
use tactile_core::render::{generate_calibration_dataset, CalibrationDataset, DatasetParams, RenderConfig, Split};
use tactile_core::GridSpec;

fn small_dataset() -> CalibrationDataset {
    let grid = GridSpec::new(80, 60, 0.2).unwrap();
    let surf = SensorSurface::new(SurfaceKind::SphereCap { radius: 30.0, apex_height: 0.0 }, grid).unwrap();
    let cam = CameraModel::centered(250.0, 250.0, 80, 60).unwrap();
    let params = DatasetParams { n_samples: 10, seed: 4, ..DatasetParams::default() };
    generate_calibration_dataset(&surf, &cam, &RenderConfig::default(), &params).unwrap()
}

#[test]
fn saved_dataset_reloads_within_f32_precision() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds");
    save_dataset(&path, &ds).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.samples.len(), 10);
    assert_eq!(back.params, ds.params);
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!((a.index, a.split), (b.index, b.split));
        assert_eq!(a.contact, b.contact);
        assert_eq!(a.frame.mask, b.frame.mask);
        for (ca, cb) in a.frame.channels.iter().zip(&b.frame.channels) {
            assert!(ca.iter().zip(cb).all(|(x, y)| (x - y).abs() <= 1e-6));
        }
        assert!(a.heights.values.iter().zip(&b.heights.values).all(|(x, y)| (x - y).abs() <= 1e-6 * (1.0 + x.abs())));
        assert_eq!(a.prior, b.prior);
    }
}

/// Lookup table on the training split, then depth on each test sample:
/// the edge prior must beat the free-gauge solve.
#[test]
fn lut_reconstruction_with_and_without_prior() {
    let ds = small_dataset();
    let lut = lut_build(ds.split(Split::Train), 16, ChannelMode::RgbNir, LutRegion::Contact).unwrap();
    let pitch = ds.surface.grid.pixel_pitch;
    let opts = IntegrationOptions::default();
    for s in ds.split(Split::Test) {
        let normals = estimate_normal_map(&s.frame, Estimator::Lut(&lut), ChannelMode::RgbNir).unwrap();
        let g = mae_gradients(&normals, &s.gt_normals, &s.contact_mask()).unwrap();
        assert!(g.total.is_finite() && g.total < 1.0, "{g:?}");
        let truth = DepthMap { z: s.heights.clone(), unit: DepthUnit::Millimeters, pixel_pitch: pitch };
        let with = integrate_normals(&normals, Some(&s.prior), pitch, &opts).unwrap();
        let free = integrate_normals(&normals, None, pitch, &opts).unwrap();
        let e_with = mae_depth(&with.depth, &truth, &s.frame.mask).unwrap();
        let e_free = mae_depth(&free.depth, &truth, &s.frame.mask).unwrap();
        assert!(e_with < e_free, "sample {}: prior {e_with} vs free {e_free}", s.index);
    }
}
