use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tactile_core::estimation::{
    estimate_normal_map, lut_build, psnn_train, ChannelMode, Estimator, LookupTable, PsnnModel,
};
use tactile_core::geometry::SensorSurface;
use tactile_core::integration::{
    depth_to_pointcloud, integrate_normals, normals_to_gradients, surface_edge_prior, DepthMap, DepthPrior, DepthUnit,
    IntegrationMethod,
};
use tactile_core::io::{
    encode_png_gray16, encode_png_rgb8, load_dataset, load_lut, load_metadata, load_psnn, load_sample, normal_image, ply_string, save_dataset,
    save_lut, save_psnn, scalar_heatmap, sniff_estimator, write_atomic, write_ply, write_png_rgb8, EstimatorKind,
    TrasRaster, SAMPLE_CHANNELS,
};
use tactile_core::metrics::{mae_depth, mae_gradients, DepthRow, GradientMae, GradientRow, MetricsReport};
use tactile_core::render::{generate_calibration_dataset, CalibrationSample, Split, TactileFrame, CHANNELS};
use tactile_core::{Mask, NormalMap, RasterGrid};

use crate::config::{PipelineConfig, PriorMode};
use crate::error::CliError;
use crate::CommonArgs;

pub const DATASET_DIR: &str = "dataset";
pub const RECONSTRUCT_DIR: &str = "reconstruct";
pub const PLOT_DIR: &str = "plot";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";

/// Resolved configuration of one invocation.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    /// Set when `--channel-mode` was given; estimators must then agree with it.
    pub forced_mode: Option<ChannelMode>,
}

impl Context {
    pub fn new(args: &CommonArgs) -> Result<Self, CliError> {
        let mut config = PipelineConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        let forced_mode = args.channel_mode.map(ChannelMode::from);
        if let Some(mode) = forced_mode {
            config.train.channel_mode = mode;
        }
        if let Some(prior) = args.prior {
            config.integration.prior = prior;
        }
        if let Some(out) = &args.out {
            config.paths.out = out.clone();
        }
        config.validate()?;
        Ok(Self { out: config.paths.out.clone(), config, forced_mode })
    }

    fn dataset_dir(&self, explicit: Option<PathBuf>) -> PathBuf {
        explicit.unwrap_or_else(|| self.out.join(DATASET_DIR))
    }

    fn mode(&self) -> ChannelMode {
        self.config.train.channel_mode
    }
}

/// Attaches `what` to a core error while keeping its exit code.
fn at<T>(r: tactile_core::Result<T>, what: impl Display) -> Result<T, CliError> {
    r.map_err(|e| CliError::from(e).context(what))
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn gen_dataset(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let surface = cfg.surface()?;
    let camera = cfg.camera()?;
    let params = cfg.dataset_params();
    let t = Instant::now();
    let ds = at(generate_calibration_dataset(&surface, &camera, &cfg.render, &params), "rendering dataset")?;
    let dir = ctx.dataset_dir(None);
    make_dir(&ctx.out)?;
    at(save_dataset(&dir, &ds), dir.display())?;
    let test = ds.split(Split::Test).count();
    println!(
        "wrote {} samples ({} train, {test} test) to {} in {:.1}s",
        ds.samples.len(),
        ds.samples.len() - test,
        dir.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn psnn_path(out: &Path, mode: ChannelMode) -> PathBuf {
    out.join(format!("psnn_{}.bin", mode.name()))
}

pub fn lut_path(out: &Path, mode: ChannelMode) -> PathBuf {
    out.join(format!("lut_{}.bin", mode.name()))
}

pub fn train(ctx: &Context, dataset: Option<PathBuf>) -> Result<(), CliError> {
    let dir = ctx.dataset_dir(dataset);
    let ds = at(load_dataset(&dir), dir.display())?;
    let tc = ctx.config.train_config(ctx.mode());
    let t = Instant::now();
    let (model, history) = at(psnn_train(&ds, &tc), "training")?;
    make_dir(&ctx.out)?;
    let path = psnn_path(&ctx.out, ctx.mode());
    at(save_psnn(&path, &model, Some(&tc)), path.display())?;
    let hist_path = ctx.out.join(format!("psnn_{}_history.json", ctx.mode().name()));
    at(write_atomic(&hist_path, &to_json(&history)), hist_path.display())?;
    println!(
        "trained {}-input model for {} epochs in {:.1}s: loss {:.6} -> {:.6}; wrote {}",
        model.input_width(),
        tc.epochs,
        t.elapsed().as_secs_f64(),
        history.epoch_losses.first().copied().unwrap_or(f64::NAN),
        history.epoch_losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

pub fn build_lut(ctx: &Context, dataset: Option<PathBuf>) -> Result<(), CliError> {
    let dir = ctx.dataset_dir(dataset);
    let ds = at(load_dataset(&dir), dir.display())?;
    let lut = at(
        lut_build(ds.split(Split::Train), ctx.config.lut.bins_per_channel, ctx.mode(), ctx.config.lut.region),
        "building lookup table",
    )?;
    make_dir(&ctx.out)?;
    let path = lut_path(&ctx.out, ctx.mode());
    at(save_lut(&path, &lut), path.display())?;
    println!("built {}-channel lookup table with {} populated bins; wrote {}", ctx.mode().channels(), lut.entries.len(), path.display());
    Ok(())
}

/// A PSNN checkpoint or lookup table read from disk.
pub enum LoadedEstimator {
    Psnn(PsnnModel),
    Lut(LookupTable),
}

impl LoadedEstimator {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let kind = at(sniff_estimator(path), path.display())?;
        Ok(match kind {
            EstimatorKind::Psnn => LoadedEstimator::Psnn(at(load_psnn(path), path.display())?.0),
            EstimatorKind::Lut => LoadedEstimator::Lut(at(load_lut(path), path.display())?),
        })
    }

    pub fn estimator(&self) -> Estimator<'_> {
        match self {
            LoadedEstimator::Psnn(m) => Estimator::Psnn(m),
            LoadedEstimator::Lut(t) => Estimator::Lut(t),
        }
    }

    /// The estimator's own mode, or the forced one (which must agree).
    fn mode(&self, forced: Option<ChannelMode>) -> Result<ChannelMode, CliError> {
        let own = self.estimator().channel_mode();
        match forced {
            Some(m) => {
                own.check(m)?;
                Ok(m)
            }
            None => Ok(own),
        }
    }
}

pub enum FrameSource {
    Sample { dataset: Option<PathBuf>, index: usize },
    File(PathBuf),
}

fn frame_from_raster(r: TrasRaster) -> Result<TactileFrame, CliError> {
    if r.channels.len() < CHANNELS {
        return Err(CliError::new(
            crate::error::EXIT_FORMAT,
            format!("frame raster has {} channels, need at least {CHANNELS}", r.channels.len()),
        ));
    }
    let mask = r.mask.unwrap_or_else(|| Mask::new(r.width, r.height, true));
    let frame = TactileFrame { width: r.width, height: r.height, channels: r.channels.into_iter().take(CHANNELS).collect(), mask };
    frame.validate()?;
    Ok(frame)
}

fn read_raster(path: &Path) -> Result<TrasRaster, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    at(TrasRaster::from_bytes(&bytes), path.display())
}

/// Frame plus the surface whose CAD heights feed the edge prior.
fn load_frame(ctx: &Context, source: FrameSource) -> Result<(TactileFrame, SensorSurface), CliError> {
    match source {
        FrameSource::Sample { dataset, index } => {
            let dir = ctx.dataset_dir(dataset);
            let meta = at(load_metadata(&dir), dir.display())?;
            let entry = meta
                .samples
                .iter()
                .find(|s| s.index == index)
                .ok_or_else(|| CliError::config(format!("dataset {} has no sample {index}", dir.display())))?;
            let surface = at(SensorSurface::new(meta.surface.clone(), meta.grid), "dataset surface")?;
            let sample = at(load_sample(&dir, &meta, entry, &surface), dir.join(&entry.file).display())?;
            Ok((sample.frame, surface))
        }
        FrameSource::File(path) => {
            let frame = frame_from_raster(read_raster(&path)?)?;
            let surface = ctx.config.surface()?;
            if (surface.grid.width, surface.grid.height) != (frame.width, frame.height) {
                return Err(CliError::config(format!(
                    "frame is {}x{} but the configured surface is {}x{}",
                    frame.width, frame.height, surface.grid.width, surface.grid.height
                )));
            }
            Ok((frame, surface))
        }
    }
}

fn edge_prior(ctx: &Context, surface: &SensorSurface, mask: &Mask) -> Result<Option<DepthPrior>, CliError> {
    let i = &ctx.config.integration;
    match i.prior {
        PriorMode::None => Ok(None),
        PriorMode::CadEdges => Ok(Some(at(surface_edge_prior(surface, mask, i.band_width, i.prior_weight), "edge prior")?)),
    }
}

fn depth_raster(depth_mm: &DepthMap) -> TrasRaster {
    let mm = depth_mm.clone();
    TrasRaster { width: mm.z.width, height: mm.z.height, channels: vec![mm.z.values], mask: Some(mm.z.mask) }
}

fn gradient_magnitude(normals: &NormalMap, nz_floor: f64) -> Result<(Vec<f64>, Mask), CliError> {
    let g = at(normals_to_gradients(normals, nz_floor), "gradients")?;
    let mag = g.p.iter().zip(&g.q).map(|(p, q)| p.hypot(*q)).collect();
    Ok((mag, g.mask))
}

pub fn reconstruct(ctx: &Context, estimator_path: &Path, source: FrameSource) -> Result<(), CliError> {
    let est = LoadedEstimator::load(estimator_path)?;
    let mode = est.mode(ctx.forced_mode)?;
    let (frame, surface) = load_frame(ctx, source)?;
    let normals = at(estimate_normal_map(&frame, est.estimator(), mode), "estimating normals")?;
    let prior = edge_prior(ctx, &surface, &frame.mask)?;
    let pitch = surface.grid.pixel_pitch;
    let opts = ctx.config.integration_options();
    let result = at(integrate_normals(&normals, prior.as_ref(), pitch, &opts), "integrating normals")?;

    let dir = ctx.out.join(RECONSTRUCT_DIR);
    make_dir(&dir)?;
    let write = |name: &str, bytes: tactile_core::Result<Vec<u8>>| {
        let p = dir.join(name);
        at(bytes.and_then(|b| write_atomic(&p, &b)), p.display())
    };
    let depth_mm = result.depth.to_mm();
    write("depth.tras", depth_raster(&depth_mm).to_bytes())?;
    write("cloud.ply", Ok(ply_string(&depth_to_pointcloud(&depth_mm, pitch)).into_bytes()))?;
    write("normals.png", encode_png_rgb8(&normal_image(&normals)))?;
    write("depth.png", scalar_heatmap(&depth_mm.z.values, &depth_mm.z.mask).and_then(|i| encode_png_rgb8(&i)))?;
    let (mag, mask) = gradient_magnitude(&normals, opts.nz_floor)?;
    write("gradient.png", scalar_heatmap(&mag, &mask).and_then(|i| encode_png_rgb8(&i)))?;
    println!(
        "reconstructed {} pixels ({} mode, prior {}, {} clamped normals, residual {:.2e}); wrote {}",
        frame.mask.count(),
        mode.name(),
        ctx.config.integration.prior.name(),
        result.clamped_normals,
        result.residual,
        dir.display()
    );
    Ok(())
}

fn estimator_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

struct DepthVariant {
    name: &'static str,
    method: IntegrationMethod,
    prior: bool,
}

const DEPTH_VARIANTS: [DepthVariant; 3] = [
    DepthVariant { name: "cad-edges", method: IntegrationMethod::Poisson, prior: true },
    DepthVariant { name: "none", method: IntegrationMethod::Poisson, prior: false },
    DepthVariant { name: "fast-poisson", method: IntegrationMethod::FastPoisson, prior: false },
];

fn truth_depth(s: &CalibrationSample, pitch: f64) -> DepthMap {
    DepthMap { z: s.heights.clone(), unit: DepthUnit::Millimeters, pixel_pitch: pitch }
}

/// Builds the report: one gradient row per estimator and one depth row per
/// estimator and integration variant, over the test split.
pub fn evaluate(
    ctx: &Context,
    ds: &tactile_core::render::CalibrationDataset,
    estimators: &[(String, LoadedEstimator)],
) -> Result<MetricsReport, CliError> {
    let test: Vec<&CalibrationSample> = ds.split(Split::Test).collect();
    if test.is_empty() {
        return Err(CliError::from(tactile_core::Error::EmptyRegion("dataset has no test samples".into())));
    }
    let pitch = ds.surface.grid.pixel_pitch;
    let icfg = &ctx.config.integration;
    let mut report = MetricsReport { test_samples: test.len(), pixel_pitch: pitch, ..Default::default() };
    let mut runtimes = BTreeMap::new();
    for (name, est) in estimators {
        let mode = est.mode(ctx.forced_mode)?;
        let t = Instant::now();
        let normals = test
            .iter()
            .map(|s| at(estimate_normal_map(&s.frame, est.estimator(), mode), format!("{name}: sample {}", s.index)))
            .collect::<Result<Vec<_>, _>>()?;
        runtimes.insert(format!("estimate/{name}"), t.elapsed().as_secs_f64());
        let parts = test
            .iter()
            .zip(&normals)
            .map(|(s, n)| at(mae_gradients(n, &s.gt_normals, &s.contact_mask()), format!("{name}: sample {}", s.index)))
            .collect::<Result<Vec<GradientMae>, _>>()?;
        report.gradients.push(GradientRow::new(name.clone(), at(GradientMae::pooled(&parts), name)?, pitch));

        for v in &DEPTH_VARIANTS {
            let t = Instant::now();
            let opts = tactile_core::integration::IntegrationOptions { method: v.method, ..ctx.config.integration_options() };
            let (mut overall, mut contact, mut clamped) = (0.0, 0.0, 0);
            for (s, n) in test.iter().zip(&normals) {
                let prior = if v.prior {
                    Some(at(surface_edge_prior(&ds.surface, &s.frame.mask, icfg.band_width, icfg.prior_weight), "edge prior")?)
                } else {
                    None
                };
                let r = at(integrate_normals(n, prior.as_ref(), pitch, &opts), format!("{name}/{}: sample {}", v.name, s.index))?;
                let truth = truth_depth(s, pitch);
                overall += at(mae_depth(&r.depth, &truth, &s.frame.mask), "depth error")?;
                contact += at(mae_depth(&r.depth, &truth, &s.contact_mask()), "depth error")?;
                clamped += r.clamped_normals;
            }
            let k = test.len() as f64;
            report.depth.push(DepthRow {
                method: format!("{name}/{}", v.name),
                mae_overall: overall / k,
                mae_contact: contact / k,
                samples: test.len(),
                clamped_normals: clamped,
            });
            runtimes.insert(format!("integrate/{name}/{}", v.name), t.elapsed().as_secs_f64());
        }
    }
    report.runtimes = runtimes;
    at(report.validate(), "metrics")?;
    Ok(report)
}

pub fn eval(ctx: &Context, dataset: Option<PathBuf>, estimator_paths: &[PathBuf]) -> Result<(), CliError> {
    let dir = ctx.dataset_dir(dataset);
    let ds = at(load_dataset(&dir), dir.display())?;
    let estimators = estimator_paths
        .iter()
        .map(|p| Ok((estimator_name(p), LoadedEstimator::load(p)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = evaluate(ctx, &ds, &estimators)?;
    make_dir(&ctx.out)?;
    let json = ctx.out.join(METRICS_JSON);
    at(write_atomic(&json, &to_json(&report)), json.display())?;
    let txt = ctx.out.join(METRICS_TXT);
    let table = report.to_table();
    at(write_atomic(&txt, table.as_bytes()), txt.display())?;
    print!("{table}");
    println!("wrote {} and {}", json.display(), txt.display());
    Ok(())
}

pub fn export_ply(ctx: &Context, input: &Path) -> Result<(), CliError> {
    let r = read_raster(input)?;
    if r.channels.len() != 1 {
        return Err(CliError::new(
            crate::error::EXIT_FORMAT,
            format!("{}: depth raster must have one channel, found {}", input.display(), r.channels.len()),
        ));
    }
    let mask = r.mask.clone().unwrap_or_else(|| Mask::new(r.width, r.height, true));
    let pitch = ctx.config.surface.pixel_pitch;
    let z = at(RasterGrid::new(r.width, r.height, r.channels[0].clone(), mask), input.display())?;
    let depth = DepthMap { z, unit: DepthUnit::Millimeters, pixel_pitch: pitch };
    make_dir(&ctx.out)?;
    let p = ctx.out.join(format!("{}.ply", estimator_name(input)));
    let points = depth_to_pointcloud(&depth, pitch);
    at(write_ply(&p, &points), p.display())?;
    println!("wrote {} points to {}", points.len(), p.display());
    Ok(())
}

pub fn plot(ctx: &Context, dataset: Option<PathBuf>, index: usize) -> Result<(), CliError> {
    let dir = ctx.dataset_dir(dataset);
    let meta = at(load_metadata(&dir), dir.display())?;
    let entry = meta
        .samples
        .iter()
        .find(|s| s.index == index)
        .ok_or_else(|| CliError::config(format!("dataset {} has no sample {index}", dir.display())))?;
    let surface = at(SensorSurface::new(meta.surface.clone(), meta.grid), "dataset surface")?;
    let s = at(load_sample(&dir, &meta, entry, &surface), dir.join(&entry.file).display())?;
    let out = ctx.out.join(PLOT_DIR);
    make_dir(&out)?;
    let stem = format!("sample_{index:03}");
    let (w, h) = (s.frame.width, s.frame.height);
    for (c, name) in SAMPLE_CHANNELS.iter().take(CHANNELS).enumerate() {
        let p = out.join(format!("{stem}_{name}.png"));
        at(write_atomic(&p, &at(encode_png_gray16(&s.frame.channels[c], w, h), "channel image")?), p.display())?;
    }
    let p = out.join(format!("{stem}_normals.png"));
    at(write_png_rgb8(&p, &normal_image(&s.gt_normals)), p.display())?;
    let p = out.join(format!("{stem}_height.png"));
    at(write_png_rgb8(&p, &at(scalar_heatmap(&s.heights.values, &s.heights.mask), "height heatmap")?), p.display())?;
    println!("wrote {} images to {}", CHANNELS + 2, out.display());
    Ok(())
}
