use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tactile_core::estimation::{
    ChannelMode, LrSchedule, LutRegion, PositionalEncodingConfig, TrainConfig, DEFAULT_DROPOUT, DEFAULT_HIDDEN_WIDTH,
    DEFAULT_LUT_BINS,
};
use tactile_core::geometry::{CameraModel, IndentOptions, SensorSurface, SurfaceKind, DEFAULT_PROBE_RADIUS, N_AIR, N_PRISM_GLASS};
use tactile_core::integration::{IntegrationOptions, SolverOptions, DEFAULT_BAND_WIDTH, DEFAULT_NZ_FLOOR, DEFAULT_PRIOR_WEIGHT};
use tactile_core::render::{DatasetParams, RenderConfig};
use tactile_core::GridSpec;

use crate::error::CliError;

/// Whole pipeline configuration. Every field has a default; unknown keys
/// are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub surface: SurfaceConfig,
    pub camera: CameraConfig,
    pub render: RenderConfig,
    pub probe: ProbeConfig,
    pub train: TrainSection,
    pub lut: LutSection,
    pub integration: IntegrationSection,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            surface: SurfaceConfig::default(),
            camera: CameraConfig::default(),
            render: RenderConfig::default(),
            probe: ProbeConfig::default(),
            train: TrainSection::default(),
            lut: LutSection::default(),
            integration: IntegrationSection::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    pub shape: SurfaceKind,
    pub width: usize,
    pub height: usize,
    /// mm per pixel.
    pub pixel_pitch: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self { shape: SurfaceKind::SphereCap { radius: 30.0, apex_height: 0.0 }, width: 640, height: 480, pixel_pitch: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    /// In-air focal lengths, pixels.
    pub fx: f64,
    pub fy: f64,
    pub n_air: f64,
    pub n_medium: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { fx: 1000.0, fy: 1000.0, n_air: N_AIR, n_medium: N_PRISM_GLASS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub n_samples: usize,
    pub radius: f64,
    pub indentation_range: (f64, f64),
    pub test_fraction: f64,
    pub smooth_crease: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let d = DatasetParams::default();
        Self {
            n_samples: d.n_samples,
            radius: DEFAULT_PROBE_RADIUS,
            indentation_range: d.indentation_range,
            test_fraction: d.test_fraction,
            smooth_crease: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub channel_mode: ChannelMode,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub background_sample_fraction: f64,
    pub hidden_width: usize,
    pub dropout_rate: f64,
    pub encoding: PositionalEncodingConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            channel_mode: t.channel_mode,
            learning_rate: t.learning_rate,
            lr_schedule: t.lr_schedule,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size,
            epochs: t.epochs,
            background_sample_fraction: t.background_sample_fraction,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            dropout_rate: DEFAULT_DROPOUT,
            encoding: t.encoding,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LutSection {
    pub bins_per_channel: usize,
    pub region: LutRegion,
}

impl Default for LutSection {
    fn default() -> Self {
        Self { bins_per_channel: DEFAULT_LUT_BINS, region: LutRegion::Contact }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    None,
    CadEdges,
}

impl PriorMode {
    pub fn name(self) -> &'static str {
        match self {
            PriorMode::None => "none",
            PriorMode::CadEdges => "cad-edges",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationSection {
    pub prior: PriorMode,
    /// Prior weight λ; rows carry √λ.
    pub prior_weight: f64,
    pub band_width: usize,
    pub nz_floor: f64,
    pub solver: SolverOptions,
}

impl Default for IntegrationSection {
    fn default() -> Self {
        Self {
            prior: PriorMode::CadEdges,
            prior_weight: DEFAULT_PRIOR_WEIGHT,
            band_width: DEFAULT_BAND_WIDTH,
            nz_floor: DEFAULT_NZ_FLOOR,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Root of all outputs; `--out` overrides it.
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { out: PathBuf::from("out") }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: tactile_core::Result<()>, what: &str| r.map_err(|e| CliError::config(format!("{what}: {e}")));
        self.surface()?;
        self.camera()?;
        check(self.render.validate(), "render")?;
        check(self.dataset_params().validate(), "probe")?;
        check(self.train_config(self.train.channel_mode).validate(), "train")?;
        if self.lut.bins_per_channel == 0 {
            return Err(CliError::config("lut.bins_per_channel must be at least 1"));
        }
        if !(self.integration.prior_weight > 0.0) || !(self.integration.nz_floor > 0.0) {
            return Err(CliError::config("integration.prior_weight and integration.nz_floor must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(self.surface.width, self.surface.height, self.surface.pixel_pitch)
            .map_err(|e| CliError::config(format!("surface: {e}")))
    }

    pub fn surface(&self) -> Result<SensorSurface, CliError> {
        SensorSurface::new(self.surface.shape.clone(), self.grid()?).map_err(|e| CliError::config(format!("surface: {e}")))
    }

    pub fn camera(&self) -> Result<CameraModel, CliError> {
        let mut cam = CameraModel::centered(self.camera.fx, self.camera.fy, self.surface.width, self.surface.height)
            .map_err(|e| CliError::config(format!("camera: {e}")))?;
        cam.n_air = self.camera.n_air;
        cam.n_medium = self.camera.n_medium;
        cam.effective_focal().map_err(|e| CliError::config(format!("camera: {e}")))?;
        Ok(cam)
    }

    pub fn dataset_params(&self) -> DatasetParams {
        DatasetParams {
            n_samples: self.probe.n_samples,
            probe_radius: self.probe.radius,
            indentation_range: self.probe.indentation_range,
            test_fraction: self.probe.test_fraction,
            band_width: self.integration.band_width,
            prior_weight: self.integration.prior_weight,
            indent: IndentOptions { smooth_crease: self.probe.smooth_crease },
            seed: self.seed,
        }
    }

    pub fn train_config(&self, mode: ChannelMode) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            lr_schedule: t.lr_schedule,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: self.seed,
            channel_mode: mode,
            background_sample_fraction: t.background_sample_fraction,
            hidden_width: t.hidden_width,
            dropout_rate: t.dropout_rate,
            encoding: t.encoding,
        }
    }

    pub fn integration_options(&self) -> IntegrationOptions {
        IntegrationOptions { nz_floor: self.integration.nz_floor, solver: self.integration.solver, ..Default::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_materializes_defaults() {
        let cfg = PipelineConfig::parse("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.probe.n_samples, 50);
        assert_eq!(cfg.train.batch_size, 4096);
        assert_eq!(cfg.integration.band_width, 10);
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 17;
        cfg.surface.shape = SurfaceKind::EllipsoidCap { a: 30.0, b: 25.0, c: 12.0, apex_height: 0.0 };
        cfg.train.channel_mode = ChannelMode::RgbOnly;
        cfg.integration.prior = PriorMode::None;
        let text = cfg.to_json();
        let back = PipelineConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), text);
        // a partial document round-trips to its fully materialized form
        let partial = PipelineConfig::parse(r#"{"seed": 3, "train": {"epochs": 5}}"#).unwrap();
        assert_eq!(PipelineConfig::parse(&partial.to_json()).unwrap(), partial);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = PipelineConfig::parse(r#"{"train": {"epochz": 5}}"#).unwrap_err();
        assert_eq!(err.code, crate::error::EXIT_CONFIG);
        assert!(err.message.contains("epochz"), "{}", err.message);
        let err = PipelineConfig::parse(r#"{"sead": 1}"#).unwrap_err();
        assert!(err.message.contains("sead"));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            r#"{"probe": {"n_samples": 0}}"#,
            r#"{"surface": {"pixel_pitch": -1.0}}"#,
            r#"{"camera": {"n_medium": 0.0}}"#,
            r#"{"train": {"learning_rate": 0.0}}"#,
            r#"{"lut": {"bins_per_channel": 0}}"#,
        ] {
            assert_eq!(PipelineConfig::parse(text).unwrap_err().code, crate::error::EXIT_CONFIG, "{text}");
        }
    }
}
