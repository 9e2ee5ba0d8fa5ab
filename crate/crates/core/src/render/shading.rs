use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub const CHANNELS: usize = 6;
pub const BANDS: usize = 4;

/// Distances are measured in units of this many mm for inverse-square falloff.
pub const FALLOFF_UNIT_MM: f64 = 10.0;

/// Emission band of an LED. Camera channels R, G, B see the first three
/// bands; the NIR camera sees the NIR band through `nir_gains`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightChannel {
    R,
    G,
    B,
    Nir,
}

impl LightChannel {
    pub fn band(self) -> usize {
        match self {
            LightChannel::R => 0,
            LightChannel::G => 1,
            LightChannel::B => 2,
            LightChannel::Nir => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Falloff {
    None,
    InverseSquare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Illuminant {
    pub position: Vector3<f64>,
    pub channel: LightChannel,
    pub radiant_intensity: f64,
    pub falloff: Falloff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub illuminants: Vec<Illuminant>,
    pub albedo: f64,
    /// Per camera channel, in (R, G, B, NIR1, NIR2, NIR3) order.
    pub ambient: [f64; CHANNELS],
    pub noise_sigma: [f64; CHANNELS],
    pub nir_gains: [f64; 3],
    /// Extra response of camera channel (row) to light band (column), on top
    /// of the diagonal RGB response and the NIR gains. Zero means no cross-talk.
    pub crosstalk: [[f64; BANDS]; CHANNELS],
    pub rng_seed: u64,
}

/// Four LEDs on a 20 mm ring, 14 mm above the apex: R, NIR, G, B at
/// azimuths 0°, 60°, 120°, 240°.
pub fn default_illuminants() -> Vec<Illuminant> {
    let ring = |deg: f64, channel| {
        let a = deg.to_radians();
        Illuminant {
            position: Vector3::new(20.0 * a.cos(), 20.0 * a.sin(), 14.0),
            channel,
            radiant_intensity: 5.0,
            falloff: Falloff::InverseSquare,
        }
    };
    vec![
        ring(0.0, LightChannel::R),
        ring(120.0, LightChannel::G),
        ring(240.0, LightChannel::B),
        ring(60.0, LightChannel::Nir),
    ]
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            illuminants: default_illuminants(),
            albedo: 0.8,
            ambient: [0.05; CHANNELS],
            noise_sigma: [0.0; CHANNELS],
            nir_gains: [1.0, 0.97, 0.94],
            crosstalk: [[0.0; BANDS]; CHANNELS],
            rng_seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.albedo > 0.0 && self.albedo <= 1.0) {
            return Err(contract(format!("albedo must lie in (0, 1], got {}", self.albedo)));
        }
        for l in &self.illuminants {
            if !(l.radiant_intensity >= 0.0) || !l.position.iter().all(|v| v.is_finite()) {
                return Err(contract("illuminant intensity must be >= 0 with a finite position"));
            }
        }
        let lit: Vec<bool> = (0..BANDS)
            .map(|b| self.illuminants.iter().any(|l| l.channel.band() == b))
            .collect();
        if !lit[0] && !lit[1] && !lit[2] {
            return Err(contract("no illuminant for the RGB camera"));
        }
        if !lit[3] {
            return Err(contract("no illuminant for the NIR camera"));
        }
        let gains_ok = self.nir_gains.iter().all(|g| *g >= 0.0)
            && self.crosstalk.iter().flatten().all(|g| *g >= 0.0)
            && self.ambient.iter().all(|a| *a >= 0.0)
            && self.noise_sigma.iter().all(|s| *s >= 0.0);
        if !gains_ok {
            return Err(contract("gains, ambient terms and noise levels must be >= 0"));
        }
        Ok(())
    }

    /// Response of each camera channel to each light band.
    pub fn channel_response(&self) -> [[f64; BANDS]; CHANNELS] {
        let mut m = self.crosstalk;
        for (c, row) in m.iter_mut().enumerate().take(3) {
            row[c] += 1.0;
        }
        for k in 0..3 {
            m[3 + k][3] += self.nir_gains[k];
        }
        m
    }
}

/// Lambertian irradiance per light band at `point` with unit `normal`.
fn band_irradiance(normal: &Vector3<f64>, point: &Vector3<f64>, config: &RenderConfig) -> [f64; BANDS] {
    let mut e = [0.0; BANDS];
    for light in &config.illuminants {
        let to_light = light.position - point;
        let dist = to_light.norm();
        if dist == 0.0 {
            continue;
        }
        let cos = normal.dot(&to_light) / dist;
        if cos <= 0.0 {
            continue;
        }
        let att = match light.falloff {
            Falloff::None => 1.0,
            Falloff::InverseSquare => {
                let r = dist / FALLOFF_UNIT_MM;
                1.0 / (r * r)
            }
        };
        e[light.channel.band()] += light.radiant_intensity * cos * att;
    }
    e
}

fn check_unit(normal: &Vector3<f64>) -> Result<()> {
    let n = normal.norm();
    if (n - 1.0).abs() > 1e-6 || !n.is_finite() {
        return Err(contract(format!("shading normal has norm {n}, expected 1")));
    }
    Ok(())
}

/// Noise-free intensities of all six camera channels, clamped to [0, 1].
pub fn shade_all(
    normal: &Vector3<f64>,
    point: &Vector3<f64>,
    config: &RenderConfig,
    response: &[[f64; BANDS]; CHANNELS],
) -> Result<[f64; CHANNELS]> {
    check_unit(normal)?;
    let e = band_irradiance(normal, point, config);
    let mut out = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        let lit: f64 = (0..BANDS).map(|b| response[c][b] * e[b]).sum();
        out[c] = (config.ambient[c] + config.albedo * lit).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Intensity of one camera channel (0..6: R, G, B, NIR1, NIR2, NIR3).
pub fn shade_pixel(normal: &Vector3<f64>, point: &Vector3<f64>, config: &RenderConfig, channel: usize) -> Result<f64> {
    if channel >= CHANNELS {
        return Err(contract(format!("channel index {channel} out of range")));
    }
    Ok(shade_all(normal, point, config, &config.channel_response())?[channel])
}
