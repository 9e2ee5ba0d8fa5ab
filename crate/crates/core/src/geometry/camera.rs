use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

pub const N_AIR: f64 = 1.0;
pub const N_PRISM_GLASS: f64 = 1.5168;

/// Scales an in-air focal length to the focal length seen through a
/// refractive medium: `f_medium = f_air * n_medium / n_air`.
pub fn correct_focal_for_medium(f_air: f64, n_medium: f64, n_air: f64) -> Result<f64> {
    if !(f_air > 0.0 && n_medium > 0.0 && n_air > 0.0) {
        return Err(Error::Domain(format!(
            "focal correction needs positive inputs, got f_air={f_air}, n_medium={n_medium}, n_air={n_air}"
        )));
    }
    Ok(f_air * n_medium / n_air)
}

/// Pinhole camera with a refractive focal correction.
///
/// `fx`/`fy` are the in-air focal lengths; projection uses the corrected
/// focals from [`CameraModel::effective_focal`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    #[serde(default = "default_n_air")]
    pub n_air: f64,
    #[serde(default = "default_n_medium")]
    pub n_medium: f64,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
}

fn default_n_air() -> f64 {
    N_AIR
}
fn default_n_medium() -> f64 {
    N_PRISM_GLASS
}
fn default_width() -> usize {
    640
}
fn default_height() -> usize {
    480
}

impl CameraModel {
    /// Identity pose, principal point at the image center.
    pub fn centered(fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx: (width as f64 - 1.0) * 0.5,
            cy: (height as f64 - 1.0) * 0.5,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            n_air: N_AIR,
            n_medium: N_PRISM_GLASS,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(contract("camera focal lengths must be positive"));
        }
        if !(self.n_air >= 1.0 && self.n_medium >= 1.0) {
            return Err(contract("refractive indices must be >= 1"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(contract("camera resolution must be positive"));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let ident = Matrix3::<f64>::identity();
        if (gram - ident).iter().any(|e| e.abs() > 1e-9) {
            return Err(contract("camera rotation is not orthonormal"));
        }
        Ok(())
    }

    /// Focal lengths after the refractive correction.
    pub fn effective_focal(&self) -> Result<(f64, f64)> {
        Ok((
            correct_focal_for_medium(self.fx, self.n_medium, self.n_air)?,
            correct_focal_for_medium(self.fy, self.n_medium, self.n_air)?,
        ))
    }

    pub fn project_point(&self, point: &Vector3<f64>) -> Result<Point2<f64>> {
        let cam = self.rotation * point + self.translation;
        if cam.z <= 1e-9 {
            return Err(Error::BehindCamera { depth: cam.z });
        }
        let (fx, fy) = self.effective_focal()?;
        Ok(Point2::new(fx * cam.x / cam.z + self.cx, fy * cam.y / cam.z + self.cy))
    }
}
