use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::geometry::surface::{normal_from_gradient, SensorSurface, SurfaceKind};
use crate::raster::{GridSpec, Mask, NormalMap, RasterGrid};

/// Diameter 5.0 mm calibration ball.
pub const DEFAULT_PROBE_RADIUS: f64 = 2.5;

/// Rigid sphere pressed into the membrane along the camera axis.
///
/// The probe comes from outside the sensor and pushes the membrane toward the
/// camera, so the deformed surface follows the sphere's upper cap
/// `z = center.z + sqrt(r² - d²)`. `center.z` is placed so the top of the
/// sphere sits `indentation` mm above the undeformed surface at `(center.x, center.y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereProbe {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub indentation: f64,
}

impl SphereProbe {
    pub fn pressing(surface: &SurfaceKind, x: f64, y: f64, radius: f64, indentation: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(contract(format!("probe radius must be positive, got {radius}")));
        }
        if !(indentation >= 0.0) {
            return Err(contract(format!("indentation must be >= 0, got {indentation}")));
        }
        let base = surface.height(x, y)?;
        Ok(Self { center: Vector3::new(x, y, base + indentation - radius), radius, indentation })
    }

    /// Height of the sphere's upper cap, `None` outside its footprint.
    #[inline]
    pub fn cap_height(&self, x: f64, y: f64) -> Option<f64> {
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        let arg = self.radius * self.radius - dx * dx - dy * dy;
        (arg >= 0.0).then(|| self.center.z + arg.sqrt())
    }

    #[inline]
    pub fn cap_normal(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let inv = 1.0 / self.radius;
        [(x - self.center.x) * inv, (y - self.center.y) * inv, (z - self.center.z) * inv]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndentOptions {
    /// Gaussian-smooth the crease at the contact boundary.
    #[serde(default)]
    pub smooth_crease: bool,
}

pub const CREASE_SIGMA_PX: f64 = 2.0;
pub const CREASE_BAND_PX: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Indentation {
    pub deformed: RasterGrid,
    pub contact: Mask,
    pub normals: NormalMap,
}

/// Rigid union of a height raster with the probe cap: each valid pixel becomes
/// `max(height, cap)`. Returns the pixels where the cap won by a positive margin.
pub fn apply_probe(heights: &mut RasterGrid, grid: &GridSpec, probe: &SphereProbe) -> Mask {
    let mut contact = Mask::new(grid.width, grid.height, false);
    if probe.indentation == 0.0 {
        return contact;
    }
    for row in 0..grid.height {
        for col in 0..grid.width {
            if !heights.mask.get(col, row) {
                continue;
            }
            let (x, y) = grid.pixel_to_mm(col, row);
            if let Some(zs) = probe.cap_height(x, y) {
                if zs - heights.get(col, row) > 0.0 {
                    heights.set(col, row, zs);
                    contact.set(col, row, true);
                }
            }
        }
    }
    contact
}

/// Presses `probe` into `surface`, returning deformed heights, the contact
/// mask and ground-truth normals (sphere normal in contact, base normal elsewhere).
pub fn indent_surface(surface: &SensorSurface, probe: &SphereProbe, options: IndentOptions) -> Result<Indentation> {
    if !(probe.radius > 0.0 && probe.indentation >= 0.0) {
        return Err(contract("probe needs radius > 0 and indentation >= 0"));
    }
    let grid = surface.grid;
    let mut deformed = surface.heights.clone();
    let contact = apply_probe(&mut deformed, &grid, probe);
    let mut normals = surface.normal_map();
    for row in 0..grid.height {
        for col in 0..grid.width {
            if contact.get(col, row) {
                let (x, y) = grid.pixel_to_mm(col, row);
                normals.set(row * grid.width + col, probe.cap_normal(x, y, deformed.get(col, row)));
            }
        }
    }
    if options.smooth_crease && !contact.is_empty() {
        smooth_crease(&mut deformed, &mut normals, &contact, &grid);
    }
    Ok(Indentation { deformed, contact, normals })
}

fn smooth_crease(heights: &mut RasterGrid, normals: &mut NormalMap, contact: &Mask, grid: &GridSpec) {
    let (w, h) = (grid.width, grid.height);
    let band = crease_band(contact, &heights.mask);

    let radius = (3.0 * CREASE_SIGMA_PX).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * CREASE_SIGMA_PX * CREASE_SIGMA_PX)).exp())
        .collect();

    let source = heights.clone();
    for row in 0..h {
        for col in 0..w {
            if !band.get(col, row) {
                continue;
            }
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for dr in -radius..=radius {
                let r = row as isize + dr;
                if r < 0 || r >= h as isize {
                    continue;
                }
                for dc in -radius..=radius {
                    let c = col as isize + dc;
                    if c < 0 || c >= w as isize || !source.mask.get(c as usize, r as usize) {
                        continue;
                    }
                    let wgt = kernel[(dr + radius) as usize] * kernel[(dc + radius) as usize];
                    acc += wgt * source.get(c as usize, r as usize);
                    wsum += wgt;
                }
            }
            heights.set(col, row, acc / wsum);
        }
    }

    let pitch = grid.pixel_pitch;
    for row in 0..h {
        for col in 0..w {
            if !band.get(col, row) {
                continue;
            }
            let slope = |a: Option<(usize, usize)>, b: Option<(usize, usize)>| -> f64 {
                let val = |p: (usize, usize)| heights.get(p.0, p.1);
                match (a, b) {
                    (Some(lo), Some(hi)) => (val(hi) - val(lo)) / (2.0 * pitch),
                    (None, Some(hi)) => (val(hi) - heights.get(col, row)) / pitch,
                    (Some(lo), None) => (heights.get(col, row) - val(lo)) / pitch,
                    (None, None) => 0.0,
                }
            };
            let valid = |c: isize, r: isize| -> Option<(usize, usize)> {
                (c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h && heights.mask.get(c as usize, r as usize))
                    .then_some((c as usize, r as usize))
            };
            let (ci, ri) = (col as isize, row as isize);
            let zx = slope(valid(ci - 1, ri), valid(ci + 1, ri));
            let zy = slope(valid(ci, ri - 1), valid(ci, ri + 1));
            normals.set(row * w + col, normal_from_gradient(zx, zy));
        }
    }
}

/// Valid pixels within `CREASE_BAND_PX` (Chebyshev) of a contact/non-contact edge.
fn crease_band(contact: &Mask, valid: &Mask) -> Mask {
    let (w, h) = (contact.width, contact.height);
    let mut edge = Mask::new(w, h, false);
    for row in 0..h {
        for col in 0..w {
            let here = contact.get(col, row);
            let differs = (col + 1 < w && contact.get(col + 1, row) != here)
                || (row + 1 < h && contact.get(col, row + 1) != here);
            if differs {
                edge.set(col, row, true);
            }
        }
    }
    let b = CREASE_BAND_PX as isize;
    let mut band = Mask::new(w, h, false);
    for row in 0..h {
        for col in 0..w {
            if !edge.get(col, row) {
                continue;
            }
            for dr in -b..=b {
                for dc in -b..=b {
                    let (c, r) = (col as isize + dc, row as isize + dr);
                    if c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h && valid.get(c as usize, r as usize) {
                        band.set(c as usize, r as usize, true);
                    }
                }
            }
        }
    }
    band
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn plane_surface(w: usize, h: usize, pitch: f64) -> SensorSurface {
        SensorSurface::new(SurfaceKind::Plane, GridSpec::new(w, h, pitch).unwrap()).unwrap()
    }

    #[test]
    fn zero_indentation_is_identity() {
        let surf = SensorSurface::new(
            SurfaceKind::SphereCap { radius: 20.0, apex_height: 0.0 },
            GridSpec::new(60, 40, 0.1).unwrap(),
        )
        .unwrap();
        let probe = SphereProbe::pressing(&surf.kind, 0.3, -0.2, 2.5, 0.0).unwrap();
        let out = indent_surface(&surf, &probe, IndentOptions::default()).unwrap();
        assert_eq!(out.deformed, surf.heights);
        assert!(out.contact.is_empty());
        assert_eq!(out.normals, surf.normal_map());
    }

    #[test]
    fn contact_disc_on_plane_matches_analytic_radius() {
        // r = 2.5, delta = 0.5 -> contact radius sqrt(2 r delta - delta^2) = 1.5 mm
        let pitch = 0.02;
        let surf = plane_surface(201, 201, pitch);
        let probe = SphereProbe::pressing(&surf.kind, 0.0, 0.0, 2.5, 0.5).unwrap();
        let out = indent_surface(&surf, &probe, IndentOptions::default()).unwrap();
        let disc_radius = (2.0f64 * 2.5 * 0.5 - 0.25).sqrt();
        assert!((disc_radius - 1.5).abs() < 1e-15);
        for row in 0..201 {
            for col in 0..201 {
                let (x, y) = surf.grid.pixel_to_mm(col, row);
                let d = (x * x + y * y).sqrt();
                if d < disc_radius - pitch {
                    assert!(out.contact.get(col, row), "inside disc at d={d}");
                }
                if d > disc_radius + pitch {
                    assert!(!out.contact.get(col, row), "outside disc at d={d}");
                }
            }
        }
        let area_px = PI * (disc_radius / pitch).powi(2);
        let perimeter_px = 2.0 * PI * disc_radius / pitch;
        assert!((out.contact.count() as f64 - area_px).abs() < perimeter_px);
        out.normals.validate(1e-12).unwrap();
        let apex = 100 * 201 + 100;
        assert!((out.deformed.values[apex] - 0.5).abs() < 1e-12);
    }

    /// Independently coded evaluator: explicit sphere-above-surface test.
    fn brute_force_contact(surf: &SensorSurface, cx: f64, cy: f64, r: f64, delta: f64) -> usize {
        let top = surf.kind.height(cx, cy).unwrap() + delta;
        let mut count = 0;
        for row in 0..surf.grid.height {
            for col in 0..surf.grid.width {
                let (x, y) = surf.grid.pixel_to_mm(col, row);
                let Ok(base) = surf.kind.height(x, y) else { continue };
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                if d2 > r * r {
                    continue;
                }
                let sphere_z = (top - r) + (r * r - d2).sqrt();
                if sphere_z > base {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn contact_on_sphere_cap_matches_brute_force() {
        let surf = SensorSurface::new(
            SurfaceKind::SphereCap { radius: 20.0, apex_height: 0.0 },
            GridSpec::new(160, 120, 0.1).unwrap(),
        )
        .unwrap();
        for &(cx, cy, delta) in &[(0.0, 0.0, 0.5), (3.1, -2.2, 0.8), (-5.0, 4.0, 0.3)] {
            let probe = SphereProbe::pressing(&surf.kind, cx, cy, 2.5, delta).unwrap();
            let out = indent_surface(&surf, &probe, IndentOptions::default()).unwrap();
            let expected = brute_force_contact(&surf, cx, cy, 2.5, delta);
            assert!(expected > 0);
            assert_eq!(out.contact.count(), expected);
        }
    }

    #[test]
    fn repeated_probe_is_idempotent() {
        let surf = SensorSurface::new(
            SurfaceKind::EllipsoidCap { a: 20.0, b: 15.0, c: 5.0, apex_height: 0.0 },
            GridSpec::new(80, 60, 0.1).unwrap(),
        )
        .unwrap();
        let probe = SphereProbe::pressing(&surf.kind, 1.0, 0.5, 2.5, 0.7).unwrap();
        let mut once = surf.heights.clone();
        let first = apply_probe(&mut once, &surf.grid, &probe);
        let mut twice = once.clone();
        apply_probe(&mut twice, &surf.grid, &probe);
        assert!(!first.is_empty());
        assert_eq!(once, twice);
    }

    #[test]
    fn deeper_press_grows_contact() {
        let surf = SensorSurface::new(
            SurfaceKind::CylinderSection { radius: 18.0, apex_height: 0.0 },
            GridSpec::new(80, 60, 0.1).unwrap(),
        )
        .unwrap();
        let mut prev: Option<Mask> = None;
        for delta in [0.1, 0.3, 0.6, 1.0] {
            let probe = SphereProbe::pressing(&surf.kind, -0.4, 0.3, 2.5, delta).unwrap();
            let out = indent_surface(&surf, &probe, IndentOptions::default()).unwrap();
            if let Some(p) = &prev {
                assert!(p.is_subset_of(&out.contact));
            }
            prev = Some(out.contact);
        }
    }

    #[test]
    fn crease_smoothing_keeps_normals_valid() {
        let surf = plane_surface(120, 120, 0.05);
        let probe = SphereProbe::pressing(&surf.kind, 0.0, 0.0, 2.5, 0.4).unwrap();
        let rigid = indent_surface(&surf, &probe, IndentOptions::default()).unwrap();
        let smooth = indent_surface(&surf, &probe, IndentOptions { smooth_crease: true }).unwrap();
        smooth.normals.validate(1e-9).unwrap();
        assert_eq!(rigid.contact, smooth.contact);
        assert_ne!(rigid.deformed, smooth.deformed);
        // far from the crease nothing moves
        assert_eq!(rigid.deformed.get(0, 0), smooth.deformed.get(0, 0));
        assert_eq!(rigid.deformed.get(60, 60), smooth.deformed.get(60, 60));
    }

    #[test]
    fn rejects_negative_indentation() {
        assert!(SphereProbe::pressing(&SurfaceKind::Plane, 0.0, 0.0, 2.5, -0.1).is_err());
        assert!(SphereProbe::pressing(&SurfaceKind::Plane, 0.0, 0.0, 0.0, 0.1).is_err());
    }
}
