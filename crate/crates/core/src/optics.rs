//! Fresnel-lens physics.
//!
//! A binary-phase diffractive lens focuses by diffraction, so its focal
//! length scales inversely with wavelength: `f(λ)·λ = f0·λ0` at first order.
//! Sweeping the sensor distance `z` therefore selects which wavelength is in
//! focus, with the frequency of the focused light linear in `z`. This module
//! holds the phase profile, the focal law, the `z ↔ λ` mapping, and the
//! geometric defocus blur model the simulator convolves with.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cube::BandGrid;
use crate::error::{Error, Result};

/// Diffractive-lens parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LensConfig {
    /// Refractive index of the lens material.
    pub n0: f64,
    /// Height of the phase element in nanometres. Zero is tolerated for
    /// degenerate test lenses.
    pub h_nm: f64,
    /// Design wavelength in nanometres.
    pub lambda0_nm: f64,
    /// Focal length at the design wavelength, millimetres.
    pub f0_mm: f64,
    /// Clear aperture diameter, millimetres.
    pub aperture_mm: f64,
    /// Diffraction order. Only order 1 drives the focal law used here.
    pub m: u32,
}

impl Default for LensConfig {
    fn default() -> Self {
        LensConfig {
            n0: 1.5,
            h_nm: 550.0,
            lambda0_nm: 685.0,
            f0_mm: 100.0,
            aperture_mm: 10.0,
            m: 1,
        }
    }
}

impl LensConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 <= 1.0 {
            return Err(Error::invalid(format!(
                "refractive index must exceed 1, got {}",
                self.n0
            )));
        }
        if self.h_nm < 0.0 || !self.h_nm.is_finite() {
            return Err(Error::invalid(format!(
                "element height must be non-negative, got {}",
                self.h_nm
            )));
        }
        if self.lambda0_nm <= 0.0 {
            return Err(Error::invalid(format!(
                "design wavelength must be positive, got {}",
                self.lambda0_nm
            )));
        }
        if self.f0_mm <= 0.0 {
            return Err(Error::invalid(format!(
                "focal length must be positive, got {}",
                self.f0_mm
            )));
        }
        if self.aperture_mm <= 0.0 {
            return Err(Error::invalid(format!(
                "aperture must be positive, got {}",
                self.aperture_mm
            )));
        }
        if self.m < 1 {
            return Err(Error::invalid("diffraction order must be at least 1"));
        }
        Ok(())
    }
}

/// Capture geometry: object distance, sweep interval, sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionGeometry {
    /// Object distance from the lens, millimetres.
    pub u_mm: f64,
    /// Near end of the lens sweep interval, millimetres.
    pub z0_mm: f64,
    /// Far end of the lens sweep interval, millimetres.
    pub z1_mm: f64,
    /// Sensor pixel pitch in micrometres.
    pub pixel_pitch_um: f64,
    /// Sensor size as (height, width) in pixels.
    pub sensor_px: (usize, usize),
}

impl Default for AcquisitionGeometry {
    fn default() -> Self {
        AcquisitionGeometry {
            u_mm: 1300.0,
            z0_mm: 80.0,
            z1_mm: 160.0,
            pixel_pitch_um: 2.5,
            sensor_px: (64, 64),
        }
    }
}

impl AcquisitionGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_mm > self.z1_mm && self.z1_mm > self.z0_mm && self.z0_mm > 0.0) {
            return Err(Error::invalid(format!(
                "require u > z1 > z0 > 0, got u={} z1={} z0={}",
                self.u_mm, self.z1_mm, self.z0_mm
            )));
        }
        if self.pixel_pitch_um <= 0.0 {
            return Err(Error::invalid(format!(
                "pixel pitch must be positive, got {}",
                self.pixel_pitch_um
            )));
        }
        Ok(())
    }
}

/// A lens sweep: the reference position, the wavelength focused there, and
/// the positions visited (strictly increasing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusSchedule {
    pub z0_mm: f64,
    pub lambda0_nm: f64,
    pub positions_mm: Vec<f64>,
}

impl FocusSchedule {
    pub fn new(z0_mm: f64, lambda0_nm: f64, positions_mm: Vec<f64>) -> Result<Self> {
        if z0_mm <= 0.0 || lambda0_nm <= 0.0 {
            return Err(Error::invalid(format!(
                "reference position and wavelength must be positive, got z0={z0_mm} lambda0={lambda0_nm}"
            )));
        }
        if positions_mm.is_empty() {
            return Err(Error::invalid("schedule needs at least one position"));
        }
        for (k, &z) in positions_mm.iter().enumerate() {
            if !z.is_finite() || z <= 0.0 {
                return Err(Error::invalid(format!(
                    "position {k} must be positive, got {z}"
                )));
            }
            if k > 0 && z <= positions_mm[k - 1] {
                return Err(Error::invalid(format!(
                    "positions not strictly increasing at index {k}: {} then {z}",
                    positions_mm[k - 1]
                )));
            }
        }
        Ok(FocusSchedule {
            z0_mm,
            lambda0_nm,
            positions_mm,
        })
    }

    pub fn len(&self) -> usize {
        self.positions_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions_mm.is_empty()
    }

    /// Sweep position used as the magnification reference: the middle one.
    pub fn reference_position_mm(&self) -> f64 {
        self.positions_mm[self.positions_mm.len() / 2]
    }

    /// Index of the sweep position whose focused wavelength is nearest to
    /// `lambda_nm`.
    pub fn nearest_position_index(&self, lambda_nm: f64) -> usize {
        let target = position_for_wavelength(self, lambda_nm).unwrap_or(f64::INFINITY);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &z) in self.positions_mm.iter().enumerate() {
            let d = (z - target).abs();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

/// Wavefront phase delay of the element: `Δφ = 2π · n0 · h / λ` radians.
pub fn phase_shift(lens: &LensConfig, lambda_nm: f64) -> Result<f64> {
    if lambda_nm <= 0.0 {
        return Err(Error::invalid(format!(
            "wavelength must be positive, got {lambda_nm}"
        )));
    }
    Ok(2.0 * std::f64::consts::PI * lens.n0 * lens.h_nm / lambda_nm)
}

/// First-order chromatic focal length: `f(λ) = f0 · λ0 / λ`.
pub fn focal_length(lens: &LensConfig, lambda_nm: f64) -> Result<f64> {
    if lambda_nm <= 0.0 {
        return Err(Error::invalid(format!(
            "wavelength must be positive, got {lambda_nm}"
        )));
    }
    Ok(lens.f0_mm * lens.lambda0_nm / lambda_nm)
}

/// Wavelength brought into focus at lens position `z`: `λ(z) = z0·λ0/z`.
/// Equivalently the focused optical frequency is linear in `z`.
pub fn focused_wavelength(schedule: &FocusSchedule, z_mm: f64) -> Result<f64> {
    if z_mm <= 0.0 {
        return Err(Error::invalid(format!(
            "lens position must be positive, got {z_mm}"
        )));
    }
    Ok(schedule.z0_mm * schedule.lambda0_nm / z_mm)
}

/// Lens position that focuses `λ`: exact inverse of [`focused_wavelength`].
pub fn position_for_wavelength(schedule: &FocusSchedule, lambda_nm: f64) -> Result<f64> {
    if lambda_nm <= 0.0 {
        return Err(Error::invalid(format!(
            "wavelength must be positive, got {lambda_nm}"
        )));
    }
    Ok(schedule.z0_mm * schedule.lambda0_nm / lambda_nm)
}

/// Sensor distance satisfying the thin-lens imaging condition at the design
/// wavelength: `1/z = 1/f0 − 1/u`.
pub fn reference_focus_position(lens: &LensConfig, geometry: &AcquisitionGeometry) -> Result<f64> {
    if geometry.u_mm <= lens.f0_mm {
        return Err(Error::invalid(format!(
            "object distance {} must exceed the focal length {} to form a real image",
            geometry.u_mm, lens.f0_mm
        )));
    }
    Ok(lens.f0_mm * geometry.u_mm / (geometry.u_mm - lens.f0_mm))
}

/// Build the sweep schedule that focuses every band of `bands` exactly, one
/// position per band, sorted by increasing lens position (which is
/// decreasing wavelength).
pub fn schedule_for_bands(
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    bands: &BandGrid,
) -> Result<FocusSchedule> {
    lens.validate()?;
    geometry.validate()?;
    let z0 = reference_focus_position(lens, geometry)?;
    let proto = FocusSchedule {
        z0_mm: z0,
        lambda0_nm: lens.lambda0_nm,
        positions_mm: vec![z0],
    };
    let mut positions: Vec<(f64, f64)> = Vec::with_capacity(bands.len());
    for &lambda in bands.wavelengths_nm() {
        let z = position_for_wavelength(&proto, lambda)?;
        if z < geometry.z0_mm || z > geometry.z1_mm {
            return Err(Error::invalid(format!(
                "band {lambda} nm maps to lens position {z:.4} mm outside the sweep interval [{}, {}]",
                geometry.z0_mm, geometry.z1_mm
            )));
        }
        positions.push((z, lambda));
    }
    positions.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    FocusSchedule::new(
        z0,
        lens.lambda0_nm,
        positions.into_iter().map(|(z, _)| z).collect(),
    )
}

/// Geometric blur-disc radius in pixels for wavelength `λ` at lens position
/// `z`: `r = (A/2) · z · |1/f(λ) − 1/u − 1/z| / pitch`. Zero exactly when
/// the imaging condition holds at `λ`.
pub fn defocus_radius_px(
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    lambda_nm: f64,
    z_mm: f64,
) -> Result<f64> {
    if z_mm <= 0.0 {
        return Err(Error::invalid(format!(
            "lens position must be positive, got {z_mm}"
        )));
    }
    if geometry.u_mm <= 0.0 {
        return Err(Error::invalid(format!(
            "object distance must be positive, got {}",
            geometry.u_mm
        )));
    }
    let f = focal_length(lens, lambda_nm)?;
    let defocus = (1.0 / f - 1.0 / geometry.u_mm - 1.0 / z_mm).abs();
    let r_mm = 0.5 * lens.aperture_mm * z_mm * defocus;
    Ok(r_mm / (geometry.pixel_pitch_um * 1e-3))
}

/// PSF shape used when rasterizing the defocus blur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PsfModel {
    /// Uniform disc, exact pixel-area overlap.
    #[default]
    Disc,
    /// Gaussian with sigma = r/2, for smoothness studies.
    Gaussian,
}

/// Area of the intersection of a disc (radius `r`, centred at the origin)
/// with the axis-aligned box `[a, b] × [c, d]`, computed analytically.
fn disc_box_area(r: f64, a: f64, b: f64, c: f64, d: f64) -> f64 {
    let lo = a.max(-r);
    let hi = b.min(r);
    if lo >= hi || c >= d || c >= r || d <= -r {
        return 0.0;
    }
    // antiderivative of the chord half-height sqrt(r^2 - x^2)
    let g_int = |x: f64| {
        let xc = x.clamp(-r, r);
        0.5 * (xc * (r * r - xc * xc).max(0.0).sqrt() + r * r * (xc / r).clamp(-1.0, 1.0).asin())
    };
    let mut cuts = vec![lo, hi];
    for &y in &[c, d] {
        if y.abs() < r {
            let x = (r * r - y * y).sqrt();
            for cand in [-x, x] {
                if cand > lo && cand < hi {
                    cuts.push(cand);
                }
            }
        }
    }
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (x1, x2) = (w[0], w[1]);
        if x2 - x1 <= 1e-15 {
            continue;
        }
        let xm = 0.5 * (x1 + x2);
        let gm = (r * r - xm * xm).max(0.0).sqrt();
        let top = d.min(gm);
        let bot = c.max(-gm);
        if top <= bot {
            continue;
        }
        let top_int = if d < gm {
            d * (x2 - x1)
        } else {
            g_int(x2) - g_int(x1)
        };
        let bot_int = if c > -gm {
            c * (x2 - x1)
        } else {
            -(g_int(x2) - g_int(x1))
        };
        area += top_int - bot_int;
    }
    area
}

/// Normalized blur-disc kernel for radius `r` pixels. Each tap holds the
/// exact overlap area of its pixel square with the disc; the kernel sums to
/// one. Radii below half a pixel collapse to the 1x1 identity kernel.
pub fn psf_kernel(r_px: f64) -> Array2<f64> {
    psf_kernel_model(r_px, PsfModel::Disc)
}

pub fn psf_kernel_model(r_px: f64, model: PsfModel) -> Array2<f64> {
    let r = r_px.max(0.0);
    if r < 0.5 {
        return Array2::from_elem((1, 1), 1.0);
    }
    let half = r.ceil() as usize;
    let k = 2 * half + 1;
    let mut kernel = Array2::zeros((k, k));
    match model {
        PsfModel::Disc => {
            for i in 0..k {
                for j in 0..k {
                    let dy = i as f64 - half as f64;
                    let dx = j as f64 - half as f64;
                    kernel[[i, j]] = disc_box_area(r, dx - 0.5, dx + 0.5, dy - 0.5, dy + 0.5);
                }
            }
        }
        PsfModel::Gaussian => {
            let sigma = r / 2.0;
            let inv = 1.0 / (2.0 * sigma * sigma);
            for i in 0..k {
                for j in 0..k {
                    let dy = i as f64 - half as f64;
                    let dx = j as f64 - half as f64;
                    kernel[[i, j]] = (-(dx * dx + dy * dy) * inv).exp();
                }
            }
        }
    }
    let sum = kernel.sum();
    kernel.mapv_inplace(|v| v / sum);
    kernel
}
