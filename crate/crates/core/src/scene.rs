//! Deterministic synthetic scenes: piecewise-constant shapes with smooth
//! Gaussian-peak spectra, standing in for lab captures during end-to-end
//! runs and tests.

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::{BandGrid, SpectralCube};
use crate::error::{Error, Result};

/// Scene description: how many shapes of each kind, their spectrum model,
/// the canvas, and the seed that makes it reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub bands_nm: Vec<f64>,
    pub rects: usize,
    pub discs: usize,
    /// Rectangles with a linear amplitude ramp across their width.
    pub gradients: usize,
    pub peaks_per_shape: usize,
    /// Flat broadband pedestal each shape's spectrum sits on, drawn from
    /// this range (halogen-like illumination of reflective objects).
    pub base_amplitude: (f64, f64),
    /// Range the Gaussian peak centres are drawn from, in nm. Must lie
    /// within the band range.
    pub peak_center_nm: (f64, f64),
    pub peak_width_nm: (f64, f64),
    pub peak_amplitude: (f64, f64),
    /// Flat spectral floor added everywhere.
    pub background: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            bands_nm: BandGrid::default().wavelengths_nm().to_vec(),
            rects: 3,
            discs: 3,
            gradients: 1,
            peaks_per_shape: 2,
            base_amplitude: (0.25, 0.55),
            peak_center_nm: (480.0, 890.0),
            peak_width_nm: (50.0, 140.0),
            peak_amplitude: (0.3, 1.0),
            background: 0.02,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bands = BandGrid::new(self.bands_nm.clone())?;
        if self.peak_center_nm.0 > self.peak_center_nm.1 {
            return Err(Error::invalid("peak centre range is inverted"));
        }
        if self.rects + self.discs + self.gradients > 0
            && (self.peak_center_nm.0 < bands.min_nm() || self.peak_center_nm.1 > bands.max_nm())
        {
            return Err(Error::invalid(format!(
                "peak centres {:?} fall outside the band range [{}, {}]",
                self.peak_center_nm,
                bands.min_nm(),
                bands.max_nm()
            )));
        }
        if self.peak_width_nm.0 <= 0.0 || self.peak_width_nm.0 > self.peak_width_nm.1 {
            return Err(Error::invalid(
                "peak width range must be positive and ordered",
            ));
        }
        if self.peak_amplitude.0 < 0.0 || self.peak_amplitude.0 > self.peak_amplitude.1 {
            return Err(Error::invalid(
                "amplitude range must be non-negative and ordered",
            ));
        }
        if self.base_amplitude.0 < 0.0 || self.base_amplitude.0 > self.base_amplitude.1 {
            return Err(Error::invalid(
                "base amplitude range must be non-negative and ordered",
            ));
        }
        if self.background < 0.0 {
            return Err(Error::invalid("background must be non-negative"));
        }
        Ok(())
    }
}

fn draw_spectrum(rng: &mut ChaCha8Rng, spec: &SceneSpec, bands: &BandGrid) -> Vec<f64> {
    let base = if spec.base_amplitude.0 == spec.base_amplitude.1 {
        spec.base_amplitude.0
    } else {
        rng.random_range(spec.base_amplitude.0..=spec.base_amplitude.1)
    };
    let mut spectrum = vec![base; bands.len()];
    for _ in 0..spec.peaks_per_shape {
        let center = if spec.peak_center_nm.0 == spec.peak_center_nm.1 {
            spec.peak_center_nm.0
        } else {
            rng.random_range(spec.peak_center_nm.0..=spec.peak_center_nm.1)
        };
        let width = if spec.peak_width_nm.0 == spec.peak_width_nm.1 {
            spec.peak_width_nm.0
        } else {
            rng.random_range(spec.peak_width_nm.0..=spec.peak_width_nm.1)
        };
        let amp = if spec.peak_amplitude.0 == spec.peak_amplitude.1 {
            spec.peak_amplitude.0
        } else {
            rng.random_range(spec.peak_amplitude.0..=spec.peak_amplitude.1)
        };
        for (b, &lambda) in bands.wavelengths_nm().iter().enumerate() {
            let t = (lambda - center) / width;
            spectrum[b] += amp * (-0.5 * t * t).exp();
        }
    }
    spectrum
}

/// Render the scene into a spectral cube. Spatially piecewise constant
/// (except gradient shapes), smooth in the spectrum, scaled into `[0, 1]`.
pub fn synth(spec: &SceneSpec) -> Result<SpectralCube> {
    spec.validate()?;
    let bands = BandGrid::new(spec.bands_nm.clone())?;
    let (l, h, w) = (bands.len(), spec.height, spec.width);
    let mut data = Array3::from_elem((l, h, w), spec.background);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    for _ in 0..spec.rects {
        let spectrum = draw_spectrum(&mut rng, spec, &bands);
        let cy = rng.random_range(0..h);
        let cx = rng.random_range(0..w);
        let half_h = rng.random_range(2..=(h / 4).max(2));
        let half_w = rng.random_range(2..=(w / 4).max(2));
        for b in 0..l {
            for i in cy.saturating_sub(half_h)..(cy + half_h).min(h) {
                for j in cx.saturating_sub(half_w)..(cx + half_w).min(w) {
                    data[[b, i, j]] += spectrum[b];
                }
            }
        }
    }
    for _ in 0..spec.discs {
        let spectrum = draw_spectrum(&mut rng, spec, &bands);
        let cy = rng.random_range(0..h) as f64;
        let cx = rng.random_range(0..w) as f64;
        let radius = rng.random_range(2.0..=(h.min(w) as f64 / 4.0).max(2.0));
        for b in 0..l {
            for i in 0..h {
                for j in 0..w {
                    let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                    if d2 <= radius * radius {
                        data[[b, i, j]] += spectrum[b];
                    }
                }
            }
        }
    }
    for _ in 0..spec.gradients {
        let spectrum = draw_spectrum(&mut rng, spec, &bands);
        let cy = rng.random_range(0..h);
        let cx = rng.random_range(0..w);
        let half_h = rng.random_range(3..=(h / 3).max(3));
        let half_w = rng.random_range(3..=(w / 3).max(3));
        let x_lo = cx.saturating_sub(half_w);
        let x_hi = (cx + half_w).min(w);
        let span = (x_hi - x_lo).max(1) as f64;
        for b in 0..l {
            for i in cy.saturating_sub(half_h)..(cy + half_h).min(h) {
                for j in x_lo..x_hi {
                    let ramp = (j - x_lo) as f64 / span;
                    data[[b, i, j]] += spectrum[b] * ramp;
                }
            }
        }
    }

    let max = data.iter().copied().fold(0.0f64, f64::max);
    if max > 1.0 {
        data.mapv_inplace(|v| v / max);
    }
    SpectralCube::new(bands, data)
}
