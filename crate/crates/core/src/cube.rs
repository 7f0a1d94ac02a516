//! Core containers: band grids, spectral cubes, grayscale frames and stacks.
//!
//! All containers validate their invariants on construction and are immutable
//! afterwards, so they can be shared read-only across parallel workers.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Default number of spectral bands.
pub const DEFAULT_BANDS: usize = 50;
/// Default spectral range endpoints in nanometres.
pub const DEFAULT_RANGE_NM: (f64, f64) = (470.0, 900.0);

/// An ordered grid of band-centre wavelengths in nanometres.
#[derive(Debug, Clone, PartialEq)]
pub struct BandGrid {
    wavelengths_nm: Vec<f64>,
}

impl BandGrid {
    /// A grid from explicit wavelengths; must be strictly increasing and positive.
    pub fn new(wavelengths_nm: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.is_empty() {
            return Err(Error::invalid("band grid must contain at least one band"));
        }
        for (i, &w) in wavelengths_nm.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::invalid(format!(
                    "band {i} has non-positive wavelength {w}"
                )));
            }
            if i > 0 && w <= wavelengths_nm[i - 1] {
                return Err(Error::invalid(format!(
                    "band grid not strictly increasing at index {i}: {} then {w}",
                    wavelengths_nm[i - 1]
                )));
            }
        }
        Ok(BandGrid { wavelengths_nm })
    }

    /// `count` uniform samples spanning `[lo, hi]` inclusive.
    pub fn uniform(lo_nm: f64, hi_nm: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("band grid must contain at least one band"));
        }
        if count == 1 {
            return BandGrid::new(vec![lo_nm]);
        }
        let step = (hi_nm - lo_nm) / (count - 1) as f64;
        BandGrid::new((0..count).map(|i| lo_nm + step * i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths_nm.is_empty()
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn min_nm(&self) -> f64 {
        self.wavelengths_nm[0]
    }

    pub fn max_nm(&self) -> f64 {
        *self.wavelengths_nm.last().unwrap()
    }

    /// Index of the band closest to `lambda_nm`.
    pub fn nearest_band(&self, lambda_nm: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &w) in self.wavelengths_nm.iter().enumerate() {
            let d = (w - lambda_nm).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

impl Default for BandGrid {
    /// 50 uniform bands spanning 470–900 nm inclusive.
    fn default() -> Self {
        BandGrid::uniform(DEFAULT_RANGE_NM.0, DEFAULT_RANGE_NM.1, DEFAULT_BANDS)
            .expect("default grid parameters are valid")
    }
}

/// An `L × H × W` radiance tensor with its band grid.
///
/// Values are linear relative radiance, finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    bands: BandGrid,
    data: Array3<f64>,
}

impl SpectralCube {
    pub fn new(bands: BandGrid, data: Array3<f64>) -> Result<Self> {
        let (l, _, _) = data.dim();
        if l != bands.len() {
            return Err(Error::invalid(format!(
                "cube has {l} bands but grid has {}",
                bands.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!(
                "cube values must be finite and non-negative, found {v}"
            )));
        }
        Ok(SpectralCube { bands, data })
    }

    /// All-zero cube on the given grid.
    pub fn zeros(bands: BandGrid, height: usize, width: usize) -> Self {
        let data = Array3::zeros((bands.len(), height, width));
        SpectralCube { bands, data }
    }

    pub fn bands(&self) -> &BandGrid {
        &self.bands
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn num_bands(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// Unweighted band mean, a monochrome luminance stand-in.
    pub fn luminance(&self) -> Array2<f64> {
        let (l, h, w) = self.data.dim();
        let mut out = Array2::zeros((h, w));
        for b in 0..l {
            out += &self.data.index_axis(ndarray::Axis(0), b);
        }
        out / l as f64
    }

    pub fn into_parts(self) -> (BandGrid, Array3<f64>) {
        (self.bands, self.data)
    }
}

/// A single monochrome frame with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleImage {
    data: Array2<f64>,
}

/// Minimum edge length for a grayscale frame.
pub const MIN_IMAGE_DIM: usize = 8;

impl GrayscaleImage {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h < MIN_IMAGE_DIM || w < MIN_IMAGE_DIM {
            return Err(Error::invalid(format!(
                "image must be at least {MIN_IMAGE_DIM}x{MIN_IMAGE_DIM}, got {h}x{w}"
            )));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::invalid(format!(
                "image values must lie in [0, 1], found {v}"
            )));
        }
        Ok(GrayscaleImage { data })
    }

    /// Clamps out-of-range values into `[0, 1]` instead of rejecting them,
    /// returning how many were clamped. Sensor data can overflow after
    /// normalization; loaders use this path.
    pub fn new_clamped(mut data: Array2<f64>) -> Result<(Self, usize)> {
        let (h, w) = data.dim();
        if h < MIN_IMAGE_DIM || w < MIN_IMAGE_DIM {
            return Err(Error::invalid(format!(
                "image must be at least {MIN_IMAGE_DIM}x{MIN_IMAGE_DIM}, got {h}x{w}"
            )));
        }
        let mut clamped = 0usize;
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "image contains non-finite value {v}"
                )));
            }
            if *v < 0.0 || *v > 1.0 {
                *v = v.clamp(0.0, 1.0);
                clamped += 1;
            }
        }
        Ok((GrayscaleImage { data }, clamped))
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// `K` monochrome frames, each tagged with the lens position it was captured at.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleStack {
    frames: Vec<GrayscaleImage>,
    lens_positions_mm: Vec<f64>,
}

impl GrayscaleStack {
    pub fn new(frames: Vec<GrayscaleImage>, lens_positions_mm: Vec<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("stack must contain at least one frame"));
        }
        if frames.len() != lens_positions_mm.len() {
            return Err(Error::invalid(format!(
                "{} frames but {} lens positions",
                frames.len(),
                lens_positions_mm.len()
            )));
        }
        let dims = (frames[0].height(), frames[0].width());
        for (k, f) in frames.iter().enumerate() {
            if (f.height(), f.width()) != dims {
                return Err(Error::invalid(format!(
                    "frame {k} is {}x{} but frame 0 is {}x{}",
                    f.height(),
                    f.width(),
                    dims.0,
                    dims.1
                )));
            }
        }
        for (k, &z) in lens_positions_mm.iter().enumerate() {
            if !z.is_finite() || z <= 0.0 {
                return Err(Error::invalid(format!(
                    "lens position {k} must be positive, got {z}"
                )));
            }
            if k > 0 && z <= lens_positions_mm[k - 1] {
                return Err(Error::invalid(format!(
                    "lens positions not strictly increasing at index {k}: {} then {z}",
                    lens_positions_mm[k - 1]
                )));
            }
        }
        Ok(GrayscaleStack {
            frames,
            lens_positions_mm,
        })
    }

    pub fn frames(&self) -> &[GrayscaleImage] {
        &self.frames
    }

    pub fn lens_positions_mm(&self) -> &[f64] {
        &self.lens_positions_mm
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }
}
