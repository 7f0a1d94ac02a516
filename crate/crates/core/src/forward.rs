//! Forward model: render the grayscale frames a focal-sweep capture would
//! produce from a ground-truth spectral cube.
//!
//! At lens position `z` every band is blurred by its own defocus PSF (sharp
//! only where the imaging condition holds), the monochrome sensor integrates
//! the blurred bands with its spectral response, the changing lens distance
//! scales the image, and sensor noise lands on top. The whole stack is
//! normalized by its noiseless maximum so the `[0, 1]` clamp stays inactive
//! in noiseless runs.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{GrayscaleImage, GrayscaleStack, SpectralCube};
use crate::error::{Error, Result};
use crate::optics::{
    defocus_radius_px, position_for_wavelength, psf_kernel_model, reference_focus_position,
    AcquisitionGeometry, FocusSchedule, LensConfig, PsfModel,
};
use crate::preprocess::{clampi, warp_array_affine, AffineTransform2D};

/// Sensor noise description. Deterministic for a given seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Gaussian read-noise sigma, in normalized intensity units.
    pub sigma: f64,
    /// Photons per unit intensity for the shot-noise path.
    pub photon_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    None,
    Gaussian,
    PoissonGaussian,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            kind: NoiseKind::None,
            sigma: 0.01,
            photon_scale: 10_000.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 {
            return Err(Error::invalid(format!(
                "noise sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if self.photon_scale <= 0.0 {
            return Err(Error::invalid(format!(
                "photon scale must be positive, got {}",
                self.photon_scale
            )));
        }
        Ok(())
    }
}

/// Relative spectral response of the monochrome sensor, one weight per band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorResponse {
    pub weights: Vec<f64>,
}

impl SensorResponse {
    /// Flat response integrating all `l` bands equally (weights `1/l`).
    pub fn flat(l: usize) -> Self {
        SensorResponse {
            weights: vec![1.0 / l as f64; l],
        }
    }

    pub fn validate(&self, num_bands: usize) -> Result<()> {
        if self.weights.len() != num_bands {
            return Err(Error::invalid(format!(
                "sensor response has {} weights for {num_bands} bands",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid(
                "sensor response weights must be non-negative",
            ));
        }
        if self.weights.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid("sensor response must not be all zero"));
        }
        Ok(())
    }
}

/// Simulation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Divide the stack by its noiseless maximum before noise and clamping.
    pub normalize: bool,
    /// Keep the per-position magnification in the output instead of
    /// rendering at the reference scale, to exercise blind alignment.
    pub emit_unaligned: bool,
    pub psf_model: PsfModel,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            normalize: true,
            emit_unaligned: false,
            psf_model: PsfModel::Disc,
        }
    }
}

/// Direct spatial convolution with replicate-edge padding.
pub(crate) fn conv2_replicate(input: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = input.dim();
    let (kh, kw) = kernel.dim();
    if kh == 1 && kw == 1 {
        return input * kernel[[0, 0]];
    }
    let (cy, cx) = (kh as i64 / 2, kw as i64 / 2);
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in 0..kh {
                for b in 0..kw {
                    let yi = clampi(i as i64 + a as i64 - cy, h);
                    let xi = clampi(j as i64 + b as i64 - cx, w);
                    acc += kernel[[a, b]] * input[[yi, xi]];
                }
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Exact adjoint of [`conv2_replicate`]: scatters every tap contribution
/// back through the same clamped index map.
pub(crate) fn conv2_replicate_adjoint(upstream: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = upstream.dim();
    let (kh, kw) = kernel.dim();
    if kh == 1 && kw == 1 {
        return upstream * kernel[[0, 0]];
    }
    let (cy, cx) = (kh as i64 / 2, kw as i64 / 2);
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let g = upstream[[i, j]];
            if g == 0.0 {
                continue;
            }
            for a in 0..kh {
                for b in 0..kw {
                    let yi = clampi(i as i64 + a as i64 - cy, h);
                    let xi = clampi(j as i64 + b as i64 - cx, w);
                    out[[yi, xi]] += kernel[[a, b]] * g;
                }
            }
        }
    }
    out
}

fn check_frame_inputs(
    cube: &SpectralCube,
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    z_mm: f64,
    response: &SensorResponse,
) -> Result<()> {
    lens.validate()?;
    geometry.validate()?;
    response.validate(cube.num_bands())?;
    if z_mm < geometry.z0_mm || z_mm > geometry.z1_mm {
        return Err(Error::invalid(format!(
            "lens position {z_mm} outside the sweep interval [{}, {}]",
            geometry.z0_mm, geometry.z1_mm
        )));
    }
    // every band must be reachable somewhere in the sweep
    let z_ref = reference_focus_position(lens, geometry)?;
    let proto = FocusSchedule::new(z_ref, lens.lambda0_nm, vec![z_ref])?;
    for &lambda in cube.bands().wavelengths_nm() {
        let z_focus = position_for_wavelength(&proto, lambda)?;
        if z_focus < geometry.z0_mm || z_focus > geometry.z1_mm {
            return Err(Error::invalid(format!(
                "band {lambda} nm focuses at {z_focus:.4} mm, outside the sweep interval [{}, {}]",
                geometry.z0_mm, geometry.z1_mm
            )));
        }
    }
    Ok(())
}

/// The linear optical image at lens position `z`: every band convolved with
/// its defocus PSF and integrated by the sensor response. No magnification
/// resampling, normalization, noise, or clamping; this is the operator the
/// variational solver inverts.
pub fn simulate_frame_linear(
    cube: &SpectralCube,
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    z_mm: f64,
    response: &SensorResponse,
    options: &SimOptions,
) -> Result<Array2<f64>> {
    check_frame_inputs(cube, lens, geometry, z_mm, response)?;
    Ok(frame_from_bands(
        cube, lens, geometry, z_mm, response, options,
    ))
}

fn frame_from_bands(
    cube: &SpectralCube,
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    z_mm: f64,
    response: &SensorResponse,
    options: &SimOptions,
) -> Array2<f64> {
    let (l, h, w) = cube.data().dim();
    let blurred: Vec<Array2<f64>> = (0..l)
        .into_par_iter()
        .map(|b| {
            let weight = response.weights[b];
            if weight == 0.0 {
                return Array2::zeros((h, w));
            }
            let lambda = cube.bands().wavelengths_nm()[b];
            let r = defocus_radius_px(lens, geometry, lambda, z_mm).expect("inputs validated");
            let kernel = psf_kernel_model(r, options.psf_model);
            let band = cube.data().index_axis(ndarray::Axis(0), b).to_owned();
            conv2_replicate(&band, &kernel) * weight
        })
        .collect();
    let mut acc = Array2::zeros((h, w));
    for plane in blurred {
        acc += &plane;
    }
    acc
}

fn psf_table(
    cube: &SpectralCube,
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    z_mm: f64,
    model: PsfModel,
) -> Vec<Array2<f64>> {
    cube.bands()
        .wavelengths_nm()
        .iter()
        .map(|&lambda| {
            let r = defocus_radius_px(lens, geometry, lambda, z_mm).expect("inputs validated");
            psf_kernel_model(r, model)
        })
        .collect()
}

/// Forward application and adjoint of the fixed-PSF linear operator for one
/// frame, used by the variational solver.
pub(crate) struct FrameOperator {
    pub kernels: Vec<Array2<f64>>,
    pub weights: Vec<f64>,
}

impl FrameOperator {
    pub fn new(
        cube_shape: &SpectralCube,
        lens: &LensConfig,
        geometry: &AcquisitionGeometry,
        z_mm: f64,
        response: &SensorResponse,
        model: PsfModel,
    ) -> Self {
        FrameOperator {
            kernels: psf_table(cube_shape, lens, geometry, z_mm, model),
            weights: response.weights.clone(),
        }
    }

    pub fn apply(&self, x: &Array3<f64>) -> Array2<f64> {
        let (l, h, w) = x.dim();
        let planes: Vec<Array2<f64>> = (0..l)
            .into_par_iter()
            .map(|b| {
                if self.weights[b] == 0.0 {
                    return Array2::zeros((h, w));
                }
                let band = x.index_axis(ndarray::Axis(0), b).to_owned();
                conv2_replicate(&band, &self.kernels[b]) * self.weights[b]
            })
            .collect();
        let mut acc = Array2::zeros((h, w));
        for p in planes {
            acc += &p;
        }
        acc
    }

    pub fn adjoint(&self, residual: &Array2<f64>, out: &mut Array3<f64>) {
        let (l, _, _) = out.dim();
        let planes: Vec<Array2<f64>> = (0..l)
            .into_par_iter()
            .map(|b| conv2_replicate_adjoint(residual, &self.kernels[b]) * self.weights[b])
            .collect();
        for (b, p) in planes.into_iter().enumerate() {
            let mut slab = out.index_axis_mut(ndarray::Axis(0), b);
            slab += &p;
        }
    }
}

/// Additive sensor noise on a raw frame, deterministic per `(seed, stream)`.
fn apply_noise_stream(frame: &Array2<f64>, noise: &NoiseModel, stream: u64) -> Result<Array2<f64>> {
    noise.validate()?;
    if noise.kind == NoiseKind::None {
        return Ok(frame.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ stream.wrapping_mul(0x9E3779B97F4A7C15));
    let gaussian = if noise.sigma > 0.0 {
        Some(Normal::new(0.0, noise.sigma).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let mut out = frame.clone();
    for v in out.iter_mut() {
        let mut value = *v;
        if noise.kind == NoiseKind::PoissonGaussian {
            let mean = (value * noise.photon_scale).max(0.0);
            value = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::invalid(e.to_string()))?
                    .sample(&mut rng)
                    / noise.photon_scale
            } else {
                0.0
            };
        }
        if let Some(g) = &gaussian {
            value += g.sample(&mut rng);
        }
        *v = value.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Apply the noise model to one image.
pub fn apply_noise(image: &GrayscaleImage, noise: &NoiseModel) -> Result<GrayscaleImage> {
    let out = apply_noise_stream(image.data(), noise, 0)?;
    GrayscaleImage::new(out)
}

fn finish_frame(
    raw: &Array2<f64>,
    normalizer: f64,
    noise: &NoiseModel,
    stream: u64,
) -> Result<GrayscaleImage> {
    let scaled = if normalizer > 0.0 {
        raw / normalizer
    } else {
        raw.clone()
    };
    let noisy = apply_noise_stream(&scaled, noise, stream)?;
    GrayscaleImage::new(noisy.mapv(|v| v.clamp(0.0, 1.0)))
}

fn magnify(
    raw: Array2<f64>,
    z_mm: f64,
    z_ref_mm: f64,
    options: &SimOptions,
) -> Result<Array2<f64>> {
    if !options.emit_unaligned || z_mm == z_ref_mm {
        return Ok(raw);
    }
    let (h, w) = raw.dim();
    let s = z_mm / z_ref_mm;
    let t = AffineTransform2D::scale_about(s, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    warp_array_affine(&raw, &t)
}

/// Render a single capture at lens position `z`. The frame is normalized by
/// its own noiseless maximum (a one-frame stack).
pub fn simulate_frame(
    cube: &SpectralCube,
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    z_mm: f64,
    response: &SensorResponse,
    noise: &NoiseModel,
    options: &SimOptions,
) -> Result<GrayscaleImage> {
    check_frame_inputs(cube, lens, geometry, z_mm, response)?;
    let raw = frame_from_bands(cube, lens, geometry, z_mm, response, options);
    let raw = magnify(raw, z_mm, z_mm, options)?;
    let normalizer = if options.normalize {
        raw.iter().copied().fold(0.0f64, f64::max)
    } else {
        0.0
    };
    finish_frame(&raw, normalizer, noise, 0)
}

/// Render the full sweep: one frame per schedule position, normalized by the
/// global noiseless maximum, noise applied per frame from per-frame streams.
pub fn simulate_stack(
    cube: &SpectralCube,
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    schedule: &FocusSchedule,
    response: &SensorResponse,
    noise: &NoiseModel,
    options: &SimOptions,
) -> Result<GrayscaleStack> {
    if schedule.is_empty() {
        return Err(Error::invalid("schedule has no positions"));
    }
    for &z in &schedule.positions_mm {
        check_frame_inputs(cube, lens, geometry, z, response)?;
    }
    let z_ref = schedule.reference_position_mm();
    let raws: Vec<Array2<f64>> = schedule
        .positions_mm
        .par_iter()
        .map(|&z| {
            let raw = frame_from_bands(cube, lens, geometry, z, response, options);
            magnify(raw, z, z_ref, options)
        })
        .collect::<Result<_>>()?;
    let normalizer = if options.normalize {
        raws.iter()
            .flat_map(|r| r.iter().copied())
            .fold(0.0f64, f64::max)
    } else {
        0.0
    };
    let frames: Vec<GrayscaleImage> = raws
        .iter()
        .enumerate()
        .map(|(k, raw)| finish_frame(raw, normalizer, noise, k as u64))
        .collect::<Result<_>>()?;
    GrayscaleStack::new(frames, schedule.positions_mm.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::BandGrid;
    use crate::optics::{focal_length, psf_kernel};
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Toy capture setup: small aperture and coarse pitch keep PSF supports
    /// tight, the sweep interval covers the default band range.
    fn toy_setup() -> (LensConfig, AcquisitionGeometry) {
        let lens = LensConfig {
            aperture_mm: 0.5,
            ..LensConfig::default()
        };
        let geometry = AcquisitionGeometry {
            pixel_pitch_um: 25.0,
            z0_mm: 70.0,
            z1_mm: 170.0,
            ..AcquisitionGeometry::default()
        };
        (lens, geometry)
    }

    fn cube_of(
        bands: Vec<f64>,
        h: usize,
        w: usize,
        mut fill: impl FnMut(usize, usize, usize) -> f64,
    ) -> SpectralCube {
        let grid = BandGrid::new(bands).unwrap();
        let l = grid.len();
        let mut data = Array3::zeros((l, h, w));
        for b in 0..l {
            for i in 0..h {
                for j in 0..w {
                    data[[b, i, j]] = fill(b, i, j);
                }
            }
        }
        SpectralCube::new(grid, data).unwrap()
    }

    fn no_options() -> SimOptions {
        SimOptions {
            normalize: false,
            ..SimOptions::default()
        }
    }

    #[test]
    fn in_focus_single_band_frame_equals_the_band() {
        let (lens, geometry) = toy_setup();
        let cube = cube_of(vec![lens.lambda0_nm], 16, 16, |_, i, j| {
            ((i * 16 + j) as f64 * 0.31).sin().abs()
        });
        let z = reference_focus_position(&lens, &geometry).unwrap();
        let response = SensorResponse { weights: vec![1.0] };
        let frame =
            simulate_frame_linear(&cube, &lens, &geometry, z, &response, &no_options()).unwrap();
        let band = cube.data().index_axis(ndarray::Axis(0), 0);
        let max_diff = frame
            .iter()
            .zip(band.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff <= 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn uniform_cube_renders_uniform_frames() {
        let (lens, geometry) = toy_setup();
        let cube = cube_of(vec![500.0, 650.0, 800.0], 24, 24, |b, _, _| {
            0.2 + 0.1 * b as f64
        });
        let response = SensorResponse::flat(3);
        let frame = simulate_frame_linear(&cube, &lens, &geometry, 120.0, &response, &no_options())
            .unwrap();
        let first = frame[[0, 0]];
        for v in frame.iter() {
            assert!((v - first).abs() < 1e-9, "{v} vs {first}");
        }
        // value equals the response-weighted band mean
        let want = (0.2 + 0.3 + 0.4) / 3.0;
        assert!((first - want).abs() < 1e-12);
    }

    #[test]
    fn off_focus_point_source_matches_dense_convolution_oracle() {
        let (lens, geometry) = toy_setup();
        let h = 33;
        let cube = cube_of(vec![500.0], h, h, |_, i, j| {
            if i == h / 2 && j == h / 2 {
                1.0
            } else {
                0.0
            }
        });
        let z = 120.0;
        let r = defocus_radius_px(&lens, &geometry, 500.0, z).unwrap();
        assert!(r > 0.5, "test needs real blur, r = {r}");
        let response = SensorResponse { weights: vec![1.0] };
        let frame =
            simulate_frame_linear(&cube, &lens, &geometry, z, &response, &no_options()).unwrap();

        let kernel = psf_kernel(r);
        let (kh, kw) = kernel.dim();
        let band = cube.data().index_axis(ndarray::Axis(0), 0).to_owned();
        let mut oracle = Array2::zeros((h, h));
        for i in 0..h {
            for j in 0..h {
                let mut acc = 0.0;
                for a in 0..kh {
                    for b in 0..kw {
                        let yi = clampi(i as i64 + a as i64 - kh as i64 / 2, h);
                        let xi = clampi(j as i64 + b as i64 - kw as i64 / 2, h);
                        acc += kernel[[a, b]] * band[[yi, xi]];
                    }
                }
                oracle[[i, j]] = acc;
            }
        }
        for (a, b) in frame.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_operator_is_linear() {
        let (lens, geometry) = toy_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = vec![500.0, 700.0];
        let x = cube_of(grid.clone(), 16, 16, |_, _, _| rng.random_range(0.0..1.0));
        let y = cube_of(grid.clone(), 16, 16, |_, _, _| rng.random_range(0.0..1.0));
        let (alpha, beta) = (0.7, 0.3);
        let combo = cube_of(grid, 16, 16, |b, i, j| {
            alpha * x.data()[[b, i, j]] + beta * y.data()[[b, i, j]]
        });
        let response = SensorResponse::flat(2);
        let opts = no_options();
        let fx = simulate_frame_linear(&x, &lens, &geometry, 120.0, &response, &opts).unwrap();
        let fy = simulate_frame_linear(&y, &lens, &geometry, 120.0, &response, &opts).unwrap();
        let fc = simulate_frame_linear(&combo, &lens, &geometry, 120.0, &response, &opts).unwrap();
        for ((c, a), b) in fc.iter().zip(fx.iter()).zip(fy.iter()) {
            assert!((c - (alpha * a + beta * b)).abs() < 1e-9);
        }
    }

    #[test]
    fn interior_content_conserves_energy() {
        let (lens, geometry) = toy_setup();
        // content well away from borders so no blurred mass is clipped
        let cube = cube_of(vec![550.0, 750.0], 48, 48, |b, i, j| {
            if (20..28).contains(&i) && (20..28).contains(&j) {
                0.5 + 0.2 * b as f64
            } else {
                0.0
            }
        });
        let response = SensorResponse::flat(2);
        let frame = simulate_frame_linear(&cube, &lens, &geometry, 120.0, &response, &no_options())
            .unwrap();
        let mean_frame = frame.sum() / frame.len() as f64;
        let want: f64 = (0..2)
            .map(|b| {
                let band = cube.data().index_axis(ndarray::Axis(0), b);
                response.weights[b] * band.sum() / band.len() as f64
            })
            .sum();
        assert!(
            (mean_frame - want).abs() < 1e-6,
            "frame mean {mean_frame} vs band mean {want}"
        );
    }

    #[test]
    fn blur_grows_away_from_focus() {
        let (lens, geometry) = toy_setup();
        let h = 41;
        let lambda = 600.0;
        let cube = cube_of(vec![lambda], h, h, |_, i, j| {
            if i == h / 2 && j == h / 2 {
                1.0
            } else {
                0.0
            }
        });
        let f = focal_length(&lens, lambda).unwrap();
        let z_star = 1.0 / (1.0 / f - 1.0 / geometry.u_mm);
        let response = SensorResponse { weights: vec![1.0] };
        let spatial_tv = |frame: &Array2<f64>| -> f64 {
            let mut tv = 0.0;
            for i in 0..h {
                for j in 0..h - 1 {
                    tv += (frame[[i, j + 1]] - frame[[i, j]]).abs();
                }
            }
            for i in 0..h - 1 {
                for j in 0..h {
                    tv += (frame[[i + 1, j]] - frame[[i, j]]).abs();
                }
            }
            tv
        };
        let mut last = f64::INFINITY;
        for offset in [0.0, 8.0, 16.0, 26.0, 38.0] {
            let frame = simulate_frame_linear(
                &cube,
                &lens,
                &geometry,
                z_star + offset,
                &response,
                &no_options(),
            )
            .unwrap();
            let tv = spatial_tv(&frame);
            assert!(tv < last, "TV must fall as defocus grows: {tv} !< {last}");
            last = tv;
        }
    }

    #[test]
    fn single_position_stack_matches_simulate_frame() {
        let (lens, geometry) = toy_setup();
        let cube = cube_of(vec![600.0, 700.0], 16, 16, |b, i, j| {
            ((b + i + j) as f64 * 0.17).sin().abs()
        });
        let schedule = FocusSchedule::new(108.0, lens.lambda0_nm, vec![120.0]).unwrap();
        let response = SensorResponse::flat(2);
        let noise = NoiseModel::default();
        let opts = SimOptions::default();
        let stack =
            simulate_stack(&cube, &lens, &geometry, &schedule, &response, &noise, &opts).unwrap();
        let frame =
            simulate_frame(&cube, &lens, &geometry, 120.0, &response, &noise, &opts).unwrap();
        assert_eq!(stack.len(), 1);
        assert_eq!(stack.frames()[0].data(), frame.data());
    }

    #[test]
    fn identical_seeds_give_bit_identical_stacks() {
        let (lens, geometry) = toy_setup();
        let cube = cube_of(vec![550.0, 800.0], 16, 16, |b, i, j| {
            ((b * 31 + i * 7 + j) % 10) as f64 / 10.0
        });
        let schedule =
            FocusSchedule::new(108.0, lens.lambda0_nm, vec![100.0, 120.0, 140.0]).unwrap();
        let response = SensorResponse::flat(2);
        let noise = NoiseModel {
            kind: NoiseKind::Gaussian,
            sigma: 0.02,
            seed: 1234,
            ..NoiseModel::default()
        };
        let opts = SimOptions::default();
        let s1 =
            simulate_stack(&cube, &lens, &geometry, &schedule, &response, &noise, &opts).unwrap();
        let s2 =
            simulate_stack(&cube, &lens, &geometry, &schedule, &response, &noise, &opts).unwrap();
        assert_eq!(s1, s2);
        // different seed differs somewhere
        let other = NoiseModel { seed: 99, ..noise };
        let s3 =
            simulate_stack(&cube, &lens, &geometry, &schedule, &response, &other, &opts).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn noise_kind_none_is_identity() {
        let img = GrayscaleImage::new(Array2::from_elem((8, 8), 0.42)).unwrap();
        let out = apply_noise(&img, &NoiseModel::default()).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn noise_mean_converges_to_the_clean_value() {
        let clean = Array2::from_elem((8, 8), 0.5);
        let noise = NoiseModel {
            kind: NoiseKind::PoissonGaussian,
            sigma: 0.02,
            photon_scale: 1000.0,
            seed: 77,
        };
        // sigma of one draw: sqrt(0.5/1000 + 0.02^2) ~ 0.03
        let draws = 10_000;
        let mut sum = 0.0;
        for k in 0..draws {
            let noisy = apply_noise_stream(&clean, &noise, k).unwrap();
            sum += noisy[[3, 3]];
        }
        let mean = sum / draws as f64;
        let sigma_draw = (0.5_f64 / 1000.0 + 0.02 * 0.02).sqrt();
        let tol = 3.0 * sigma_draw / (draws as f64).sqrt();
        assert!(
            (mean - 0.5).abs() < tol,
            "mean {mean} deviates from 0.5 by more than {tol}"
        );
    }

    #[test]
    fn rejects_bands_outside_the_sweep() {
        let (lens, mut geometry) = toy_setup();
        geometry.z0_mm = 100.0;
        geometry.z1_mm = 115.0;
        let cube = cube_of(vec![470.0], 16, 16, |_, _, _| 0.5);
        let response = SensorResponse::flat(1);
        let err = simulate_frame_linear(&cube, &lens, &geometry, 110.0, &response, &no_options())
            .unwrap_err();
        assert!(
            err.to_string().contains("470"),
            "error names the band: {err}"
        );
    }

    #[test]
    fn unaligned_frames_carry_magnification() {
        let (lens, geometry) = toy_setup();
        let cube = cube_of(vec![685.0], 32, 32, |_, i, j| {
            if (12..20).contains(&i) && (12..20).contains(&j) {
                1.0
            } else {
                0.0
            }
        });
        let schedule = FocusSchedule::new(108.0, 685.0, vec![100.0, 110.0, 121.0]).unwrap();
        let response = SensorResponse::flat(1);
        let opts = SimOptions {
            emit_unaligned: true,
            ..SimOptions::default()
        };
        let stack = simulate_stack(
            &cube,
            &lens,
            &geometry,
            &schedule,
            &response,
            &NoiseModel::default(),
            &opts,
        )
        .unwrap();
        // the square's footprint grows with z
        let footprint = |img: &GrayscaleImage| img.data().iter().filter(|&&v| v > 0.2).count();
        let sizes: Vec<usize> = stack.frames().iter().map(footprint).collect();
        assert!(sizes[0] < sizes[2], "sizes {sizes:?}");
    }

    #[test]
    fn adjoint_matches_forward_inner_product() {
        let (lens, geometry) = toy_setup();
        let grid = BandGrid::new(vec![500.0, 700.0]).unwrap();
        let shape_cube = SpectralCube::zeros(grid, 16, 16);
        let response = SensorResponse::flat(2);
        let op = FrameOperator::new(
            &shape_cube,
            &lens,
            &geometry,
            120.0,
            &response,
            PsfModel::Disc,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Array3::zeros((2, 16, 16));
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut y = Array2::zeros((16, 16));
        for v in y.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let ax = op.apply(&x);
        let mut aty = Array3::zeros((2, 16, 16));
        op.adjoint(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(aty.iter()).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0),
            "<Ax,y> = {lhs} vs <x,Aty> = {rhs}"
        );
    }
}
