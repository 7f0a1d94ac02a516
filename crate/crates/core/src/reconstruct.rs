//! Physics-based reconstruction: invert the focal-sweep forward model by
//! gradient descent with momentum on a least-squares data term plus the
//! spatio-spectral TV penalty.
//!
//! The forward operator is linear once the per-band PSFs are fixed, so the
//! data-term gradient is an exact adjoint application. Iterates are clamped
//! non-negative; a step is only accepted if the objective does not increase,
//! otherwise the step size is halved and momentum reset. The iterate with
//! the lowest objective wins.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::cube::{BandGrid, GrayscaleStack, SpectralCube};
use crate::error::{Error, Result};
use crate::forward::{FrameOperator, SensorResponse};
use crate::losses::{tv_grad_arrays, tv_loss_arrays, LossWeights, TV_EPSILON};
use crate::optics::{focused_wavelength, AcquisitionGeometry, FocusSchedule, LensConfig, PsfModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub step_size: f64,
    /// Heavy-ball momentum in `[0, 1)`.
    pub momentum: f64,
    pub max_iters: usize,
    /// Stop when the RMS gradient falls below this.
    pub grad_tol: f64,
    pub weights: LossWeights,
    pub psf_model: PsfModel,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step_size: 1.0,
            momentum: 0.9,
            max_iters: 300,
            // the objective is a mean over cells, so gradient entries are
            // tiny by construction; the default tolerance defers to
            // max_iters
            grad_tol: 1e-13,
            // the data term is a mean of squares, so the TV weight runs far
            // below the training default; SSIM plays no part in the solver
            weights: LossWeights {
                lambda_tv: 1e-4,
                gamma_tvs: 0.2,
                lambda_ssim: 0.0,
            },
            psf_model: PsfModel::Disc,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_size <= 0.0 {
            return Err(Error::invalid(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Reconstruction with per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub cube: SpectralCube,
    /// Objective value of every accepted iterate, starting at the
    /// initialization.
    pub objective_curve: Vec<f64>,
    pub iterations: usize,
}

const MAX_CONSECUTIVE_REJECTIONS: usize = 10;

fn band_grid_for_schedule(schedule: &FocusSchedule) -> Result<BandGrid> {
    let mut wavelengths: Vec<f64> = schedule
        .positions_mm
        .iter()
        .map(|&z| focused_wavelength(schedule, z))
        .collect::<Result<_>>()?;
    wavelengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    BandGrid::new(wavelengths)
}

/// Reconstruct the spectral cube behind an aligned focal-sweep stack.
///
/// The band grid is the set of wavelengths focused by the schedule (one band
/// per sweep position). The objective is the mean squared residual over all
/// frames plus `lambda_tv` times the TV penalty; the iterate starts from the
/// band-wise back-projection (every frame pulled onto the band it focuses).
pub fn variational_reconstruct(
    stack: &GrayscaleStack,
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    schedule: &FocusSchedule,
    response: &SensorResponse,
    config: &SolverConfig,
) -> Result<SpectralCube> {
    variational_reconstruct_detailed(stack, lens, geometry, schedule, response, config)
        .map(|out| out.cube)
}

pub fn variational_reconstruct_detailed(
    stack: &GrayscaleStack,
    lens: &LensConfig,
    geometry: &AcquisitionGeometry,
    schedule: &FocusSchedule,
    response: &SensorResponse,
    config: &SolverConfig,
) -> Result<SolverOutput> {
    config.validate()?;
    lens.validate()?;
    geometry.validate()?;
    if stack.len() != schedule.len() {
        return Err(Error::invalid(format!(
            "stack has {} frames but schedule has {} positions",
            stack.len(),
            schedule.len()
        )));
    }
    for (k, (&zs, &zp)) in stack
        .lens_positions_mm()
        .iter()
        .zip(schedule.positions_mm.iter())
        .enumerate()
    {
        if (zs - zp).abs() > 1e-9 * zp.max(1.0) {
            return Err(Error::invalid(format!(
                "frame {k} was captured at {zs} mm but the schedule says {zp} mm"
            )));
        }
    }
    let bands = band_grid_for_schedule(schedule)?;
    let l = bands.len();
    response.validate(l)?;
    let (h, w) = (stack.height(), stack.width());
    let k_frames = stack.len();

    // the forward operator per frame, PSFs fixed once
    let shape = SpectralCube::zeros(bands.clone(), h, w);
    let operators: Vec<FrameOperator> = schedule
        .positions_mm
        .iter()
        .map(|&z| FrameOperator::new(&shape, lens, geometry, z, response, config.psf_model))
        .collect();
    let frames: Vec<Array2<f64>> = stack.frames().iter().map(|f| f.data().clone()).collect();

    let lambda_tv = config.weights.lambda_tv;
    let gamma = config.weights.gamma_tvs;
    let cells = (h * w) as f64;

    let objective = |x: &Array3<f64>| -> f64 {
        let mut data = 0.0;
        for (op, frame) in operators.iter().zip(&frames) {
            let rendered = op.apply(x);
            let mut sq = 0.0;
            for (r, b) in rendered.iter().zip(frame.iter()) {
                let d = r - b;
                sq += d * d;
            }
            data += sq / cells;
        }
        data / k_frames as f64 + lambda_tv * tv_loss_arrays(x, gamma, TV_EPSILON)
    };

    let gradient = |x: &Array3<f64>| -> Array3<f64> {
        let mut grad = Array3::zeros((l, h, w));
        for (op, frame) in operators.iter().zip(&frames) {
            let rendered = op.apply(x);
            let residual = &rendered - frame;
            let scale = 2.0 / (k_frames as f64 * cells);
            op.adjoint(&(residual * scale), &mut grad);
        }
        if lambda_tv > 0.0 {
            let tvg = tv_grad_arrays(x, gamma, TV_EPSILON);
            grad.zip_mut_with(&tvg, |g, &t| *g += lambda_tv * t);
        }
        grad
    };

    // band-wise adjoint initialization: each frame back-projected through
    // the PSF of the band it focuses
    let mut x = Array3::zeros((l, h, w));
    for b in 0..l {
        let lambda = bands.wavelengths_nm()[b];
        let k = schedule.nearest_position_index(lambda);
        let kernel = &operators[k].kernels[b];
        let back = crate::forward::conv2_replicate_adjoint(&frames[k], kernel);
        x.index_axis_mut(ndarray::Axis(0), b)
            .assign(&back.mapv(|v| v.max(0.0)));
    }

    let mut j_current = objective(&x);
    let mut best = x.clone();
    let mut best_j = j_current;
    let mut curve = vec![j_current];
    let mut velocity: Array3<f64> = Array3::zeros((l, h, w));
    let mut step = config.step_size;
    let mut rejections = 0usize;
    let mut iterations = 0usize;

    for _ in 0..config.max_iters {
        iterations += 1;
        let grad = gradient(&x);
        let rms = (grad.iter().map(|g| g * g).sum::<f64>() / grad.len() as f64).sqrt();
        if rms < config.grad_tol {
            break;
        }
        velocity.zip_mut_with(&grad, |v, &g| *v = config.momentum * *v - step * g);
        let mut candidate = x.clone();
        candidate.zip_mut_with(&velocity, |c, &v| *c = (*c + v).max(0.0));
        let j_new = objective(&candidate);
        if j_new <= j_current {
            x = candidate;
            j_current = j_new;
            curve.push(j_new);
            rejections = 0;
            step *= 1.2;
            if j_new < best_j {
                best_j = j_new;
                best = x.clone();
            }
        } else {
            rejections += 1;
            step *= 0.5;
            velocity.fill(0.0);
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::Divergence(format!(
                    "objective rose for {MAX_CONSECUTIVE_REJECTIONS} consecutive steps \
                     (J = {j_current:.6e}); retry with a smaller step size"
                )));
            }
        }
    }
    let cube = SpectralCube::new(bands, best)?;
    Ok(SolverOutput {
        cube,
        objective_curve: curve,
        iterations,
    })
}
