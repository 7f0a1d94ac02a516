//! The training/solver objective: mean L1, anisotropic spatio-spectral total
//! variation, and SSIM on an RGB projection, combined as
//! `L = ‖y − ŷ‖₁ + λ_TV·L_TV(ŷ) + λ_SSIM·(1 − SSIM(rgb(y), rgb(ŷ)))`,
//! together with its exact analytic gradient with respect to `ŷ`.
//!
//! All terms are means (not sums), so the weights transfer across
//! resolutions. The TV root is Charbonnier-smoothed with a tiny epsilon to
//! stay differentiable at zero gradient; pure TV is the epsilon-to-zero
//! limit. Loss math operates on raw `[C, H, W]` tensors; cube-typed wrappers
//! delegate here.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::cube::{BandGrid, SpectralCube};
use crate::error::{Error, Result};

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_tv: f64,
    pub gamma_tvs: f64,
    pub lambda_ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_tv: 0.1,
            gamma_tvs: 0.2,
            lambda_ssim: 0.9,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_tv < 0.0 || self.gamma_tvs < 0.0 || self.lambda_ssim < 0.0 {
            return Err(Error::invalid(format!(
                "loss weights must be non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Charbonnier smoothing epsilon for the TV root.
pub const TV_EPSILON: f64 = 1e-8;

/// Extra knobs for the combined objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LossOptions {
    /// Apply the TV penalty to the residual `y - ŷ` instead of to `ŷ`.
    pub tv_on_residual: bool,
    pub epsilon: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            tv_on_residual: false,
            epsilon: TV_EPSILON,
        }
    }
}

fn check_same_dims(y: &Array3<f64>, yhat: &Array3<f64>) -> Result<()> {
    if y.dim() != yhat.dim() {
        return Err(Error::invalid(format!(
            "tensor dims differ: {:?} vs {:?}",
            y.dim(),
            yhat.dim()
        )));
    }
    Ok(())
}

/// Mean absolute difference over all entries.
pub fn l1_loss_arrays(y: &Array3<f64>, yhat: &Array3<f64>) -> Result<f64> {
    check_same_dims(y, yhat)?;
    let n = y.len() as f64;
    let sum: f64 = y.iter().zip(yhat.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / n)
}

pub fn l1_loss(y: &SpectralCube, yhat: &SpectralCube) -> Result<f64> {
    l1_loss_arrays(y.data(), yhat.data())
}

/// Anisotropic spatio-spectral total variation:
/// `mean over cells of sqrt(Δh² + Δv² + γ·Δk² + ε²)` with forward
/// differences, one-sided zero at the last index of each axis, and `γ`
/// weighting the spectral axis against the spatial ones.
pub fn tv_loss_arrays(x: &Array3<f64>, gamma_tvs: f64, epsilon: f64) -> f64 {
    let (l, h, w) = x.dim();
    let mut sum = 0.0;
    for k in 0..l {
        for i in 0..h {
            for j in 0..w {
                let v = x[[k, i, j]];
                let dh = if j + 1 < w { x[[k, i, j + 1]] - v } else { 0.0 };
                let dv = if i + 1 < h { x[[k, i + 1, j]] - v } else { 0.0 };
                let dk = if k + 1 < l { x[[k + 1, i, j]] - v } else { 0.0 };
                sum += (dh * dh + dv * dv + gamma_tvs * dk * dk + epsilon * epsilon).sqrt();
            }
        }
    }
    sum / (l * h * w) as f64
}

pub fn tv_loss(x: &SpectralCube, gamma_tvs: f64, epsilon: f64) -> f64 {
    tv_loss_arrays(x.data(), gamma_tvs, epsilon)
}

/// Gradient of [`tv_loss_arrays`] with respect to `x`.
pub fn tv_grad_arrays(x: &Array3<f64>, gamma_tvs: f64, epsilon: f64) -> Array3<f64> {
    let (l, h, w) = x.dim();
    let n = (l * h * w) as f64;
    // s[k,i,j] = the smoothed root at that cell
    let mut grad = Array3::zeros((l, h, w));
    for k in 0..l {
        for i in 0..h {
            for j in 0..w {
                let v = x[[k, i, j]];
                let dh = if j + 1 < w { x[[k, i, j + 1]] - v } else { 0.0 };
                let dv = if i + 1 < h { x[[k, i + 1, j]] - v } else { 0.0 };
                let dk = if k + 1 < l { x[[k + 1, i, j]] - v } else { 0.0 };
                let s = (dh * dh + dv * dv + gamma_tvs * dk * dk + epsilon * epsilon).sqrt();
                if s <= 0.0 {
                    continue;
                }
                let inv = 1.0 / (n * s);
                // each difference contributes to its two endpoints
                if j + 1 < w {
                    grad[[k, i, j]] -= dh * inv;
                    grad[[k, i, j + 1]] += dh * inv;
                }
                if i + 1 < h {
                    grad[[k, i, j]] -= dv * inv;
                    grad[[k, i + 1, j]] += dv * inv;
                }
                if k + 1 < l {
                    grad[[k, i, j]] -= gamma_tvs * dk * inv;
                    grad[[k + 1, i, j]] += gamma_tvs * dk * inv;
                }
            }
        }
    }
    grad
}

/// Fixed projection from a band grid onto an RGB basis: a non-negative
/// `3 × L` matrix whose rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbProjection {
    matrix: Array2<f64>,
}

/// Bands beyond this wavelength contribute nothing to the RGB projection.
pub const RGB_CUTOFF_NM: f64 = 780.0;

/// One lobe of a piecewise Gaussian: separate widths left and right of the
/// peak.
fn lobe(lambda: f64, amp: f64, mu: f64, sigma_l: f64, sigma_r: f64) -> f64 {
    let sigma = if lambda < mu { sigma_l } else { sigma_r };
    let t = (lambda - mu) / sigma;
    amp * (-0.5 * t * t).exp()
}

/// Piecewise-Gaussian fits of the CIE 1931 colour-matching functions,
/// clamped to non-negative.
fn cmf(lambda_nm: f64) -> [f64; 3] {
    let x = lobe(lambda_nm, 1.056, 599.8, 37.9, 31.0) + lobe(lambda_nm, 0.362, 442.0, 16.0, 26.7)
        - lobe(lambda_nm, 0.065, 501.1, 20.4, 26.2);
    let y = lobe(lambda_nm, 0.821, 568.8, 46.9, 40.5) + lobe(lambda_nm, 0.286, 530.9, 16.3, 31.1);
    let z = lobe(lambda_nm, 1.217, 437.0, 11.8, 36.0) + lobe(lambda_nm, 0.681, 459.0, 26.0, 13.8);
    [x.max(0.0), y.max(0.0), z.max(0.0)]
}

impl RgbProjection {
    /// Validate and wrap an explicit projection matrix.
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let (rows, _) = matrix.dim();
        if rows != 3 {
            return Err(Error::invalid(format!(
                "projection must have 3 rows, got {rows}"
            )));
        }
        for r in 0..3 {
            let mut sum = 0.0;
            for v in matrix.row(r) {
                if *v < 0.0 || !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "projection entries must be non-negative, row {r} holds {v}"
                    )));
                }
                sum += *v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "projection row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(RgbProjection { matrix })
    }

    /// Default projection for a band grid: colour-matching lobes sampled at
    /// each band, bands beyond 780 nm zeroed, rows normalized to sum one.
    pub fn for_bands(bands: &BandGrid) -> Result<Self> {
        let l = bands.len();
        let mut matrix = Array2::zeros((3, l));
        for (c, &lambda) in bands.wavelengths_nm().iter().enumerate() {
            if lambda > RGB_CUTOFF_NM {
                continue;
            }
            let rgb = cmf(lambda);
            for r in 0..3 {
                matrix[[r, c]] = rgb[r];
            }
        }
        for r in 0..3 {
            let sum: f64 = matrix.row(r).sum();
            if sum <= 0.0 {
                return Err(Error::invalid(format!(
                    "band grid has no visible-range support for projection row {r}"
                )));
            }
            for c in 0..l {
                matrix[[r, c]] /= sum;
            }
        }
        Ok(RgbProjection { matrix })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn num_bands(&self) -> usize {
        self.matrix.dim().1
    }
}

/// Per-pixel matrix-vector product of the projection with the spectrum.
pub fn rgb_project_arrays(x: &Array3<f64>, proj: &RgbProjection) -> Result<Array3<f64>> {
    let (l, h, w) = x.dim();
    if proj.num_bands() != l {
        return Err(Error::invalid(format!(
            "projection expects {} bands, tensor has {l}",
            proj.num_bands()
        )));
    }
    let m = proj.matrix();
    let mut out = Array3::zeros((3, h, w));
    for c in 0..3 {
        for b in 0..l {
            let weight = m[[c, b]];
            if weight == 0.0 {
                continue;
            }
            for i in 0..h {
                for j in 0..w {
                    out[[c, i, j]] += weight * x[[b, i, j]];
                }
            }
        }
    }
    Ok(out)
}

pub fn rgb_project(cube: &SpectralCube, proj: &RgbProjection) -> Result<Array3<f64>> {
    rgb_project_arrays(cube.data(), proj)
}

/// SSIM stabilizer constants and dynamic range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// The 11x11 Gaussian window (sigma 1.5), normalized to sum one.
pub fn ssim_window() -> Array2<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let inv = 1.0 / (2.0 * SSIM_SIGMA * SSIM_SIGMA);
    let mut win = Array2::zeros((SSIM_WINDOW, SSIM_WINDOW));
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let dy = i as f64 - half;
            let dx = j as f64 - half;
            win[[i, j]] = (-(dx * dx + dy * dy) * inv).exp();
        }
    }
    let sum = win.sum();
    win.mapv_inplace(|v| v / sum);
    win
}

fn check_ssim_dims(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    check_same_dims(a, b)?;
    let (_, h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Windowed SSIM over all fully-contained window positions, mean-pooled over
/// channels and positions. Exactly symmetric in its arguments.
pub fn ssim(a: &Array3<f64>, b: &Array3<f64>, params: &SsimParams) -> Result<f64> {
    ssim_impl(a, b, params, false).map(|(v, _)| v)
}

/// SSIM plus its gradient with respect to `b`.
pub fn ssim_with_grad(
    a: &Array3<f64>,
    b: &Array3<f64>,
    params: &SsimParams,
) -> Result<(f64, Array3<f64>)> {
    ssim_impl(a, b, params, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn ssim_impl(
    a: &Array3<f64>,
    b: &Array3<f64>,
    params: &SsimParams,
    want_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    check_ssim_dims(a, b)?;
    let (ch, h, w) = a.dim();
    let win = ssim_window();
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let rows = h - SSIM_WINDOW + 1;
    let cols = w - SSIM_WINDOW + 1;
    let count = (ch * rows * cols) as f64;

    let mut total = 0.0;
    let mut grad = if want_grad {
        Some(Array3::zeros((ch, h, w)))
    } else {
        None
    };

    for c in 0..ch {
        for r0 in 0..rows {
            for c0 in 0..cols {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wgt = win[[i, j]];
                        mu_a += wgt * a[[c, r0 + i, c0 + j]];
                        mu_b += wgt * b[[c, r0 + i, c0 + j]];
                    }
                }
                let mut var_a = 0.0;
                let mut var_b = 0.0;
                let mut cov = 0.0;
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wgt = win[[i, j]];
                        let da = a[[c, r0 + i, c0 + j]] - mu_a;
                        let db = b[[c, r0 + i, c0 + j]] - mu_b;
                        var_a += wgt * (da * da);
                        var_b += wgt * (db * db);
                        // parenthesized so the formula stays exactly
                        // symmetric in its arguments
                        cov += wgt * (da * db);
                    }
                }
                let a1 = 2.0 * mu_a * mu_b + c1;
                let a2 = 2.0 * cov + c2;
                let b1 = mu_a * mu_a + mu_b * mu_b + c1;
                let b2 = var_a + var_b + c2;
                let s = (a1 * a2) / (b1 * b2);
                total += s;

                if let Some(g) = grad.as_mut() {
                    let denom = b1 * b2;
                    let inv_d2 = 1.0 / (denom * denom);
                    for i in 0..SSIM_WINDOW {
                        for j in 0..SSIM_WINDOW {
                            let wgt = win[[i, j]];
                            let da = a[[c, r0 + i, c0 + j]] - mu_a;
                            let db = b[[c, r0 + i, c0 + j]] - mu_b;
                            // dS/db_i through mu_b, var_b, cov
                            let d_num = (2.0 * mu_a * a2 + 2.0 * da * a1) * denom;
                            let d_den = a1 * a2 * (2.0 * mu_b * b2 + 2.0 * db * b1);
                            g[[c, r0 + i, c0 + j]] += wgt * (d_num - d_den) * inv_d2 / count;
                        }
                    }
                }
            }
        }
    }
    Ok((total / count, grad))
}

/// The combined objective on raw tensors.
pub fn combined_loss_arrays(
    y: &Array3<f64>,
    yhat: &Array3<f64>,
    weights: &LossWeights,
    proj: &RgbProjection,
    opts: &LossOptions,
) -> Result<f64> {
    check_same_dims(y, yhat)?;
    weights.validate()?;
    let l1 = l1_loss_arrays(y, yhat)?;
    let tv = if weights.lambda_tv > 0.0 {
        if opts.tv_on_residual {
            tv_loss_arrays(&(y - yhat), weights.gamma_tvs, opts.epsilon)
        } else {
            tv_loss_arrays(yhat, weights.gamma_tvs, opts.epsilon)
        }
    } else {
        0.0
    };
    let ssim_term = if weights.lambda_ssim > 0.0 {
        let ra = rgb_project_arrays(y, proj)?;
        let rb = rgb_project_arrays(yhat, proj)?;
        1.0 - ssim(&ra, &rb, &SsimParams::default())?
    } else {
        0.0
    };
    Ok(l1 + weights.lambda_tv * tv + weights.lambda_ssim * ssim_term)
}

pub fn combined_loss(
    y: &SpectralCube,
    yhat: &SpectralCube,
    weights: &LossWeights,
    proj: &RgbProjection,
) -> Result<f64> {
    combined_loss_arrays(
        y.data(),
        yhat.data(),
        weights,
        proj,
        &LossOptions::default(),
    )
}

/// Exact analytic gradient of the combined objective with respect to `yhat`.
pub fn grad_combined_arrays(
    y: &Array3<f64>,
    yhat: &Array3<f64>,
    weights: &LossWeights,
    proj: &RgbProjection,
    opts: &LossOptions,
) -> Result<Array3<f64>> {
    check_same_dims(y, yhat)?;
    weights.validate()?;
    let (l, h, w) = y.dim();
    let n = (l * h * w) as f64;

    // L1 term: sign(yhat - y) / N
    let mut grad = Array3::zeros((l, h, w));
    for (g, (yv, yh)) in grad.iter_mut().zip(y.iter().zip(yhat.iter())) {
        let d = yh - yv;
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }

    if weights.lambda_tv > 0.0 {
        let tv_grad = if opts.tv_on_residual {
            // d/dyhat TV(y - yhat) = -TV'(y - yhat)
            let mut g = tv_grad_arrays(&(y - yhat), weights.gamma_tvs, opts.epsilon);
            g.mapv_inplace(|v| -v);
            g
        } else {
            tv_grad_arrays(yhat, weights.gamma_tvs, opts.epsilon)
        };
        grad.zip_mut_with(&tv_grad, |g, &t| *g += weights.lambda_tv * t);
    }

    if weights.lambda_ssim > 0.0 {
        let ra = rgb_project_arrays(y, proj)?;
        let rb = rgb_project_arrays(yhat, proj)?;
        let (_, ssim_grad_rgb) = ssim_with_grad(&ra, &rb, &SsimParams::default())?;
        // chain rule through the projection, with the leading minus from
        // the (1 - SSIM) term
        let m = proj.matrix();
        for b in 0..l {
            for c in 0..3 {
                let weight = m[[c, b]];
                if weight == 0.0 {
                    continue;
                }
                let scale = -weights.lambda_ssim * weight;
                for i in 0..h {
                    for j in 0..w {
                        grad[[b, i, j]] += scale * ssim_grad_rgb[[c, i, j]];
                    }
                }
            }
        }
    }
    Ok(grad)
}

pub fn grad_combined(
    y: &SpectralCube,
    yhat: &SpectralCube,
    weights: &LossWeights,
    proj: &RgbProjection,
) -> Result<Array3<f64>> {
    grad_combined_arrays(
        y.data(),
        yhat.data(),
        weights,
        proj,
        &LossOptions::default(),
    )
}
