//! Input preprocessing for the sweep stack, in pipeline order: affine
//! alignment of every frame to a common coordinate system, Sobel edge maps,
//! then temporal differencing along the sweep. The result is the `K-1`
//! channel tensor the reconstruction consumes.
//!
//! Alignment is blind: corners are detected per frame (Harris), matched to
//! the reference frame by normalized cross-correlation of local patches, and
//! a 6-parameter affine transform is fit by least squares.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::cube::{GrayscaleImage, GrayscaleStack};
use crate::error::{Error, Result};
use crate::linalg::solve_sym3;

/// 2-D affine map `x' = a·x + b·y + tx`, `y' = c·x + d·y + ty`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform2D {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AffineTransform2D {
    pub fn identity() -> Self {
        AffineTransform2D {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineTransform2D {
            tx,
            ty,
            ..Self::identity()
        }
    }

    /// Uniform scaling about the point `(cx, cy)`.
    pub fn scale_about(s: f64, cx: f64, cy: f64) -> Self {
        AffineTransform2D {
            a: s,
            b: 0.0,
            c: 0.0,
            d: s,
            tx: cx * (1.0 - s),
            ty: cy * (1.0 - s),
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    /// The composite transform applying `first`, then `self`.
    pub fn compose_after(&self, first: &Self) -> Self {
        AffineTransform2D {
            a: self.a * first.a + self.b * first.c,
            b: self.a * first.b + self.b * first.d,
            c: self.c * first.a + self.d * first.c,
            d: self.c * first.b + self.d * first.d,
            tx: self.a * first.tx + self.b * first.ty + self.tx,
            ty: self.c * first.tx + self.d * first.ty + self.ty,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det.abs() <= 1e-9 {
            return Err(Error::Degenerate(format!(
                "affine transform is not invertible (det = {det:e})"
            )));
        }
        let (a, b, c, d) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Ok(AffineTransform2D {
            a,
            b,
            c,
            d,
            tx: -(a * self.tx + b * self.ty),
            ty: -(c * self.tx + d * self.ty),
        })
    }
}

/// A detected corner at pixel coordinates `(x, y)` with its response score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CornerSet {
    pub points: Vec<Corner>,
}

impl CornerSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A matched corner pair `from -> to` with its correlation score.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub ncc: f64,
}

pub(crate) fn clampi(v: i64, max: usize) -> usize {
    v.clamp(0, max as i64 - 1) as usize
}

/// Bilinear sample with out-of-bounds reads returning zero.
pub(crate) fn bilinear_sample(data: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = data.dim();
    if x < -1.0 || y < -1.0 || x > w as f64 || y > h as f64 {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            data[[yi as usize, xi as usize]]
        }
    };
    let v00 = at(x0, y0);
    let v10 = at(x0 + 1.0, y0);
    let v01 = at(x0, y0 + 1.0);
    let v11 = at(x0 + 1.0, y0 + 1.0);
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Horizontal and vertical Sobel responses with replicate-edge padding.
pub fn sobel_gradients(image: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = image.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let px = |di: i64, dj: i64| -> f64 {
                image[[clampi(i as i64 + di, h), clampi(j as i64 + dj, w)]]
            };
            gx[[i, j]] =
                -px(-1, -1) + px(-1, 1) - 2.0 * px(0, -1) + 2.0 * px(0, 1) - px(1, -1) + px(1, 1);
            gy[[i, j]] =
                -px(-1, -1) - 2.0 * px(-1, 0) - px(-1, 1) + px(1, -1) + 2.0 * px(1, 0) + px(1, 1);
        }
    }
    (gx, gy)
}

/// Sobel gradient magnitude `sqrt(Gx^2 + Gy^2)`.
pub fn sobel_edges(image: &Array2<f64>) -> Result<Array2<f64>> {
    let (h, w) = image.dim();
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "Sobel needs at least a 3x3 image, got {h}x{w}"
        )));
    }
    let (gx, gy) = sobel_gradients(image);
    let mut out = gx;
    out.zip_mut_with(&gy, |a, &b| *a = (*a * *a + b * b).sqrt());
    Ok(out)
}

pub(crate) fn gaussian_window(sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let size = (2 * radius + 1) as usize;
    let mut win = Array2::zeros((size, size));
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in 0..size {
        for j in 0..size {
            let dy = i as f64 - radius as f64;
            let dx = j as f64 - radius as f64;
            win[[i, j]] = (-(dx * dx + dy * dy) * inv).exp();
        }
    }
    let sum = win.sum();
    win.mapv_inplace(|v| v / sum);
    win
}

fn convolve_replicate(image: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = image.dim();
    let (kh, kw) = kernel.dim();
    let (cy, cx) = (kh as i64 / 2, kw as i64 / 2);
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in 0..kh {
                for b in 0..kw {
                    let yi = clampi(i as i64 + a as i64 - cy, h);
                    let xi = clampi(j as i64 + b as i64 - cx, w);
                    acc += kernel[[a, b]] * image[[yi, xi]];
                }
            }
            out[[i, j]] = acc;
        }
    }
    out
}

const HARRIS_K: f64 = 0.04;
const HARRIS_SIGMA: f64 = 1.5;
const NMS_RADIUS: i64 = 5;

/// Harris corner detection: structure tensor from 3x3 Sobel gradients,
/// Gaussian window (sigma 1.5), response `det - k·trace^2` with `k = 0.04`,
/// non-maximum suppression over a 5 px radius. Returns the strongest
/// `max_corners` whose score reaches `quality` times the best score.
pub fn detect_corners(
    image: &GrayscaleImage,
    max_corners: usize,
    quality: f64,
) -> Result<CornerSet> {
    let (h, w) = image.data().dim();
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!(
            "corner detection needs at least 16x16, got {h}x{w}"
        )));
    }
    let (gx, gy) = sobel_gradients(image.data());
    let mut ixx = Array2::zeros((h, w));
    let mut iyy = Array2::zeros((h, w));
    let mut ixy = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            ixx[[i, j]] = gx[[i, j]] * gx[[i, j]];
            iyy[[i, j]] = gy[[i, j]] * gy[[i, j]];
            ixy[[i, j]] = gx[[i, j]] * gy[[i, j]];
        }
    }
    let win = gaussian_window(HARRIS_SIGMA);
    let sxx = convolve_replicate(&ixx, &win);
    let syy = convolve_replicate(&iyy, &win);
    let sxy = convolve_replicate(&ixy, &win);

    let mut response = Array2::zeros((h, w));
    let mut max_score = 0.0f64;
    for i in 0..h {
        for j in 0..w {
            let det = sxx[[i, j]] * syy[[i, j]] - sxy[[i, j]] * sxy[[i, j]];
            let tr = sxx[[i, j]] + syy[[i, j]];
            let r = det - HARRIS_K * tr * tr;
            response[[i, j]] = r;
            max_score = max_score.max(r);
        }
    }
    if max_score <= 0.0 {
        return Ok(CornerSet::default());
    }

    let threshold = quality * max_score;
    let mut corners = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let r = response[[i, j]];
            if r <= 0.0 || r < threshold {
                continue;
            }
            let mut is_max = true;
            'nms: for di in -NMS_RADIUS..=NMS_RADIUS {
                for dj in -NMS_RADIUS..=NMS_RADIUS {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let yi = i as i64 + di;
                    let xi = j as i64 + dj;
                    if yi < 0 || xi < 0 || yi >= h as i64 || xi >= w as i64 {
                        continue;
                    }
                    let other = response[[yi as usize, xi as usize]];
                    // ties broken toward the lexicographically first pixel
                    if other > r || (other == r && (yi, xi) < (i as i64, j as i64)) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                corners.push(Corner {
                    x: j as f64,
                    y: i as f64,
                    score: r,
                });
            }
        }
    }
    corners.sort_by(|p, q| q.score.partial_cmp(&p.score).unwrap());
    corners.truncate(max_corners);
    Ok(CornerSet { points: corners })
}

fn ncc_patch(
    a: &Array2<f64>,
    ax: i64,
    ay: i64,
    b: &Array2<f64>,
    bx: i64,
    by: i64,
    radius: i64,
) -> f64 {
    let (ha, wa) = a.dim();
    let (hb, wb) = b.dim();
    let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            sum_a += a[[clampi(ay + dy, ha), clampi(ax + dx, wa)]];
            sum_b += b[[clampi(by + dy, hb), clampi(bx + dx, wb)]];
        }
    }
    let mean_a = sum_a / n;
    let mean_b = sum_b / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let va = a[[clampi(ay + dy, ha), clampi(ax + dx, wa)]] - mean_a;
            let vb = b[[clampi(by + dy, hb), clampi(bx + dx, wb)]] - mean_b;
            cov += va * vb;
            var_a += va * va;
            var_b += vb * vb;
        }
    }
    if var_a < 1e-24 || var_b < 1e-24 {
        return f64::NEG_INFINITY;
    }
    cov / (var_a * var_b).sqrt()
}

/// Match corners of `set_a` against `set_b` by normalized cross-correlation
/// of `(2·patch+1)^2` patches, searching within `max_dist_px` and keeping
/// only mutual-best pairs.
pub fn match_corners_nn(
    image_a: &GrayscaleImage,
    set_a: &CornerSet,
    image_b: &GrayscaleImage,
    set_b: &CornerSet,
    patch: usize,
    max_dist_px: f64,
) -> Result<Vec<Correspondence>> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::InsufficientCorrespondences(
            "both corner sets must be non-empty".into(),
        ));
    }
    let radius = patch as i64;
    let score = |ia: usize, ib: usize| -> f64 {
        let pa = &set_a.points[ia];
        let pb = &set_b.points[ib];
        let d2 = (pa.x - pb.x).powi(2) + (pa.y - pb.y).powi(2);
        if d2 > max_dist_px * max_dist_px {
            return f64::NEG_INFINITY;
        }
        ncc_patch(
            image_a.data(),
            pa.x as i64,
            pa.y as i64,
            image_b.data(),
            pb.x as i64,
            pb.y as i64,
            radius,
        )
    };

    let best_in_b: Vec<Option<usize>> = (0..set_a.len())
        .map(|ia| {
            let mut best = None;
            let mut best_s = f64::NEG_INFINITY;
            for ib in 0..set_b.len() {
                let s = score(ia, ib);
                if s > best_s {
                    best_s = s;
                    best = Some(ib);
                }
            }
            if best_s.is_finite() {
                best
            } else {
                None
            }
        })
        .collect();
    let best_in_a: Vec<Option<usize>> = (0..set_b.len())
        .map(|ib| {
            let mut best = None;
            let mut best_s = f64::NEG_INFINITY;
            for ia in 0..set_a.len() {
                let s = score(ia, ib);
                if s > best_s {
                    best_s = s;
                    best = Some(ia);
                }
            }
            if best_s.is_finite() {
                best
            } else {
                None
            }
        })
        .collect();

    let mut out = Vec::new();
    for (ia, &choice) in best_in_b.iter().enumerate() {
        if let Some(ib) = choice {
            if best_in_a[ib] == Some(ia) {
                let pa = &set_a.points[ia];
                let pb = &set_b.points[ib];
                out.push(Correspondence {
                    from: (pa.x, pa.y),
                    to: (pb.x, pb.y),
                    ncc: score(ia, ib),
                });
            }
        }
    }
    if out.len() < 3 {
        return Err(Error::InsufficientCorrespondences(format!(
            "only {} mutual matches survive, need at least 3",
            out.len()
        )));
    }
    Ok(out)
}

/// Result of a least-squares affine fit.
#[derive(Debug, Clone, Copy)]
pub struct AffineFit {
    pub transform: AffineTransform2D,
    /// Root-mean-square residual of the fit, in pixels.
    pub rms: f64,
}

const AFFINE_MAX_CONDITION: f64 = 1e12;

/// Least-squares fit of the 6-parameter affine transform mapping
/// `correspondence.from` onto `correspondence.to`.
pub fn fit_affine(correspondences: &[Correspondence]) -> Result<AffineFit> {
    if correspondences.len() < 3 {
        return Err(Error::InsufficientCorrespondences(format!(
            "affine fit needs at least 3 correspondences, got {}",
            correspondences.len()
        )));
    }
    // x' and y' rows decouple into two 3x3 normal systems sharing one matrix
    let mut n = [[0.0f64; 3]; 3];
    let mut bx = [0.0f64; 3];
    let mut by = [0.0f64; 3];
    for corr in correspondences {
        let (x, y) = corr.from;
        let (xp, yp) = corr.to;
        let row = [x, y, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                n[i][j] += row[i] * row[j];
            }
            bx[i] += row[i] * xp;
            by[i] += row[i] * yp;
        }
    }
    let (sol_x, cond) = solve_sym3(&n, &bx);
    if !cond.is_finite() || cond > AFFINE_MAX_CONDITION {
        return Err(Error::Degenerate(format!(
            "correspondences are (near-)collinear: condition number {cond:.3e}"
        )));
    }
    let (sol_y, _) = solve_sym3(&n, &by);
    let transform = AffineTransform2D {
        a: sol_x[0],
        b: sol_x[1],
        tx: sol_x[2],
        c: sol_y[0],
        d: sol_y[1],
        ty: sol_y[2],
    };
    let mut sq = 0.0;
    for corr in correspondences {
        let (px, py) = transform.apply(corr.from.0, corr.from.1);
        sq += (px - corr.to.0).powi(2) + (py - corr.to.1).powi(2);
    }
    let rms = (sq / correspondences.len() as f64).sqrt();
    Ok(AffineFit { transform, rms })
}

/// Warp an image by `transform` (input coordinates -> output coordinates)
/// using inverse-mapping bilinear interpolation; out-of-bounds samples are
/// zero.
pub fn warp_affine(
    image: &GrayscaleImage,
    transform: &AffineTransform2D,
) -> Result<GrayscaleImage> {
    let out = warp_array_affine(image.data(), transform)?;
    GrayscaleImage::new(out.mapv(|v| v.clamp(0.0, 1.0)))
}

pub(crate) fn warp_array_affine(
    data: &Array2<f64>,
    transform: &AffineTransform2D,
) -> Result<Array2<f64>> {
    let inv = transform.inverse()?;
    let (h, w) = data.dim();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let (sx, sy) = inv.apply(j as f64, i as f64);
            out[[i, j]] = bilinear_sample(data, sx, sy);
        }
    }
    Ok(out)
}

/// Tunables for blind stack alignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignParams {
    pub max_corners: usize,
    pub quality: f64,
    pub patch: usize,
    pub max_dist_px: f64,
    /// Matches with a correlation below this floor are dropped before the
    /// affine fit.
    pub min_ncc: f64,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            max_corners: 300,
            quality: 0.02,
            patch: 5,
            max_dist_px: 20.0,
            min_ncc: 0.8,
        }
    }
}

/// An aligned stack with the per-frame transforms that produced it.
#[derive(Debug, Clone)]
pub struct AlignedStack {
    pub stack: GrayscaleStack,
    /// Transform mapping each original frame into reference coordinates.
    pub transforms: Vec<AffineTransform2D>,
    /// Mean corner reprojection error after alignment, in pixels.
    pub mean_reprojection_px: f64,
}

/// Align every frame of the stack to the middle frame.
pub fn align_stack(stack: &GrayscaleStack) -> Result<AlignedStack> {
    align_stack_with(stack, &AlignParams::default())
}

pub fn align_stack_with(stack: &GrayscaleStack, params: &AlignParams) -> Result<AlignedStack> {
    if stack.len() < 2 {
        return Err(Error::invalid(format!(
            "alignment needs at least 2 frames, got {}",
            stack.len()
        )));
    }
    let reference = stack.len() / 2;
    let ref_frame = &stack.frames()[reference];
    let ref_corners = detect_corners(ref_frame, params.max_corners, params.quality)
        .map_err(|e| e.in_stage("align"))?;

    let mut frames = Vec::with_capacity(stack.len());
    let mut transforms = Vec::with_capacity(stack.len());
    let mut err_sum = 0.0;
    let mut err_count = 0usize;
    for (k, frame) in stack.frames().iter().enumerate() {
        if k == reference {
            frames.push(frame.clone());
            transforms.push(AffineTransform2D::identity());
            continue;
        }
        let corners = detect_corners(frame, params.max_corners, params.quality)
            .map_err(|e| Error::InvalidInput(format!("frame {k}: {e}")))?;
        let mut matches = match_corners_nn(
            frame,
            &corners,
            ref_frame,
            &ref_corners,
            params.patch,
            params.max_dist_px,
        )
        .map_err(|e| Error::InsufficientCorrespondences(format!("frame {k}: {e}")))?;
        matches.retain(|m| m.ncc >= params.min_ncc);
        if matches.len() < 3 {
            return Err(Error::InsufficientCorrespondences(format!(
                "frame {k}: only {} matches clear the correlation floor",
                matches.len()
            )));
        }
        let fit = fit_affine(&matches).map_err(|e| Error::Degenerate(format!("frame {k}: {e}")))?;
        for corr in &matches {
            let (px, py) = fit.transform.apply(corr.from.0, corr.from.1);
            err_sum += ((px - corr.to.0).powi(2) + (py - corr.to.1).powi(2)).sqrt();
            err_count += 1;
        }
        frames.push(warp_affine(frame, &fit.transform)?);
        transforms.push(fit.transform);
    }
    let aligned = GrayscaleStack::new(frames, stack.lens_positions_mm().to_vec())?;
    Ok(AlignedStack {
        stack: aligned,
        transforms,
        mean_reprojection_px: if err_count > 0 {
            err_sum / err_count as f64
        } else {
            0.0
        },
    })
}

/// Frame-to-frame differences of raw arrays: `out[k] = frames[k+1] - frames[k]`.
pub fn diff_arrays(frames: &[Array2<f64>]) -> Result<Array3<f64>> {
    if frames.len() < 2 {
        return Err(Error::invalid(format!(
            "temporal differencing needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let (h, w) = frames[0].dim();
    let mut out = Array3::zeros((frames.len() - 1, h, w));
    for k in 0..frames.len() - 1 {
        let mut plane = out.index_axis_mut(ndarray::Axis(0), k);
        plane.assign(&(&frames[k + 1] - &frames[k]));
    }
    Ok(out)
}

/// Temporal derivative of the stack along the sweep.
pub fn temporal_diff(stack: &GrayscaleStack) -> Result<Array3<f64>> {
    let frames: Vec<Array2<f64>> = stack.frames().iter().map(|f| f.data().clone()).collect();
    diff_arrays(&frames)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    /// Feed signed Sobel responses (`Gx + Gy`) to the differencing step
    /// instead of the gradient magnitude.
    pub signed_gradients: bool,
    /// Skip the edge and differencing steps and emit the aligned raw
    /// frames themselves (`K` channels instead of `K-1`).
    pub raw_frames: bool,
    pub align: AlignParams,
}

/// The full chain: align, per-frame edge map, temporal differences.
/// Output is the `[K-1, H, W]` model-input tensor (or the `[K, H, W]`
/// aligned frames with `raw_frames`).
pub fn preprocess_pipeline(
    stack: &GrayscaleStack,
    opts: &PreprocessOptions,
) -> Result<Array3<f64>> {
    let aligned = align_stack_with(stack, &opts.align)?;
    if opts.raw_frames {
        let (h, w) = (aligned.stack.height(), aligned.stack.width());
        let mut out = Array3::zeros((aligned.stack.len(), h, w));
        for (k, frame) in aligned.stack.frames().iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), k).assign(frame.data());
        }
        return Ok(out);
    }
    let edges: Vec<Array2<f64>> = aligned
        .stack
        .frames()
        .iter()
        .map(|f| {
            if opts.signed_gradients {
                let (gx, gy) = sobel_gradients(f.data());
                Ok(gx + gy)
            } else {
                sobel_edges(f.data())
            }
        })
        .collect::<Result<_>>()?;
    diff_arrays(&edges)
}
