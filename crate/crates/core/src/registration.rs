//! Cross-view registration: map a reference spectral cube into the camera's
//! coordinate frame when the two were captured from different viewpoints.
//!
//! The chain is a single-scale reimplementation of the usual oriented-binary
//! feature recipe: FAST-style ring candidates scored by the Harris response,
//! orientation from the patch intensity centroid, 256-bit pairwise intensity
//! descriptors rotated to the feature angle, brute-force Hamming matching
//! with cross-checking, a Hartley-normalized DLT homography, and RANSAC on
//! top. Scenes are assumed flat; there is no image pyramid.

use std::sync::OnceLock;

use ndarray::{Array2, Array3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::{GrayscaleImage, SpectralCube};
use crate::error::{Error, Result};
use crate::linalg::{invert3, jacobi_eigen_sym};
use crate::preprocess::{bilinear_sample, gaussian_window, sobel_gradients};

/// A corner with an orientation, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedFeature {
    pub x: f64,
    pub y: f64,
    /// Orientation in radians, in `[-pi, pi)`.
    pub angle: f64,
    pub score: f64,
}

/// 256 pairwise intensity tests packed into four words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryDescriptor {
    pub bits: [u64; 4],
}

pub const DESCRIPTOR_BITS: u32 = 256;

/// Hamming distance: population count of the XOR.
pub fn hamming(a: &BinaryDescriptor, b: &BinaryDescriptor) -> u32 {
    a.bits
        .iter()
        .zip(b.bits.iter())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// A 3x3 projective transform, normalized so the bottom-right entry is one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = invert3(&self.m)
            .ok_or_else(|| Error::Degenerate("homography is not invertible".into()))?;
        Ok(Homography::normalized(inv))
    }

    fn normalized(mut m: [[f64; 3]; 3]) -> Homography {
        let scale = m[2][2];
        if scale.abs() > 1e-300 {
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    *v /= scale;
                }
            }
        }
        Homography { m }
    }

    pub fn frobenius_distance(&self, other: &Homography) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.m[i][j] - other.m[i][j];
                s += d * d;
            }
        }
        s.sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_distance(&Homography { m: [[0.0; 3]; 3] })
    }
}

/// Matched descriptor index pairs with their Hamming distances.
#[derive(Debug, Clone, Default)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize, u32)>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

const FAST_RING: [(i64, i64); 16] = [
    (-3, 0),
    (-3, 1),
    (-2, 2),
    (-1, 3),
    (0, 3),
    (1, 3),
    (2, 2),
    (3, 1),
    (3, 0),
    (3, -1),
    (2, -2),
    (1, -3),
    (0, -3),
    (-1, -3),
    (-2, -2),
    (-3, -1),
];
const FAST_ARC: usize = 9;
const FAST_THRESHOLD: f64 = 0.06;
const ORIENTATION_RADIUS: i64 = 15;
const FEATURE_NMS_RADIUS: i64 = 5;
/// Minimum distance from the border for descriptor extraction.
pub const DESCRIPTOR_MARGIN: usize = 16;

fn fast_is_corner(data: &Array2<f64>, y: usize, x: usize, t: f64) -> bool {
    let center = data[[y, x]];
    let mut bright = [false; 16];
    let mut dark = [false; 16];
    for (k, (dy, dx)) in FAST_RING.iter().enumerate() {
        let v = data[[(y as i64 + dy) as usize, (x as i64 + dx) as usize]];
        bright[k] = v > center + t;
        dark[k] = v < center - t;
    }
    let max_run = |flags: &[bool; 16]| -> usize {
        let mut best = 0;
        let mut run = 0;
        // walk twice around to catch wrapping runs
        for i in 0..32 {
            if flags[i % 16] {
                run += 1;
                best = best.max(run.min(16));
            } else {
                run = 0;
            }
        }
        best
    };
    max_run(&bright) >= FAST_ARC || max_run(&dark) >= FAST_ARC
}

fn intensity_centroid_angle(data: &Array2<f64>, y: usize, x: usize) -> f64 {
    let (h, w) = data.dim();
    let mut m01 = 0.0;
    let mut m10 = 0.0;
    for dy in -ORIENTATION_RADIUS..=ORIENTATION_RADIUS {
        for dx in -ORIENTATION_RADIUS..=ORIENTATION_RADIUS {
            if dy * dy + dx * dx > ORIENTATION_RADIUS * ORIENTATION_RADIUS {
                continue;
            }
            let yi = y as i64 + dy;
            let xi = x as i64 + dx;
            if yi < 0 || xi < 0 || yi >= h as i64 || xi >= w as i64 {
                continue;
            }
            let v = data[[yi as usize, xi as usize]];
            m01 += dy as f64 * v;
            m10 += dx as f64 * v;
        }
    }
    if m01 == 0.0 && m10 == 0.0 {
        0.0
    } else {
        m01.atan2(m10)
    }
}

/// Detect up to `n` oriented features: FAST ring candidates, Harris-response
/// scores, 5 px non-maximum suppression, intensity-centroid orientation.
pub fn detect_oriented_features(image: &GrayscaleImage, n: usize) -> Result<Vec<OrientedFeature>> {
    let (h, w) = image.data().dim();
    if h < 32 || w < 32 {
        return Err(Error::invalid(format!(
            "feature detection needs at least 32x32, got {h}x{w}"
        )));
    }
    let data = image.data();
    let (gx, gy) = sobel_gradients(data);
    let win = gaussian_window(1.5);
    let radius = (win.dim().0 / 2) as i64;

    let harris_at = |y: usize, x: usize| -> f64 {
        let mut sxx = 0.0;
        let mut syy = 0.0;
        let mut sxy = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let yi = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                let xi = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                let wgt = win[[(dy + radius) as usize, (dx + radius) as usize]];
                sxx += wgt * gx[[yi, xi]] * gx[[yi, xi]];
                syy += wgt * gy[[yi, xi]] * gy[[yi, xi]];
                sxy += wgt * gx[[yi, xi]] * gy[[yi, xi]];
            }
        }
        sxx * syy - sxy * sxy - 0.04 * (sxx + syy) * (sxx + syy)
    };

    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            if fast_is_corner(data, y, x, FAST_THRESHOLD) {
                let score = harris_at(y, x);
                if score > 0.0 {
                    candidates.push((y, x, score));
                }
            }
        }
    }

    // non-maximum suppression on the sparse candidate set
    let mut keep = vec![true; candidates.len()];
    for i in 0..candidates.len() {
        if !keep[i] {
            continue;
        }
        for j in 0..candidates.len() {
            if i == j {
                continue;
            }
            let (yi, xi, si) = candidates[i];
            let (yj, xj, sj) = candidates[j];
            if (yi as i64 - yj as i64).abs() <= FEATURE_NMS_RADIUS
                && (xi as i64 - xj as i64).abs() <= FEATURE_NMS_RADIUS
                && (sj > si || (sj == si && (yj, xj) < (yi, xi)))
            {
                keep[i] = false;
                break;
            }
        }
    }

    let mut features: Vec<OrientedFeature> = candidates
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((y, x, score), _)| OrientedFeature {
            x: x as f64,
            y: y as f64,
            angle: intensity_centroid_angle(data, y, x),
            score,
        })
        .collect();
    features.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    features.truncate(n);
    Ok(features)
}

/// Offsets of the 256 intensity test pairs, drawn once from a seeded
/// generator (Gaussian spread, rejected outside the orientation disc).
fn brief_pattern() -> &'static Vec<(f64, f64, f64, f64)> {
    static PATTERN: OnceLock<Vec<(f64, f64, f64, f64)>> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_B81F);
        let sigma = 31.0 / 5.0;
        let limit = ORIENTATION_RADIUS as f64;
        let draw_point = |rng: &mut ChaCha8Rng| -> (f64, f64) {
            loop {
                // Box-Muller, to keep the pattern independent of any
                // sampling-crate internals
                let u1: f64 = rand::Rng::random_range(rng, 1e-12..1.0);
                let u2: f64 = rand::Rng::random_range(rng, 0.0..1.0);
                let r = sigma * (-2.0 * u1.ln()).sqrt();
                let x = r * (2.0 * std::f64::consts::PI * u2).cos();
                let y = r * (2.0 * std::f64::consts::PI * u2).sin();
                if x * x + y * y <= limit * limit {
                    return (x, y);
                }
            }
        };
        (0..DESCRIPTOR_BITS)
            .map(|_| {
                let p = draw_point(&mut rng);
                let q = draw_point(&mut rng);
                (p.0, p.1, q.0, q.1)
            })
            .collect()
    })
}

/// Describe a feature: each bit compares the intensities at one test pair,
/// with the pair pattern rotated by the feature angle.
pub fn describe(image: &GrayscaleImage, feature: &OrientedFeature) -> Result<BinaryDescriptor> {
    let (h, w) = image.data().dim();
    let margin = DESCRIPTOR_MARGIN as f64;
    if feature.x < margin
        || feature.y < margin
        || feature.x >= w as f64 - margin
        || feature.y >= h as f64 - margin
    {
        return Err(Error::invalid(format!(
            "feature at ({}, {}) is within {DESCRIPTOR_MARGIN} px of the border",
            feature.x, feature.y
        )));
    }
    let data = image.data();
    let (sin, cos) = feature.angle.sin_cos();
    let fx = feature.x.round() as i64;
    let fy = feature.y.round() as i64;
    let sample_at = |dx: f64, dy: f64| -> f64 {
        let rx = (cos * dx - sin * dy).round() as i64;
        let ry = (sin * dx + cos * dy).round() as i64;
        data[[(fy + ry) as usize, (fx + rx) as usize]]
    };
    let mut bits = [0u64; 4];
    for (i, &(px, py, qx, qy)) in brief_pattern().iter().enumerate() {
        if sample_at(px, py) < sample_at(qx, qy) {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    Ok(BinaryDescriptor { bits })
}

/// Brute-force matching: every `a` descriptor takes its minimum-Hamming
/// partner in `b` (ties to the lowest index); with `cross_check` only
/// mutual minima survive.
pub fn match_bruteforce(
    descs_a: &[BinaryDescriptor],
    descs_b: &[BinaryDescriptor],
    cross_check: bool,
) -> MatchSet {
    if descs_a.is_empty() || descs_b.is_empty() {
        return MatchSet::default();
    }
    let best_b: Vec<(usize, u32)> = descs_a
        .iter()
        .map(|da| {
            let mut best = (0usize, u32::MAX);
            for (ib, db) in descs_b.iter().enumerate() {
                let d = hamming(da, db);
                if d < best.1 {
                    best = (ib, d);
                }
            }
            best
        })
        .collect();
    if !cross_check {
        return MatchSet {
            pairs: best_b
                .into_iter()
                .enumerate()
                .map(|(ia, (ib, d))| (ia, ib, d))
                .collect(),
        };
    }
    let best_a: Vec<usize> = descs_b
        .iter()
        .map(|db| {
            let mut best = (0usize, u32::MAX);
            for (ia, da) in descs_a.iter().enumerate() {
                let d = hamming(da, db);
                if d < best.1 {
                    best = (ia, d);
                }
            }
            best.0
        })
        .collect();
    MatchSet {
        pairs: best_b
            .into_iter()
            .enumerate()
            .filter(|(ia, (ib, _))| best_a[*ib] == *ia)
            .map(|(ia, (ib, d))| (ia, ib, d))
            .collect(),
    }
}

/// Similarity transform taking the points to centroid zero and RMS radius
/// sqrt(2), as a 3x3 matrix.
fn hartley_normalization(points: &[(f64, f64)]) -> Option<[[f64; 3]; 3]> {
    let n = points.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for &(x, y) in points {
        cx += x;
        cy += y;
    }
    cx /= n;
    cy /= n;
    let mut rms = 0.0;
    for &(x, y) in points {
        rms += (x - cx).powi(2) + (y - cy).powi(2);
    }
    rms = (rms / n).sqrt();
    if rms < 1e-12 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / rms;
    Some([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn mat_mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn apply3(m: &[[f64; 3]; 3], x: f64, y: f64) -> (f64, f64) {
    let w = m[2][0] * x + m[2][1] * y + m[2][2];
    (
        (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
        (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
    )
}

/// Estimate the homography mapping `points_a` onto `points_b` with the
/// Hartley-normalized direct linear transform. The homogeneous system is
/// solved through the eigendecomposition of `A^T A`.
pub fn dlt_homography(points_a: &[(f64, f64)], points_b: &[(f64, f64)]) -> Result<Homography> {
    let n = points_a.len();
    if n < 4 || points_b.len() != n {
        return Err(Error::InsufficientCorrespondences(format!(
            "homography needs at least 4 correspondences, got {n} and {}",
            points_b.len()
        )));
    }
    let t_a = hartley_normalization(points_a)
        .ok_or_else(|| Error::Degenerate("source points are coincident".into()))?;
    let t_b = hartley_normalization(points_b)
        .ok_or_else(|| Error::Degenerate("target points are coincident".into()))?;

    // accumulate A^T A directly; rows come in pairs per correspondence
    let mut ata = Array2::zeros((9, 9));
    for (&pa, &pb) in points_a.iter().zip(points_b.iter()) {
        let (x, y) = apply3(&t_a, pa.0, pa.1);
        let (u, v) = apply3(&t_b, pb.0, pb.1);
        let rows = [
            [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u],
            [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v],
        ];
        for row in rows {
            for i in 0..9 {
                for j in 0..9 {
                    ata[[i, j]] += row[i] * row[j];
                }
            }
        }
    }
    let (vals, vecs) = jacobi_eigen_sym(&ata);
    if vals[1].abs() <= 1e-12 * vals[8].abs().max(1e-300) {
        return Err(Error::Degenerate(
            "correspondence configuration is rank deficient".into(),
        ));
    }
    let mut h_norm = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            h_norm[r][c] = vecs[[3 * r + c, 0]];
        }
    }
    let t_b_inv =
        invert3(&t_b).ok_or_else(|| Error::Degenerate("normalization singular".into()))?;
    let h = mat_mul3(&t_b_inv, &mat_mul3(&h_norm, &t_a));
    if h[2][2].abs() < 1e-12 * h.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max) {
        return Err(Error::Degenerate("homography scale vanishes".into()));
    }
    Ok(Homography::normalized(h))
}

fn three_collinear(points: &[(f64, f64)]) -> bool {
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            for k in (j + 1)..points.len() {
                let (ax, ay) = points[i];
                let (bx, by) = points[j];
                let (cx, cy) = points[k];
                let area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
                if area.abs() < 1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

/// Mean symmetric transfer distance of one correspondence under `h`.
fn symmetric_transfer_px(h: &Homography, h_inv: &Homography, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (fx, fy) = h.apply(a.0, a.1);
    let fwd = ((fx - b.0).powi(2) + (fy - b.1).powi(2)).sqrt();
    let (bx, by) = h_inv.apply(b.0, b.1);
    let bwd = ((bx - a.0).powi(2) + (by - a.1).powi(2)).sqrt();
    0.5 * (fwd + bwd)
}

/// Robust homography estimation over matched point pairs: random minimal
/// samples, consensus by symmetric transfer error, adaptive stopping at 0.99
/// confidence, final refit on all inliers. Deterministic for a given seed
/// (each trial derives its own generator from `(seed, trial)`).
pub fn ransac_homography(
    matches: &MatchSet,
    points_a: &[(f64, f64)],
    points_b: &[(f64, f64)],
    threshold_px: f64,
    max_iters: usize,
    seed: u64,
) -> Result<(Homography, Vec<bool>)> {
    let corr: Vec<((f64, f64), (f64, f64))> = matches
        .pairs
        .iter()
        .map(|&(ia, ib, _)| (points_a[ia], points_b[ib]))
        .collect();
    let n = corr.len();
    if n < 4 {
        return Err(Error::InsufficientCorrespondences(format!(
            "RANSAC needs at least 4 matches, got {n}"
        )));
    }
    let mut best_inliers: Vec<bool> = Vec::new();
    let mut best_count = 0usize;
    let mut needed = max_iters;
    let mut trial = 0usize;
    while trial < needed.min(max_iters) {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let picks = sample(&mut rng, n, 4).into_vec();
        trial += 1;
        let sample_a: Vec<(f64, f64)> = picks.iter().map(|&i| corr[i].0).collect();
        let sample_b: Vec<(f64, f64)> = picks.iter().map(|&i| corr[i].1).collect();
        if three_collinear(&sample_a) || three_collinear(&sample_b) {
            continue;
        }
        let Ok(h) = dlt_homography(&sample_a, &sample_b) else {
            continue;
        };
        let Ok(h_inv) = h.inverse() else {
            continue;
        };
        let inliers: Vec<bool> = corr
            .iter()
            .map(|&(a, b)| symmetric_transfer_px(&h, &h_inv, a, b) < threshold_px)
            .collect();
        let count = inliers.iter().filter(|&&x| x).count();
        if count > best_count {
            best_count = count;
            best_inliers = inliers;
            // adaptive stopping at 0.99 confidence
            let w = count as f64 / n as f64;
            let p_sample = w.powi(4);
            if p_sample > 1e-12 && p_sample < 1.0 {
                let est = ((1.0f64 - 0.99).ln() / (1.0 - p_sample).ln()).ceil() as usize;
                needed = est.max(trial);
            } else if p_sample >= 1.0 {
                needed = trial;
            }
        }
    }
    if best_count < 4 {
        return Err(Error::InsufficientCorrespondences(format!(
            "no consensus model: best support {best_count} of {n}"
        )));
    }
    let in_a: Vec<(f64, f64)> = corr
        .iter()
        .zip(&best_inliers)
        .filter(|(_, &keep)| keep)
        .map(|(&(a, _), _)| a)
        .collect();
    let in_b: Vec<(f64, f64)> = corr
        .iter()
        .zip(&best_inliers)
        .filter(|(_, &keep)| keep)
        .map(|(&(_, b), _)| b)
        .collect();
    let h = dlt_homography(&in_a, &in_b)?;
    Ok((h, best_inliers))
}

/// Warp every band of the cube by `h` (cube coordinates -> output
/// coordinates) into an `out_dims = (height, width)` grid.
pub fn warp_cube(
    cube: &SpectralCube,
    h: &Homography,
    out_dims: (usize, usize),
) -> Result<SpectralCube> {
    let h_inv = h.inverse()?;
    let (l, _, _) = cube.data().dim();
    let (oh, ow) = out_dims;
    let mut out = Array3::zeros((l, oh, ow));
    for b in 0..l {
        let band = cube.data().index_axis(ndarray::Axis(0), b);
        let band = band.to_owned();
        for i in 0..oh {
            for j in 0..ow {
                let (sx, sy) = h_inv.apply(j as f64, i as f64);
                out[[b, i, j]] = bilinear_sample(&band, sx, sy).max(0.0);
            }
        }
    }
    SpectralCube::new(cube.bands().clone(), out)
}

/// Knobs of the full registration chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub n_features: usize,
    pub cross_check: bool,
    pub ransac_threshold_px: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Minimum features required on each side before matching.
    pub min_features: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            n_features: 500,
            cross_check: true,
            ransac_threshold_px: 2.0,
            max_iters: 2000,
            seed: 0,
            min_features: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationDiagnostics {
    pub features_cube: usize,
    pub features_reference: usize,
    pub matches: usize,
    pub inliers: usize,
    pub mean_reprojection_px: f64,
}

fn luminance_image(cube: &SpectralCube) -> Result<GrayscaleImage> {
    let mut lum = cube.luminance();
    let max = lum.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        lum.mapv_inplace(|v| v / max);
    }
    GrayscaleImage::new(lum)
}

/// Features that are far enough from the border to describe, with their
/// descriptors.
fn describable(
    image: &GrayscaleImage,
    features: &[OrientedFeature],
) -> (Vec<(f64, f64)>, Vec<BinaryDescriptor>) {
    let mut points = Vec::new();
    let mut descs = Vec::new();
    for f in features {
        if let Ok(d) = describe(image, f) {
            points.push((f.x, f.y));
            descs.push(d);
        }
    }
    (points, descs)
}

/// Full label-mapping chain: project the cube to luminance, detect and
/// describe features on both views, match, fit a robust homography, and
/// warp the cube into the reference frame's coordinates.
pub fn register_label(
    cube: &SpectralCube,
    reference: &GrayscaleImage,
    params: &RegistrationParams,
) -> Result<(SpectralCube, Homography, RegistrationDiagnostics)> {
    let lum = luminance_image(cube).map_err(|e| e.in_stage("luminance"))?;
    let feats_a =
        detect_oriented_features(&lum, params.n_features).map_err(|e| e.in_stage("detect"))?;
    let feats_b =
        detect_oriented_features(reference, params.n_features).map_err(|e| e.in_stage("detect"))?;
    if feats_a.len() < params.min_features || feats_b.len() < params.min_features {
        return Err(Error::InsufficientCorrespondences(format!(
            "{} cube features and {} reference features, need {} each",
            feats_a.len(),
            feats_b.len(),
            params.min_features
        ))
        .in_stage("detect"));
    }
    let (points_a, descs_a) = describable(&lum, &feats_a);
    let (points_b, descs_b) = describable(reference, &feats_b);
    if points_a.len() < params.min_features || points_b.len() < params.min_features {
        return Err(Error::InsufficientCorrespondences(
            "too few features survive the descriptor border margin".into(),
        )
        .in_stage("describe"));
    }
    let matches = match_bruteforce(&descs_a, &descs_b, params.cross_check);
    if matches.len() < 4 {
        return Err(
            Error::InsufficientCorrespondences(format!("only {} matches", matches.len()))
                .in_stage("match"),
        );
    }
    let (h, inlier_mask) = ransac_homography(
        &matches,
        &points_a,
        &points_b,
        params.ransac_threshold_px,
        params.max_iters,
        params.seed,
    )
    .map_err(|e| e.in_stage("ransac"))?;

    let mut reproj = 0.0;
    let mut inliers = 0usize;
    for (pair, &keep) in matches.pairs.iter().zip(&inlier_mask) {
        if !keep {
            continue;
        }
        let (ia, ib, _) = *pair;
        let (px, py) = h.apply(points_a[ia].0, points_a[ia].1);
        reproj += ((px - points_b[ib].0).powi(2) + (py - points_b[ib].1).powi(2)).sqrt();
        inliers += 1;
    }
    let warped = warp_cube(cube, &h, (reference.height(), reference.width()))
        .map_err(|e| e.in_stage("warp"))?;
    Ok((
        warped,
        h,
        RegistrationDiagnostics {
            features_cube: feats_a.len(),
            features_reference: feats_b.len(),
            matches: matches.len(),
            inliers,
            mean_reprojection_px: if inliers > 0 {
                reproj / inliers as f64
            } else {
                0.0
            },
        },
    ))
}
