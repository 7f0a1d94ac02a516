//! Reconstruction quality metrics (PSNR, SSIM, L1) and the aggregated
//! report with Best / Worst / Mean columns.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::losses::{l1_loss_arrays, rgb_project_arrays, ssim, RgbProjection, SsimParams};

/// Peak signal-to-noise ratio in dB: `10·log10(max² / MSE)`. Identical
/// inputs have zero error; that case returns `f64::INFINITY` as the
/// distinguished "perfect" value (rendered as `perfect`/`null` in reports).
pub fn psnr(y: &Array3<f64>, yhat: &Array3<f64>, max_value: f64) -> Result<f64> {
    if y.dim() != yhat.dim() {
        return Err(Error::invalid(format!(
            "tensor dims differ: {:?} vs {:?}",
            y.dim(),
            yhat.dim()
        )));
    }
    if max_value <= 0.0 {
        return Err(Error::invalid(format!(
            "dynamic range must be positive, got {max_value}"
        )));
    }
    let n = y.len() as f64;
    let mse: f64 = y
        .iter()
        .zip(yhat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

pub fn psnr_cubes(y: &SpectralCube, yhat: &SpectralCube, max_value: f64) -> Result<f64> {
    psnr(y.data(), yhat.data(), max_value)
}

/// Serialize non-finite PSNR values (the "perfect" sentinel) as JSON null.
mod db_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Metrics of one prediction/truth pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairMetrics {
    #[serde(with = "db_or_null")]
    pub psnr_db: f64,
    /// SSIM of the RGB projections of both cubes.
    pub ssim: f64,
    /// SSIM averaged over individual bands.
    pub ssim_bands: f64,
    pub l1: f64,
}

/// Best / worst / mean of one metric over the evaluated set. "Best" is
/// metric-aware: highest for PSNR and SSIM, lowest for L1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(with = "db_or_null")]
    pub best: f64,
    #[serde(with = "db_or_null")]
    pub worst: f64,
    #[serde(with = "db_or_null")]
    pub mean: f64,
}

fn aggregate(values: impl Iterator<Item = f64> + Clone, higher_is_better: bool) -> Aggregate {
    let mut best = if higher_is_better {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    let mut worst = -best;
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        if higher_is_better {
            best = best.max(v);
            worst = worst.min(v);
        } else {
            best = best.min(v);
            worst = worst.max(v);
        }
        sum += v;
        n += 1;
    }
    Aggregate {
        best,
        worst,
        mean: sum / n as f64,
    }
}

/// Per-pair metrics plus Best / Worst / Mean aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub pairs: Vec<PairMetrics>,
    pub psnr_db: Aggregate,
    pub ssim: Aggregate,
    pub ssim_bands: Aggregate,
    pub l1: Aggregate,
}

impl MetricReport {
    /// Aligned text table with one row per metric and the three aggregate
    /// columns.
    pub fn table_string(&self) -> String {
        let fmt = |v: f64| -> String {
            if v.is_finite() {
                format!("{v:.3}")
            } else {
                "perfect".to_string()
            }
        };
        let rows = [
            ("PSNR (DB)", &self.psnr_db),
            ("SSIM", &self.ssim),
            ("SSIM (bands)", &self.ssim_bands),
            ("L1", &self.l1),
        ];
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14}| {:>9} | {:>9} | {:>9}\n",
            "", "Best", "Worst", "Mean"
        ));
        for (name, agg) in rows {
            out.push_str(&format!(
                "{:<14}| {:>9} | {:>9} | {:>9}\n",
                name,
                fmt(agg.best),
                fmt(agg.worst),
                fmt(agg.mean)
            ));
        }
        out
    }
}

/// Evaluate predictions against ground truths. PSNR uses a dynamic range of
/// one (cubes are normalized); SSIM is reported both on the RGB projection
/// and averaged over bands.
pub fn evaluate(predictions: &[SpectralCube], truths: &[SpectralCube]) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let params = SsimParams::default();
    let mut pairs = Vec::with_capacity(predictions.len());
    for (idx, (pred, truth)) in predictions.iter().zip(truths.iter()).enumerate() {
        if pred.data().dim() != truth.data().dim() {
            return Err(Error::invalid(format!(
                "pair {idx}: dims {:?} vs {:?}",
                pred.data().dim(),
                truth.data().dim()
            )));
        }
        let proj = RgbProjection::for_bands(truth.bands())?;
        let rgb_truth = rgb_project_arrays(truth.data(), &proj)?;
        let rgb_pred = rgb_project_arrays(pred.data(), &proj)?;
        pairs.push(PairMetrics {
            psnr_db: psnr(truth.data(), pred.data(), 1.0)?,
            ssim: ssim(&rgb_truth, &rgb_pred, &params)?,
            ssim_bands: ssim(truth.data(), pred.data(), &params)?,
            l1: l1_loss_arrays(truth.data(), pred.data())?,
        });
    }
    Ok(MetricReport {
        psnr_db: aggregate(pairs.iter().map(|p| p.psnr_db), true),
        ssim: aggregate(pairs.iter().map(|p| p.ssim), true),
        ssim_bands: aggregate(pairs.iter().map(|p| p.ssim_bands), true),
        l1: aggregate(pairs.iter().map(|p| p.l1), false),
        pairs,
    })
}
