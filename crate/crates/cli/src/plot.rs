//! Spectral-signature plots: a two-column CSV and a static SVG line chart
//! comparing a pixel's true and reconstructed spectra.

use std::path::Path;

use spectrasweep_core::cube::SpectralCube;

pub struct SignatureData {
    pub wavelengths_nm: Vec<f64>,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
}

/// Pull the spectrum of pixel `(x, y)` out of both cubes.
pub fn signature_at(
    prediction: &SpectralCube,
    truth: &SpectralCube,
    x: usize,
    y: usize,
) -> anyhow::Result<SignatureData> {
    if prediction.data().dim() != truth.data().dim() {
        anyhow::bail!(
            "cube dims differ: {:?} vs {:?}",
            prediction.data().dim(),
            truth.data().dim()
        );
    }
    let (l, h, w) = truth.data().dim();
    if x >= w || y >= h {
        anyhow::bail!("pixel ({x}, {y}) outside the {w}x{h} image");
    }
    Ok(SignatureData {
        wavelengths_nm: truth.bands().wavelengths_nm().to_vec(),
        truth: (0..l).map(|b| truth.data()[[b, y, x]]).collect(),
        prediction: (0..l).map(|b| prediction.data()[[b, y, x]]).collect(),
    })
}

pub fn write_csv(data: &SignatureData, path: &Path) -> anyhow::Result<()> {
    let mut out = String::from("wavelength_nm,truth,prediction\n");
    for ((w, t), p) in data
        .wavelengths_nm
        .iter()
        .zip(&data.truth)
        .zip(&data.prediction)
    {
        out.push_str(&format!("{w},{t},{p}\n"));
    }
    std::fs::write(path, out).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn polyline(xs: &[f64], ys: &[f64], x_range: (f64, f64), y_max: f64, color: &str) -> String {
    let span_x = (x_range.1 - x_range.0).max(1e-12);
    let span_y = y_max.max(1e-12);
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let px = MARGIN + (x - x_range.0) / span_x * (SVG_W - 2.0 * MARGIN);
            let py = SVG_H - MARGIN - (y / span_y) * (SVG_H - 2.0 * MARGIN);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    format!(
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        points.join(" ")
    )
}

/// Render the two spectra as an SVG line chart with axes and a legend.
pub fn write_svg(data: &SignatureData, path: &Path) -> anyhow::Result<()> {
    let x_range = (
        *data.wavelengths_nm.first().unwrap_or(&0.0),
        *data.wavelengths_nm.last().unwrap_or(&1.0),
    );
    let y_max = data
        .truth
        .iter()
        .chain(&data.prediction)
        .fold(0.0f64, |m, &v| m.max(v))
        .max(1e-6);
    let mut svg = String::new();
    svg.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    ));
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    // axes
    svg.push_str(&format!(
        r#"<line x1="{MARGIN}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#,
        y0 = SVG_H - MARGIN,
        x1 = SVG_W - MARGIN
    ));
    svg.push_str(&format!(
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{y0}" stroke="black"/>"#,
        y0 = SVG_H - MARGIN
    ));
    svg.push_str(&format!(
        r#"<text x="{x}" y="{y}" font-size="12" text-anchor="middle">wavelength (nm)</text>"#,
        x = SVG_W / 2.0,
        y = SVG_H - 12.0
    ));
    svg.push_str(&format!(
        r#"<text x="{x}" y="{y}" font-size="12">{lo:.0}</text>"#,
        x = MARGIN,
        y = SVG_H - MARGIN + 16.0,
        lo = x_range.0
    ));
    svg.push_str(&format!(
        r#"<text x="{x}" y="{y}" font-size="12" text-anchor="end">{hi:.0}</text>"#,
        x = SVG_W - MARGIN,
        y = SVG_H - MARGIN + 16.0,
        hi = x_range.1
    ));
    svg.push_str(&format!(
        r#"<text x="{x}" y="{y}" font-size="12" text-anchor="end">{y_max:.3}</text>"#,
        x = MARGIN - 4.0,
        y = MARGIN + 4.0
    ));
    svg.push_str(&polyline(
        &data.wavelengths_nm,
        &data.truth,
        x_range,
        y_max,
        "#1f77b4",
    ));
    svg.push_str(&polyline(
        &data.wavelengths_nm,
        &data.prediction,
        x_range,
        y_max,
        "#ff7f0e",
    ));
    // legend
    svg.push_str(&format!(
        r##"<text x="{x}" y="{y}" font-size="12" fill="#1f77b4">truth</text>"##,
        x = SVG_W - MARGIN - 90.0,
        y = MARGIN + 14.0
    ));
    svg.push_str(&format!(
        r##"<text x="{x}" y="{y}" font-size="12" fill="#ff7f0e">prediction</text>"##,
        x = SVG_W - MARGIN - 90.0,
        y = MARGIN + 30.0
    ));
    svg.push_str("</svg>");
    std::fs::write(path, svg).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
