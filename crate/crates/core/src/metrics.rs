//! Image quality metrics and corpus-level aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::losses::{ssim_value, SsimParams};
use crate::{Error, Float, Image, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

fn check_dims<T: Float>(op: &'static str, a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn f64_of<T: Float>(v: T) -> f64 {
    Float::to_f64(v)
}

/// `||xg - x|| / ||x||`.
pub fn nmse<T: Float>(xg: &Image<T>, x: &Image<T>) -> Result<f64> {
    check_dims("nmse", xg, x)?;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&a, &b) in xg.data().iter().zip(x.data()) {
        let (a, b) = (f64_of(a), f64_of(b));
        num += (a - b) * (a - b);
        den += b * b;
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("nmse reference image has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// `10 log10(peak^2 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr<T: Float>(xg: &Image<T>, x: &Image<T>, peak: f64) -> Result<f64> {
    check_dims("psnr", xg, x)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("psnr peak {peak} must be positive")));
    }
    let mse = xg
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| (f64_of(a) - f64_of(b)).powi(2))
        .sum::<f64>()
        / x.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// SSIM with dynamic range `peak`.
pub fn ssim_metric<T: Float>(xg: &Image<T>, x: &Image<T>, peak: f64) -> Result<f64> {
    check_dims("ssim", xg, x)?;
    let params = SsimParams {
        dynamic_range: peak,
        ..SsimParams::default()
    };
    ssim_value(&xg.map(f64_of), &x.map(f64_of), &params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: String,
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricRow {
    pub fn compute<T: Float>(image_id: impl Into<String>, xg: &Image<T>, x: &Image<T>, peak: f64) -> Result<Self> {
        Ok(Self {
            image_id: image_id.into(),
            nmse: nmse(xg, x)?,
            psnr: psnr(xg, x, peak)?,
            ssim: ssim_metric(xg, x, peak)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population (divide by N) standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Per-image rows sorted by id plus mean / std aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub std_convention: String,
    pub count: usize,
    pub nmse: Summary,
    pub psnr: Summary,
    pub ssim: Summary,
    #[serde(skip)]
    pub rows: Vec<MetricRow>,
}

/// Sorts rows by id and summarizes each metric.
pub fn aggregate(mut rows: Vec<MetricRow>) -> MetricReport {
    rows.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let col = |f: fn(&MetricRow) -> f64| Summary::of(&rows.iter().map(f).collect::<Vec<_>>());
    MetricReport {
        std_convention: "population".into(),
        count: rows.len(),
        nmse: col(|r| r.nmse),
        psnr: col(|r| r.psnr),
        ssim: col(|r| r.ssim),
        rows,
    }
}

impl MetricReport {
    /// `image_id,nmse,psnr,ssim` rows in id order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,nmse,psnr,ssim\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.image_id, r.nmse, r.psnr, r.ssim));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, csv: &Path, json: &Path) -> Result<()> {
        std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        std::fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))
    }
}
