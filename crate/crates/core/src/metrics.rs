//! Per-frame image-quality metrics and their CSV exports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Peak-to-peak range of `[-1, 1]` frames.
pub const PEAK: f64 = 2.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b, "mse")?;
    if a.is_empty() {
        return Err(Error::shape("mse", "empty input"));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

pub fn rmse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

/// `10·log10(peak²/mse)`; `+∞` when `mse == 0`.
pub fn psnr(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = g.iter().zip(&x[y * w + xo..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = g.iter().enumerate().map(|(i, a)| a * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Single-scale SSIM of two `[H,W]` frames in `[-1, 1]`: 11×11 Gaussian
/// window (σ = 1.5), averaged over valid window positions.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b, "ssim")?;
    if a.rank() != 2 {
        return Err(Error::shape("ssim", format!("expected [H,W], got {:?}", a.shape())));
    }
    let (h, w) = a.hw();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape("ssim", format!("{h}x{w} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let x: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = b.data().iter().map(|v| v.as_f64()).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &g);
    let my = filter_valid(&y, h, w, &g);
    let sxx = filter_valid(&prod(&x, &x), h, w, &g);
    let syy = filter_valid(&prod(&y, &y), h, w, &g);
    let sxy = filter_valid(&prod(&x, &y), h, w, &g);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Quality of one predicted frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub clip: String,
    /// Index of the predicted frame within its clip.
    pub frame: usize,
    pub mse: f64,
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricRecord {
    /// Scores `pred` against `target` (both `[H,W]`, already trimmed).
    pub fn score<T: Real>(clip: &str, frame: usize, pred: &Tensor<T>, target: &Tensor<T>) -> Result<Self> {
        let m = mse(pred, target)?;
        Ok(Self {
            clip: clip.to_string(),
            frame,
            mse: m,
            rmse: m.sqrt(),
            psnr: psnr(m, PEAK),
            ssim: ssim(pred, target)?,
        })
    }
}

/// Means over a set of records. `psnr` averages finite values only and
/// `psnr_infinite` counts the exact predictions left out.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub mse: f64,
    pub rmse: f64,
    pub psnr: f64,
    pub psnr_infinite: usize,
    pub ssim: f64,
}

pub fn aggregate(records: &[MetricRecord]) -> Aggregate {
    let n = records.len().max(1) as f64;
    let finite: Vec<f64> = records.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
    Aggregate {
        count: records.len(),
        mse: records.iter().map(|r| r.mse).sum::<f64>() / n,
        rmse: records.iter().map(|r| r.rmse).sum::<f64>() / n,
        psnr: if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
        psnr_infinite: records.len() - finite.len(),
        ssim: records.iter().map(|r| r.ssim).sum::<f64>() / n,
    }
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.9e}")
    }
}

pub const RECORDS_HEADER: &str = "clip,frame,mse,rmse,psnr,ssim";

pub fn records_csv(records: &[MetricRecord]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.clip, r.frame, num(r.mse), num(r.rmse), num(r.psnr), num(r.ssim));
    }
    s
}

/// One row per model: `model,frames,mse,rmse,psnr,ssim`.
pub fn aggregate_table(rows: &[(String, Aggregate)]) -> String {
    let mut s = String::from("model,frames,mse,rmse,psnr,ssim\n");
    for (name, a) in rows {
        let _ = writeln!(s, "{name},{},{},{},{},{}", a.count, num(a.mse), num(a.rmse), num(a.psnr), num(a.ssim));
    }
    s
}

/// Paired per-frame comparison of two methods: `(rmse_a, rmse_b − rmse_a)`
/// per frame, then a `mean` row with the mean RMSE of A and the difference
/// of the means. Records must describe the same frames in the same order.
pub fn scatter_export(a: &[MetricRecord], b: &[MetricRecord]) -> Result<String> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("scatter: {} records vs {}", a.len(), b.len())));
    }
    let mut s = String::from("clip,frame,rmse_a,rmse_diff\n");
    for (ra, rb) in a.iter().zip(b) {
        if ra.clip != rb.clip || ra.frame != rb.frame {
            return Err(Error::invalid(format!(
                "scatter: record ({}, {}) paired with ({}, {})",
                ra.clip, ra.frame, rb.clip, rb.frame
            )));
        }
        let _ = writeln!(s, "{},{},{},{}", ra.clip, ra.frame, num(ra.rmse), num(rb.rmse - ra.rmse));
    }
    let (ma, mb) = (aggregate(a).rmse, aggregate(b).rmse);
    let _ = writeln!(s, "mean,,{},{}", num(ma), num(mb - ma));
    Ok(s)
}
