//! Full-reference image quality: PSNR and windowed SSIM. LPIPS lives behind
//! the remote backend.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::ImageBuffer;

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("image shapes differ: {0}")]
    Shape(String),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    TooSmall { width: u32, height: u32, window: usize },
}

const MAX_VALUE: f64 = 255.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * MAX_VALUE) * (0.01 * MAX_VALUE);
const C2: f64 = (0.03 * MAX_VALUE) * (0.03 * MAX_VALUE);

fn check_shape(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), QualityError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(QualityError::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

/// PSNR in dB over all samples pooled across channels. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, QualityError> {
    check_shape(a, b)?;
    let sse: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as i64 - *y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.data().len() as f64;
    Ok(10.0 * (MAX_VALUE * MAX_VALUE / mse).log10())
}

/// Luma plane as f64; RGB uses BT.601 weights.
fn luma(img: &ImageBuffer) -> Vec<f64> {
    match img.channels() {
        1 => img.data().iter().map(|v| *v as f64).collect(),
        _ => img
            .data()
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect(),
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is (w-k+1) x (h-k+1).
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every fully-contained 11x11 Gaussian window (sigma 1.5,
/// K1 = 0.01, K2 = 0.03). Colour inputs are compared on luma.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, QualityError> {
    check_shape(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(QualityError::TooSmall { width: a.width(), height: a.height(), window: SSIM_WINDOW });
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let pa = luma(a);
    let pb = luma(b);
    let sq = |p: &[f64]| p.iter().map(|v| v * v).collect::<Vec<_>>();
    let prod: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&pa, w, h, &k);
    let mu_b = filter_valid(&pb, w, h, &k);
    let e_aa = filter_valid(&sq(&pa), w, h, &k);
    let e_bb = filter_valid(&sq(&pb), w, h, &k);
    let e_ab = filter_valid(&prod, w, h, &k);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (var_a + var_b + C2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    /// Infinite PSNR is written as the string `"inf"`.
    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageQualityReport {
    pub name: String,
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
}

impl ImageQualityReport {
    pub fn compute(name: impl Into<String>, a: &ImageBuffer, b: &ImageBuffer) -> Result<Self, QualityError> {
        Ok(Self { name: name.into(), psnr_db: psnr(a, b)?, ssim: ssim(a, b)?, lpips: None })
    }
}

/// Scene-level means. Infinite PSNRs are excluded from the PSNR mean (if all
/// are infinite, the mean is infinite).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub pairs: Vec<ImageQualityReport>,
    #[serde(with = "psnr_serde")]
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub mean_lpips: Option<f64>,
}

impl QualitySummary {
    pub fn from_pairs(pairs: Vec<ImageQualityReport>) -> Self {
        let finite: Vec<f64> = pairs.iter().map(|p| p.psnr_db).filter(|v| v.is_finite()).collect();
        let mean_psnr_db = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let n = pairs.len().max(1) as f64;
        let mean_ssim = pairs.iter().map(|p| p.ssim).sum::<f64>() / n;
        let lp: Vec<f64> = pairs.iter().filter_map(|p| p.lpips).collect();
        let mean_lpips = (!lp.is_empty() && lp.len() == pairs.len()).then(|| lp.iter().sum::<f64>() / lp.len() as f64);
        Self { pairs, mean_psnr_db, mean_ssim, mean_lpips }
    }

    /// `Scene | PSNR | SSIM | LPIPS` table.
    pub fn table(&self, scene: &str) -> String {
        let lp = self.mean_lpips.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        format!(
            "{:<16} {:>10} {:>8} {:>8}\n{:<16} {:>10.4} {:>8.4} {:>8}\n",
            "Scene", "PSNR(dB)", "SSIM", "LPIPS", scene, self.mean_psnr_db, self.mean_ssim, lp
        )
    }
}
