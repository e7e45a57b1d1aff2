//! Full-reference quality metrics: PSNR and single-scale SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ImageBuffer, CHANNELS};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB after clamping both images to `[0, peak]`.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    check_dims(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.clamp(0.0, peak) - y.clamp(0.0, peak);
            d * d
        })
        .sum();
    let mse = sse / a.data().len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Which planes SSIM is computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimMode {
    /// BT.601 luma of the clamped image.
    #[default]
    Luma,
    /// Mean of the per-channel scores.
    ChannelMean,
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over every fully-inside window.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim_with(a, b, SsimMode::Luma)
}

pub fn ssim_with(a: &ImageBuffer, b: &ImageBuffer, mode: SsimMode) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall {
            height: h,
            width: w,
            min: SSIM_WINDOW,
        });
    }
    match mode {
        SsimMode::Luma => Ok(ssim_plane(&luma(a), &luma(b), h, w)),
        SsimMode::ChannelMean => {
            let total: f64 = (0..CHANNELS)
                .map(|c| ssim_plane(&plane(a, c), &plane(b, c), h, w))
                .sum();
            Ok(total / CHANNELS as f64)
        }
    }
}

fn luma(img: &ImageBuffer) -> Vec<f64> {
    img.data()
        .chunks_exact(CHANNELS)
        .map(|px| {
            px.iter()
                .zip(LUMA_WEIGHTS)
                .map(|(v, wt)| v.clamp(0.0, 1.0) * wt)
                .sum()
        })
        .collect()
}

fn plane(img: &ImageBuffer, c: usize) -> Vec<f64> {
    img.data()
        .chunks_exact(CHANNELS)
        .map(|px| px[c].clamp(0.0, 1.0))
        .collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filtering of one plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * horiz[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let e_aa = filter_valid(&aa, h, w, &k);
    let e_bb = filter_valid(&bb, h, w, &k);
    let e_ab = filter_valid(&ab, h, w, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / n as f64
}

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Scores of one prediction against its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image scores and their means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub images: Vec<MetricReport>,
    /// Mean PSNR; infinite when any image is a perfect match.
    #[serde(with = "psnr_serde")]
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl MetricSummary {
    pub fn from_reports(images: Vec<MetricReport>) -> Self {
        let n = images.len().max(1) as f64;
        let mean_psnr_db = images.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let mean_ssim = images.iter().map(|r| r.ssim).sum::<f64>() / n;
        MetricSummary {
            images,
            mean_psnr_db,
            mean_ssim,
        }
    }
}

pub fn evaluate_pair(name: impl Into<String>, pred: &ImageBuffer, gt: &ImageBuffer, ssim_mode: SsimMode) -> Result<MetricReport> {
    Ok(MetricReport {
        name: name.into(),
        psnr_db: psnr(pred, gt, 1.0)?,
        ssim: ssim_with(pred, gt, ssim_mode)?,
    })
}

/// JSON has no infinity; a perfect PSNR is written as the string `"inf"`.
mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("bad PSNR value {t:?}"))),
        }
    }
}
