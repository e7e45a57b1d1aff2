//! Model-based flicker removal: per-frame gain inversion and burst fusion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{estimate_burst, EstimatedFlicker};
use crate::model::FlickerSpec;
use crate::raster::{ImageBuffer, CHANNELS};
use crate::waveform::{gain_profile, GainProfile};

/// How inverted frames are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weight each inverted sample by its gain: the sum of observations over the sum of gains.
    #[default]
    GainProportional,
    Uniform,
    /// Weight by squared gain; the least-squares estimate when all frames share one noise level.
    InverseVariance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Rows whose gain falls below this are not inverted.
    pub gain_floor: f64,
    /// Samples at or above this value are treated as saturated.
    pub clip_ceiling: f64,
    pub weighting: Weighting,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            gain_floor: 0.05,
            clip_ceiling: 0.995,
            weighting: Weighting::GainProportional,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_floor > 0.0 && self.gain_floor < 1.0) {
            return Err(Error::invalid(format!("gain_floor {} outside (0, 1)", self.gain_floor)));
        }
        if !(self.clip_ceiling > 0.0 && self.clip_ceiling <= 1.0) {
            return Err(Error::invalid(format!("clip_ceiling {} outside (0, 1]", self.clip_ceiling)));
        }
        Ok(())
    }

    #[inline]
    fn usable(&self, value: f64, gain: f64) -> bool {
        gain >= self.gain_floor && value < self.clip_ceiling
    }
}

/// Per-sample validity, channel-interleaved like [`ImageBuffer`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl ValidityMask {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_valid(&self, y: usize, x: usize, c: usize) -> bool {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    /// True when every channel of the pixel is valid.
    pub fn pixel_valid(&self, y: usize, x: usize) -> bool {
        (0..CHANNELS).all(|c| self.is_valid(y, x, c))
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn valid_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v).count() as f64 / self.data.len().max(1) as f64
    }

    pub fn all_valid(&self) -> bool {
        self.data.iter().all(|&v| v)
    }
}

fn check_profile(frame: &ImageBuffer, gains: &GainProfile) -> Result<()> {
    if gains.rows() != frame.height() {
        return Err(Error::DimensionMismatch(format!(
            "gain profile has {} rows, frame has {}",
            gains.rows(),
            frame.height()
        )));
    }
    Ok(())
}

/// Divides each row by its gain. Samples whose gain is below the floor or
/// whose value is saturated keep their raw value and are marked invalid.
pub fn deflicker_single(frame: &ImageBuffer, gains: &GainProfile, cfg: &FusionConfig) -> Result<(ImageBuffer, ValidityMask)> {
    cfg.validate()?;
    check_profile(frame, gains)?;
    let (h, w) = frame.dims();
    let mut out = frame.data().to_vec();
    let mut mask = vec![false; out.len()];
    out.par_chunks_mut(w * CHANNELS)
        .zip(mask.par_chunks_mut(w * CHANNELS))
        .enumerate()
        .for_each(|(y, (row, valid))| {
            let g = gains.row(y);
            for (i, (v, ok)) in row.iter_mut().zip(valid.iter_mut()).enumerate() {
                let c = i % CHANNELS;
                if cfg.usable(*v, g[c]) {
                    *v /= g[c];
                    *ok = true;
                }
            }
        });
    Ok((
        ImageBuffer::from_vec(h, w, out)?,
        ValidityMask {
            height: h,
            width: w,
            data: mask,
        },
    ))
}

/// [`deflicker_single`] with gains computed from a spec.
pub fn deflicker_with_spec(frame: &ImageBuffer, spec: &FlickerSpec, cfg: &FusionConfig) -> Result<(ImageBuffer, ValidityMask)> {
    let gains = gain_profile(spec, frame.height())?;
    deflicker_single(frame, &gains, cfg)
}

/// Where burst gains come from.
#[derive(Clone, Debug)]
pub enum GainSource<'a> {
    /// One spec per frame.
    Specs(&'a [FlickerSpec]),
    /// One profile per frame.
    Profiles(&'a [GainProfile]),
    /// Fit the burst blindly; `nu` fixes the intensity frequency when known.
    Estimate { nu: Option<f64> },
}

/// Fused image and how it was obtained.
#[derive(Clone, Debug)]
pub struct BurstRestoration {
    pub image: ImageBuffer,
    /// Pixels with at least one channel filled from the raw median.
    pub fallback_fraction: f64,
    /// Valid frames contributing to each sample.
    pub coverage: Vec<u16>,
    /// Valid fraction of every frame.
    pub frame_valid_fraction: Vec<f64>,
    /// Present when the gains were estimated.
    pub estimate: Option<EstimatedFlicker>,
}

impl BurstRestoration {
    pub fn report(&self) -> BurstReport {
        BurstReport {
            frames: self.frame_valid_fraction.len(),
            fallback_fraction: self.fallback_fraction,
            frame_valid_fraction: self.frame_valid_fraction.clone(),
            estimate: self.estimate.clone(),
        }
    }
}

/// Serializable summary of a burst restoration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstReport {
    pub frames: usize,
    pub fallback_fraction: f64,
    pub frame_valid_fraction: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimatedFlicker>,
}

/// Inverts every frame and fuses the valid samples. Samples no frame covers
/// take the per-sample median of the raw frames.
pub fn deflicker_burst(frames: &[ImageBuffer], source: GainSource<'_>, cfg: &FusionConfig) -> Result<BurstRestoration> {
    cfg.validate()?;
    let first = frames.first().ok_or(Error::NotEnoughFrames { needed: 1, got: 0 })?;
    for f in frames {
        if !f.same_dims(first) {
            return Err(Error::DimensionMismatch("burst frames differ in size".into()));
        }
    }
    let (h, w) = first.dims();
    let count_mismatch = |n: usize| Error::invalid(format!("{n} gain sources for {} frames", frames.len()));
    let (profiles, estimate) = match source {
        GainSource::Specs(specs) => {
            if specs.len() != frames.len() {
                return Err(count_mismatch(specs.len()));
            }
            let p = specs.iter().map(|s| gain_profile(s, h)).collect::<Result<Vec<_>>>()?;
            (p, None)
        }
        GainSource::Profiles(p) => {
            if p.len() != frames.len() {
                return Err(count_mismatch(p.len()));
            }
            (p.to_vec(), None)
        }
        GainSource::Estimate { nu } => {
            let est = estimate_burst(frames, nu)?;
            let p = (0..frames.len()).map(|i| est.gain_profile(i, h)).collect::<Result<Vec<_>>>()?;
            (p, Some(est))
        }
    };
    for p in &profiles {
        check_profile(first, p)?;
    }
    let row_len = w * CHANNELS;
    let mut out = vec![0.0; h * row_len];
    let mut coverage = vec![0u16; h * row_len];
    let mut valid_counts = vec![0usize; frames.len()];
    let fallback_pixels: usize = out
        .par_chunks_mut(row_len)
        .zip(coverage.par_chunks_mut(row_len))
        .enumerate()
        .map(|(y, (row, cov))| {
            let mut fallback = vec![false; w];
            let mut raw = Vec::with_capacity(frames.len());
            for (i, (v, n)) in row.iter_mut().zip(cov.iter_mut()).enumerate() {
                let c = i % CHANNELS;
                let (mut num, mut den, mut count) = (0.0, 0.0, 0u16);
                for (f, p) in frames.iter().zip(&profiles) {
                    let x = f.data()[y * row_len + i];
                    let g = p.get(y, c);
                    if cfg.usable(x, g) {
                        match cfg.weighting {
                            Weighting::GainProportional => {
                                num += x;
                                den += g;
                            }
                            Weighting::Uniform => {
                                num += x / g;
                                den += 1.0;
                            }
                            Weighting::InverseVariance => {
                                num += x * g;
                                den += g * g;
                            }
                        }
                        count += 1;
                    }
                }
                *n = count;
                if count > 0 {
                    *v = num / den;
                } else {
                    raw.clear();
                    raw.extend(frames.iter().map(|f| f.data()[y * row_len + i]));
                    *v = median(&mut raw);
                    fallback[i / CHANNELS] = true;
                }
            }
            fallback.iter().filter(|&&b| b).count()
        })
        .sum();
    for ((f, p), n) in frames.iter().zip(&profiles).zip(valid_counts.iter_mut()) {
        *n = f
            .data()
            .iter()
            .enumerate()
            .filter(|&(i, &x)| cfg.usable(x, p.get(i / row_len, i % CHANNELS)))
            .count();
    }
    let total = (h * row_len) as f64;
    Ok(BurstRestoration {
        image: ImageBuffer::from_vec(h, w, out)?,
        fallback_fraction: fallback_pixels as f64 / (h * w) as f64,
        coverage,
        frame_valid_fraction: valid_counts.iter().map(|&n| n as f64 / total).collect(),
        estimate,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
