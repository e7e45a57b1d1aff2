//! Flicker synthesis on clean images and burst generation.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FlickerSpec, WaveformMode};
use crate::raster::{ImageBuffer, CHANNELS};
use crate::seed::RngSeed;
use crate::warp::{shake_warp, ShakeParams};
use crate::waveform::gain_profile;

/// Multiplies every row of `clean` by its flicker gain. Output is unclamped.
pub fn apply_flicker(clean: &ImageBuffer, spec: &FlickerSpec) -> Result<ImageBuffer> {
    clean.ensure_pipeline_dims()?;
    let gains = gain_profile(spec, clean.height())?;
    clean.map_samples(|y, c, v| v * gains.get(y, c))
}

/// Symmetric shake magnitudes; each frame after the first draws uniformly
/// from `[-rotation_deg, rotation_deg]` and `[-translation_px, translation_px]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShakeRange {
    pub rotation_deg: f64,
    pub translation_px: f64,
}

impl Default for ShakeRange {
    fn default() -> Self {
        ShakeRange {
            rotation_deg: 3.0,
            translation_px: 5.0,
        }
    }
}

impl ShakeRange {
    pub const NONE: ShakeRange = ShakeRange {
        rotation_deg: 0.0,
        translation_px: 0.0,
    };
}

/// Recipe for an N-frame burst sharing one flicker pattern and differing in AC phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstSpec {
    pub frame_count: usize,
    /// Waveform, frequencies and k shared by every frame; its phase is ignored.
    pub base: FlickerSpec,
    /// Per-frame AC phases; sampled uniformly on [0, 2π) from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    pub shake: ShakeRange,
    pub seed: RngSeed,
}

impl BurstSpec {
    pub fn new(frame_count: usize, base: FlickerSpec, seed: RngSeed) -> Self {
        BurstSpec {
            frame_count,
            base,
            phases: None,
            shake: ShakeRange::default(),
            seed,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::invalid("burst needs at least one frame"));
        }
        self.base.validate()?;
        if let Some(phases) = &self.phases {
            if phases.len() != self.frame_count {
                return Err(Error::invalid(format!(
                    "{} explicit phases for {} frames",
                    phases.len(),
                    self.frame_count
                )));
            }
            if phases.iter().any(|p| !p.is_finite()) {
                return Err(Error::invalid("phases must be finite"));
            }
        }
        let ShakeRange {
            rotation_deg,
            translation_px,
        } = self.shake;
        if !(0.0..=45.0).contains(&rotation_deg) {
            return Err(Error::invalid(format!("rotation range {rotation_deg} outside [0, 45] degrees")));
        }
        let max_shift = height.min(width) as f64 / 4.0;
        if !(0.0..=max_shift).contains(&translation_px) {
            return Err(Error::invalid(format!(
                "translation range {translation_px} outside [0, {max_shift}] pixels"
            )));
        }
        Ok(())
    }
}

/// Generated burst with every sampled parameter.
#[derive(Clone, Debug)]
pub struct Burst {
    pub frames: Vec<ImageBuffer>,
    pub specs: Vec<FlickerSpec>,
    pub shakes: Vec<ShakeParams>,
}

/// Generates `burst.frame_count` frames from one clean image.
///
/// Each frame is warped first and flickered second, since the bands are tied to
/// sensor rows rather than to the scene. Frame 0 is never warped. Frame `i`
/// draws from stream `i` of the seed, so the result is independent of scheduling.
pub fn synth_burst(clean: &ImageBuffer, burst: &BurstSpec) -> Result<Burst> {
    clean.ensure_pipeline_dims()?;
    burst.validate(clean.height(), clean.width())?;
    let frames: Vec<(ImageBuffer, FlickerSpec, ShakeParams)> = (0..burst.frame_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = burst.seed.stream(i as u64);
            let phase = match &burst.phases {
                Some(p) => p[i],
                None => rng.random_range(0.0..TAU),
            };
            let shake = if i == 0 {
                ShakeParams::default()
            } else {
                ShakeParams {
                    rotation_deg: symmetric(&mut rng, burst.shake.rotation_deg),
                    dx: symmetric(&mut rng, burst.shake.translation_px),
                    dy: symmetric(&mut rng, burst.shake.translation_px),
                }
            };
            let spec = burst.base.with_phase(phase);
            let warped = shake_warp(clean, shake.rotation_deg, (shake.dx, shake.dy))?;
            Ok((apply_flicker(&warped, &spec)?, spec, shake))
        })
        .collect::<Result<_>>()?;
    let mut out = Burst {
        frames: Vec::with_capacity(frames.len()),
        specs: Vec::with_capacity(frames.len()),
        shakes: Vec::with_capacity(frames.len()),
    };
    for (f, s, k) in frames {
        out.frames.push(f);
        out.specs.push(s);
        out.shakes.push(k);
    }
    Ok(out)
}

fn symmetric(rng: &mut impl Rng, range: f64) -> f64 {
    if range > 0.0 {
        rng.random_range(-range..=range)
    } else {
        0.0
    }
}

/// Frame strides used when drawing training triplets.
pub const TRIPLET_STRIDES: [usize; 3] = [1, 2, 3];

/// Picks three equally spaced frames `{i, i+s, i+2s}` with `s ∈ {1,2,3}`.
///
/// The stride is uniform over the strides that fit, then the start offset is
/// uniform over the positions that fit.
pub fn sample_training_triplet(frame_count: usize, seed: RngSeed) -> Result<[usize; 3]> {
    let feasible: Vec<usize> = TRIPLET_STRIDES
        .iter()
        .copied()
        .filter(|s| 1 + 2 * s <= frame_count)
        .collect();
    if feasible.is_empty() {
        return Err(Error::BurstTooShort {
            len: frame_count,
            min: 3,
        });
    }
    let mut rng = seed.rng();
    let stride = feasible[rng.random_range(0..feasible.len())];
    let start = rng.random_range(0..frame_count - 2 * stride);
    Ok([start, start + stride, start + 2 * stride])
}

/// Distribution used to draw flicker parameters for generated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlickerSampling {
    pub f_enf_choices: Vec<f64>,
    /// Row-scan frequency range at `reference_rows` rows.
    pub f_row_range: (f64, f64),
    pub reference_rows: usize,
    /// Scale the sampled f_row by `rows / reference_rows`.
    pub scale_f_row: bool,
    pub k_range: (f64, f64),
    /// Multiplicative per-channel jitter on the base k.
    pub k_jitter: (f64, f64),
    pub duty_range: (f64, f64),
}

impl Default for FlickerSampling {
    fn default() -> Self {
        FlickerSampling {
            f_enf_choices: vec![50.0, 60.0],
            f_row_range: (100e3, 160e3),
            reference_rows: 512,
            scale_f_row: true,
            k_range: (0.0, 1.0),
            k_jitter: (0.8, 1.25),
            duty_range: (0.1, 0.9),
        }
    }
}

impl FlickerSampling {
    /// Draws a spec for an image with `rows` rows; the mode is uniform over
    /// full-wave, half-wave and PWM, the phase is uniform on [0, 2π).
    pub fn sample(&self, rng: &mut impl Rng, rows: usize) -> Result<FlickerSpec> {
        if self.f_enf_choices.is_empty() {
            return Err(Error::invalid("no grid frequencies to sample from"));
        }
        let mode = match rng.random_range(0..3) {
            0 => WaveformMode::FullWave,
            1 => WaveformMode::HalfWave,
            _ => WaveformMode::Pwm {
                duty: uniform(rng, self.duty_range),
            },
        };
        let f_enf = self.f_enf_choices[rng.random_range(0..self.f_enf_choices.len())];
        let mut f_row = uniform(rng, self.f_row_range);
        if self.scale_f_row {
            f_row *= rows as f64 / self.reference_rows as f64;
        }
        let base_k = uniform(rng, self.k_range);
        let mut k = [0.0; CHANNELS];
        for kc in &mut k {
            *kc = base_k * uniform(rng, self.k_jitter);
        }
        let phase = rng.random_range(0.0..TAU);
        FlickerSpec::new(mode, f_enf, f_row, phase, k)
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}
