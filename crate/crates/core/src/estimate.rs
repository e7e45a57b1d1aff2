//! Blind flicker estimation from bursts.
//!
//! Within one burst only the AC phase changes between frames, so the
//! per-channel row profiles of two frames share the unknown scene factor and
//! their log-ratio depends on the gain model alone:
//!
//! ```text
//! ln p_i(y) - ln p_j(y) = ln g(θ_i(y)) - ln g(θ_j(y))
//! ```
//!
//! Frequency comes from the spectrum of those log-ratios, refined by a
//! harmonic least-squares fit; waveform, phases and modulation depth come from
//! a coarse phase grid per candidate mode followed by golden-section
//! coordinate descent.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_phase, FlickerSpec, WaveformMode};
use crate::raster::{ImageBuffer, CHANNELS};
use crate::waveform::{effective_value, gain_at, waveform_value, GainProfile};

/// Floor added inside logarithms so dark rows stay finite.
pub const LOG_EPS: f64 = 1e-6;
/// A frame pair whose log-ratio varies less than this carries no flicker.
pub const MIN_RATIO_SPREAD: f64 = 1e-4;
/// Shortest profile accepted for frequency estimation.
pub const MIN_ROWS: usize = 64;
/// Rows darker than this fraction of the channel median are left out of fits.
const DARK_ROW_FRACTION: f64 = 1e-3;

/// Per-row means of an image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowProfile {
    /// Mean over columns of the channel mean.
    pub luminance: Vec<f64>,
    pub per_channel: Vec<[f64; 3]>,
}

impl RowProfile {
    pub fn rows(&self) -> usize {
        self.luminance.len()
    }
}

pub fn row_profile(img: &ImageBuffer) -> RowProfile {
    let w = img.width() as f64;
    let per_channel: Vec<[f64; 3]> = img
        .rows()
        .map(|row| {
            let mut acc = [0.0; 3];
            for px in row.chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    acc[c] += px[c];
                }
            }
            acc.map(|s| s / w)
        })
        .collect();
    let luminance = per_channel.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
    RowProfile {
        luminance,
        per_channel,
    }
}

/// Pairwise per-channel log-ratio signals over the rows usable for fitting.
struct RatioSignals {
    rows: usize,
    /// Row indices kept (no frame is dark there).
    valid: Vec<usize>,
    /// `(i, j, channel, values over valid rows)`.
    signals: Vec<(usize, usize, usize, Vec<f64>)>,
}

impl RatioSignals {
    fn build(profiles: &[RowProfile]) -> Result<Self> {
        if profiles.len() < 2 {
            return Err(Error::NotEnoughFrames {
                needed: 2,
                got: profiles.len(),
            });
        }
        let rows = profiles[0].rows();
        if profiles.iter().any(|p| p.rows() != rows) {
            return Err(Error::DimensionMismatch("profiles have different row counts".into()));
        }
        if profiles
            .iter()
            .flat_map(|p| p.per_channel.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("row profiles contain non-finite values"));
        }
        let mut floors = [0.0; CHANNELS];
        for (c, floor) in floors.iter_mut().enumerate() {
            let mut all: Vec<f64> = profiles
                .iter()
                .flat_map(|p| p.per_channel.iter().map(move |v| v[c]))
                .collect();
            all.sort_by(f64::total_cmp);
            *floor = DARK_ROW_FRACTION * all[all.len() / 2].max(0.0);
        }
        let valid: Vec<usize> = (0..rows)
            .filter(|&y| {
                profiles
                    .iter()
                    .all(|p| (0..CHANNELS).all(|c| p.per_channel[y][c] > floors[c]))
            })
            .collect();
        let logs: Vec<Vec<[f64; 3]>> = profiles
            .iter()
            .map(|p| {
                valid
                    .iter()
                    .map(|&y| p.per_channel[y].map(|v| (v.max(0.0) + LOG_EPS).ln()))
                    .collect()
            })
            .collect();
        let mut signals = Vec::new();
        let mut max_spread: f64 = 0.0;
        for i in 0..profiles.len() {
            for j in i + 1..profiles.len() {
                for c in 0..CHANNELS {
                    let s: Vec<f64> = logs[i].iter().zip(&logs[j]).map(|(a, b)| a[c] - b[c]).collect();
                    let (lo, hi) = s
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                    if hi >= lo {
                        max_spread = max_spread.max(hi - lo);
                    }
                    signals.push((i, j, c, s));
                }
            }
        }
        if valid.len() < 2 || max_spread < MIN_RATIO_SPREAD {
            return Err(Error::NoFlicker {
                threshold: MIN_RATIO_SPREAD,
            });
        }
        Ok(RatioSignals {
            rows,
            valid,
            signals,
        })
    }

    fn centre(&self) -> f64 {
        (self.rows as f64 - 1.0) * 0.5
    }
}


/// Estimates the intensity-pattern frequency in cycles per row.
///
/// For full-wave sources the intensity repeats twice per AC cycle, so
/// `f_enf / f_row = nu / 2`; for half-wave and PWM `f_enf / f_row = nu`.
pub fn estimate_frequency(profiles: &[RowProfile]) -> Result<f64> {
    let rows = profiles.first().map_or(0, RowProfile::rows);
    if profiles.len() >= 2 && rows < MIN_ROWS {
        return Err(Error::invalid(format!(
            "frequency estimation needs at least {MIN_ROWS} rows, got {rows}"
        )));
    }
    let sig = RatioSignals::build(profiles)?;
    let coarse = spectral_peak(&sig);
    Ok(refine_harmonic(&sig, coarse))
}

/// Hann-windowed, zero-padded power spectrum summed over every ratio signal;
/// returns the parabolically interpolated peak in cycles per row.
fn spectral_peak(sig: &RatioSignals) -> f64 {
    let n = sig.rows;
    let size = (16 * n).max(4096).next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(size);
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (TAU * i as f64 / (n - 1) as f64).cos())
        .collect();
    let mut power = vec![0.0; size / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); size];
    for (_, _, _, s) in &sig.signals {
        // scatter back onto the full row grid; dark rows contribute zero
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        for (&y, &v) in sig.valid.iter().zip(s) {
            buf[y] = Complex::new((v - mean) * window[y], 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
    }
    let mag: Vec<f64> = power.iter().map(|p| p.sqrt()).collect();
    let k = (1..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap_or(1);
    let offset = if k + 1 < mag.len() {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let den = a - 2.0 * b + c;
        if den.abs() > 0.0 {
            (0.5 * (a - c) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    (k as f64 + offset) / size as f64
}

/// Harmonics used when refining the frequency.
const FIT_HARMONICS: usize = 8;
/// Fewest bins kept when averaging rows for the harmonic fit.
const MIN_BINS: usize = 256;

/// Ratio signals averaged over bins of consecutive rows.
///
/// A symmetric box average scales each sinusoid without shifting it, so a
/// harmonic fit with free amplitudes is unaffected as long as the fitted
/// harmonics stay well below the bin rate.
struct Binned {
    /// Bin centres relative to the centre row.
    t: Vec<f64>,
    signals: Vec<Vec<f64>>,
}

impl Binned {
    fn new(sig: &RatioSignals, size: usize) -> Self {
        let yc = sig.centre();
        let size = size.max(1);
        let mut groups: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        while start < sig.valid.len() {
            let bin = sig.valid[start] / size;
            let mut end = start;
            while end < sig.valid.len() && sig.valid[end] / size == bin {
                end += 1;
            }
            groups.push((start, end));
            start = end;
        }
        let t = groups
            .iter()
            .map(|&(a, b)| sig.valid[a..b].iter().map(|&y| y as f64 - yc).sum::<f64>() / (b - a) as f64)
            .collect();
        let signals = sig
            .signals
            .iter()
            .map(|(_, _, _, s)| {
                groups
                    .iter()
                    .map(|&(a, b)| s[a..b].iter().sum::<f64>() / (b - a) as f64)
                    .collect()
            })
            .collect();
        Binned { t, signals }
    }
}

/// Residual energy of the best fit of every ratio signal by a constant plus
/// `FIT_HARMONICS` harmonics of `nu`.
fn harmonic_residual(data: &Binned, rows: usize, nu: f64) -> f64 {
    let n = rows as f64;
    // skip harmonics that alias onto DC, Nyquist or an earlier harmonic
    let guard = 0.25 / n;
    let mut folded: Vec<f64> = Vec::new();
    let mut harmonics = Vec::new();
    for h in 1..=FIT_HARMONICS {
        let f = (h as f64 * nu).rem_euclid(1.0);
        let f = if f > 0.5 { 1.0 - f } else { f };
        if f < guard || 0.5 - f < guard || folded.iter().any(|g| (g - f).abs() < guard) {
            continue;
        }
        folded.push(f);
        harmonics.push(h as f64);
    }
    let m = 1 + 2 * harmonics.len();
    let mut basis = DMatrix::<f64>::zeros(data.t.len(), m);
    for (r, &t) in data.t.iter().enumerate() {
        basis[(r, 0)] = 1.0;
        for (q, &h) in harmonics.iter().enumerate() {
            let (s, c) = (TAU * h * nu * t).sin_cos();
            basis[(r, 1 + 2 * q)] = c;
            basis[(r, 2 + 2 * q)] = s;
        }
    }
    let mut gram = basis.tr_mul(&basis);
    let ridge = 1e-10 * data.t.len() as f64;
    for d in 0..m {
        gram[(d, d)] += ridge;
    }
    let Some(chol) = gram.cholesky() else {
        return f64::INFINITY;
    };
    let mut total = 0.0;
    for s in &data.signals {
        let v = DVector::from_column_slice(s);
        let rhs = basis.tr_mul(&v);
        let coef = chol.solve(&rhs);
        total += (v.norm_squared() - rhs.dot(&coef)).max(0.0);
    }
    total
}

/// Share of the ratio-signal energy within which sub-harmonic fits count as ties.
const TIE_ENERGY_FRACTION: f64 = 5e-3;

/// Searches the sub-harmonics of the spectral peak and returns the highest
/// frequency whose harmonic fit is as good as the best one.
fn refine_harmonic(sig: &RatioSignals, coarse: f64) -> f64 {
    let n = sig.rows as f64;
    let lowest = 0.5 / n;
    // bins small enough that the top fitted harmonic stays below a quarter cycle per bin
    let top = FIT_HARMONICS as f64 * coarse * 1.1;
    let size = ((0.25 / top).floor() as usize).clamp(1, (sig.rows / MIN_BINS).max(1));
    let data = Binned::new(sig, size);
    let energy: f64 = data.signals.iter().flatten().map(|v| v * v).sum();
    let step_min = 1.0 / (4.0 * n * FIT_HARMONICS as f64);
    let mut fits: Vec<(f64, f64)> = Vec::new();
    for h in 1..=FIT_HARMONICS {
        let centre = coarse / h as f64;
        let half = 1.5 / (n * h as f64) + 0.01 * centre;
        let lo = (centre - half).max(lowest * 0.9);
        let hi = (centre + half).min(0.499);
        if hi <= lo || centre < lowest * 0.5 {
            continue;
        }
        let steps = (((hi - lo) / step_min).ceil() as usize).clamp(8, 200);
        let dx = (hi - lo) / steps as f64;
        let (best_i, _) = (0..=steps)
            .map(|i| (i, harmonic_residual(&data, sig.rows, lo + dx * i as f64)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let guess = lo + dx * best_i as f64;
        let nu = golden_section(
            |v| harmonic_residual(&data, sig.rows, v),
            (guess - dx).max(lo),
            (guess + dx).min(hi),
            1e-4 / n,
        );
        fits.push((nu, harmonic_residual(&data, sig.rows, nu)));
    }
    let Some(best) = fits.iter().map(|f| f.1).min_by(f64::total_cmp) else {
        return coarse;
    };
    // Near Nyquist the harmonics fold onto each other and a truncated fit at
    // the true frequency can lose to a sub-harmonic by a sliver of the energy.
    let tolerance = best * 1.05 + TIE_ENERGY_FRACTION * energy;
    fits.iter()
        .filter(|f| f.1 <= tolerance)
        .map(|f| f.0)
        .fold(coarse.min(lowest), f64::max)
}

/// Minimizes a unimodal function on `[a, b]` to an interval narrower than `tol`.
pub(crate) fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a).abs() > tol && iterations < 200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

/// Fit quality of one candidate waveform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub mode: WaveformMode,
    pub residual: f64,
}

/// Recovered flicker parameters of a burst.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatedFlicker {
    /// Intensity-pattern frequency, cycles per row.
    pub nu: f64,
    pub mode: WaveformMode,
    /// Per-frame AC phase at row 0, reduced modulo the mode's intensity period.
    pub phases: Vec<f64>,
    /// Modulation depth 1/(k+1) per channel.
    pub beta: [f64; 3],
    /// Root-mean-square error of the fitted log-ratios.
    pub residual: f64,
    /// RMS error over the pairs that involve each frame.
    pub frame_residuals: Vec<f64>,
    /// Residual reached by every candidate waveform, in search order.
    pub candidates: Vec<CandidateFit>,
}

impl EstimatedFlicker {
    /// AC cycles per row, `f_enf / f_row`.
    pub fn ac_cycles_per_row(&self) -> f64 {
        self.nu / self.mode.cycles_per_ac_period()
    }

    /// Ambient ratio k = 1/β − 1 per channel.
    pub fn k(&self) -> [f64; 3] {
        self.beta.map(|b| 1.0 / b - 1.0)
    }

    /// Per-frame specs reproducing the fitted gains, expressed with grid frequency `f_enf`.
    pub fn to_specs(&self, f_enf: f64) -> Result<Vec<FlickerSpec>> {
        let f_row = f_enf / self.ac_cycles_per_row();
        self.phases
            .iter()
            .map(|&p| FlickerSpec::new(self.mode, f_enf, f_row, p, self.k()))
            .collect()
    }

    /// Gain profile of frame `frame` over `rows` rows.
    pub fn gain_profile(&self, frame: usize, rows: usize) -> Result<GainProfile> {
        let mean = effective_value(self.mode)?;
        let omega = TAU * self.ac_cycles_per_row();
        let phase = *self
            .phases
            .get(frame)
            .ok_or_else(|| Error::invalid(format!("no phase for frame {frame}")))?;
        let values = (0..rows)
            .map(|y| {
                let theta = omega * y as f64 + phase;
                self.beta.map(|b| gain_at(self.mode, mean, b, theta))
            })
            .collect();
        GainProfile::from_rows(values)
    }
}

/// Search order; ties resolve to the earliest entry.
pub fn candidate_modes() -> Vec<WaveformMode> {
    let mut modes = vec![WaveformMode::FullWave, WaveformMode::HalfWave];
    modes.extend((1..=9).map(|d| WaveformMode::Pwm { duty: d as f64 / 10.0 }));
    modes
}

const PHASE_GRID: usize = 64;
const COARSE_BETAS: [f64; 3] = [0.3, 0.6, 0.9];
const COARSE_MAX_ROWS: usize = 256;
/// Row budget while ranking candidate waveforms.
const RANK_MAX_ROWS: usize = 512;
const RANK_SWEEPS: usize = 25;
const MAX_SWEEPS: usize = 100;
const SWEEP_TOL: f64 = 1e-6;
/// A sweep that lowers the cost by less than this fraction ends the refinement.
const SWEEP_GAIN: f64 = 1e-9;

/// Fits waveform, per-frame phases and per-channel depth to a burst at
/// intensity frequency `nu`.
pub fn fit_flicker(frames: &[ImageBuffer], nu: f64) -> Result<EstimatedFlicker> {
    let profiles: Vec<RowProfile> = frames.iter().map(row_profile).collect();
    fit_profiles(&profiles, nu)
}

/// [`fit_flicker`] on precomputed row profiles.
pub fn fit_profiles(profiles: &[RowProfile], nu: f64) -> Result<EstimatedFlicker> {
    fit_with(profiles, nu, false)
}

fn fit_with(profiles: &[RowProfile], nu: f64, scan: bool) -> Result<EstimatedFlicker> {
    if !(nu.is_finite() && nu > 0.0 && nu < 0.5) {
        return Err(Error::invalid(format!("nu = {nu} outside (0, 0.5)")));
    }
    let sig = RatioSignals::build(profiles)?;
    let frames = profiles.len();
    let scan = scan && nu * (sig.rows as f64) < SCAN_MAX_CYCLES;
    let scan_level = scan.then(|| {
        let hi = nu * SCAN_RANGE.1;
        let per_period = (1.0 / hi / SCAN_SAMPLES_PER_PERIOD).floor().max(1.0) as usize;
        let rows = sig.valid.len().div_ceil(per_period).max(SCAN_MIN_ROWS);
        Level::new(&sig, rows)
    });
    let coarse_level = Level::new(&sig, COARSE_MAX_ROWS);
    let rank_level = Level::new(&sig, RANK_MAX_ROWS);
    let full = Level::new(&sig, usize::MAX);
    let ranked: Vec<Model> = candidate_modes()
        .par_iter()
        .map(|&mode| {
            let per_ac = TAU / mode.cycles_per_ac_period();
            let nu_start = match &scan_level {
                Some(level) => scan_frequency(level, frames, mode, nu),
                None => nu,
            };
            let omega = per_ac * nu_start;
            let (_, psi, beta) = coarse_level.grid_search(frames, mode, omega, PHASE_GRID, &COARSE_BETAS);
            let mut m = Model::new(&rank_level, frames, mode, omega, psi, [beta; 3]);
            m.refine(RANK_SWEEPS, false);
            m
        })
        .collect();
    let mut best = 0;
    for (i, m) in ranked.iter().enumerate() {
        if m.cost < ranked[best].cost {
            best = i;
        }
    }
    let r = &ranked[best];
    let mut winner = Model::new(&full, frames, r.mode, r.omega, r.psi.clone(), r.beta);
    winner.refine(MAX_SWEEPS, matches!(winner.mode, WaveformMode::Pwm { .. }));
    let candidates = ranked
        .iter()
        .enumerate()
        .map(|(i, m)| CandidateFit {
            mode: m.mode,
            residual: if i == best { winner.rms() } else { m.rms() },
        })
        .collect();
    Ok(winner.report(sig.centre(), candidates))
}

/// Above this many visible intensity cycles the spectral estimate is trusted.
const SCAN_MAX_CYCLES: f64 = 3.0;
/// Relative span searched around a spectral frequency estimate.
const SCAN_RANGE: (f64, f64) = (0.5, 2.0);
const SCAN_STEP: f64 = 1.05;
const SCAN_SAMPLES_PER_PERIOD: f64 = 16.0;
const SCAN_MIN_ROWS: usize = 64;
const SCAN_PHASES: usize = 32;
const SCAN_BETAS: [f64; 2] = [0.35, 0.75];

/// Best frequency for `mode` on a geometric grid around `nu`, scored by the
/// coarse phase grid. Spectral estimates are unreliable when only about one
/// period is visible; the waveform shape still pins the frequency.
fn scan_frequency(level: &Level, frames: usize, mode: WaveformMode, nu: f64) -> f64 {
    let per_ac = TAU / mode.cycles_per_ac_period();
    let mut best = (f64::INFINITY, nu);
    let mut f = nu * SCAN_RANGE.0;
    while f <= nu * SCAN_RANGE.1 * 1.000_001 {
        if f < 0.5 {
            let (cost, _, _) = level.grid_search(frames, mode, per_ac * f, SCAN_PHASES, &SCAN_BETAS);
            if cost < best.0 {
                best = (cost, f);
            }
        }
        f *= SCAN_STEP;
    }
    best.1
}

/// Estimates frequency (unless given) and fits the full model.
pub fn estimate_burst(frames: &[ImageBuffer], nu: Option<f64>) -> Result<EstimatedFlicker> {
    if frames.len() < 2 {
        return Err(Error::NotEnoughFrames {
            needed: 2,
            got: frames.len(),
        });
    }
    for f in frames {
        f.ensure_pipeline_dims()?;
        if !f.same_dims(&frames[0]) {
            return Err(Error::DimensionMismatch("burst frames differ in size".into()));
        }
    }
    let profiles: Vec<RowProfile> = frames.iter().map(row_profile).collect();
    let (nu, scan) = match nu {
        Some(nu) => (nu, false),
        None => (estimate_frequency(&profiles)?, true),
    };
    fit_with(&profiles, nu, scan)
}

struct Signal {
    i: usize,
    j: usize,
    c: usize,
    v: Vec<f64>,
}

/// Ratio signals restricted to an evenly strided subset of the usable rows.
struct Level {
    /// Row positions relative to the centre row.
    t: Vec<f64>,
    signals: Vec<Signal>,
}

impl Level {
    fn new(sig: &RatioSignals, max_rows: usize) -> Self {
        let yc = sig.centre();
        let stride = sig.valid.len().div_ceil(max_rows.max(1)).max(1);
        let keep: Vec<usize> = (0..sig.valid.len()).step_by(stride).collect();
        Level {
            t: keep.iter().map(|&r| sig.valid[r] as f64 - yc).collect(),
            signals: sig
                .signals
                .iter()
                .map(|(i, j, c, s)| Signal {
                    i: *i,
                    j: *j,
                    c: *c,
                    v: keep.iter().map(|&r| s[r]).collect(),
                })
                .collect(),
        }
    }

    fn rel_gains(&self, mode: WaveformMode, mean: f64, omega: f64, psi: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.t.iter().map(|&t| waveform_value(mode, omega * t + psi) / mean - 1.0));
    }

    /// Phase grid with a shared depth; frame 0 takes every grid phase and each
    /// other frame the best match against it. Returns `(cost, phases, depth)`.
    fn grid_search(
        &self,
        frames: usize,
        mode: WaveformMode,
        omega: f64,
        phases: usize,
        betas: &[f64],
    ) -> (f64, Vec<f64>, f64) {
        let mean = effective_value(mode).expect("candidate modes are valid");
        let period = mode.intensity_period();
        let grid: Vec<f64> = (0..phases).map(|a| period * a as f64 / phases as f64).collect();
        let mut rel = vec![Vec::new(); phases];
        for (col, &p) in rel.iter_mut().zip(&grid) {
            self.rel_gains(mode, mean, omega, p, col);
        }
        let pairs: Vec<(usize, Vec<&[f64]>)> = (1..frames)
            .map(|j| {
                let chans = self
                    .signals
                    .iter()
                    .filter(|s| s.i == 0 && s.j == j)
                    .map(|s| s.v.as_slice())
                    .collect();
                (j, chans)
            })
            .collect();
        let mut best = (f64::INFINITY, vec![0.0; frames], betas[0]);
        for &beta in betas {
            let table: Vec<Vec<f64>> = rel
                .iter()
                .map(|col| col.iter().map(|r| (1.0 + r * beta).max(LOG_EPS).ln()).collect())
                .collect();
            for a in 0..phases {
                let mut total = 0.0;
                let mut psi = vec![grid[a]; frames];
                for (j, chans) in &pairs {
                    let mut pick = (f64::INFINITY, 0);
                    for (b, lb) in table.iter().enumerate() {
                        let mut cost = 0.0;
                        for s in chans {
                            for ((v, la), lb) in s.iter().zip(&table[a]).zip(lb) {
                                let e = v - (la - lb);
                                cost += e * e;
                            }
                        }
                        if cost < pick.0 {
                            pick = (cost, b);
                        }
                    }
                    total += pick.0;
                    psi[*j] = grid[pick.1];
                }
                if total < best.0 {
                    best = (total, psi, beta);
                }
            }
        }
        best
    }
}

/// Model state on one level with cached per-frame gains and per-signal costs.
#[derive(Clone)]
struct Model<'a> {
    level: &'a Level,
    mode: WaveformMode,
    mean: f64,
    omega: f64,
    /// Phases at the centre row.
    psi: Vec<f64>,
    beta: [f64; 3],
    /// `w/w̄ - 1` per frame and row.
    rel: Vec<Vec<f64>>,
    /// Log-gains per frame, channel and row.
    logs: Vec<[Vec<f64>; 3]>,
    signal_cost: Vec<f64>,
    cost: f64,
}

fn log_gains(rel: &[f64], beta: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(rel.iter().map(|r| (1.0 + r * beta).max(LOG_EPS).ln()));
}

fn pair_cost(v: &[f64], a: &[f64], b: &[f64]) -> f64 {
    v.iter()
        .zip(a.iter().zip(b))
        .map(|(v, (a, b))| {
            let e = v - (a - b);
            e * e
        })
        .sum()
}

impl<'a> Model<'a> {
    fn new(level: &'a Level, frames: usize, mode: WaveformMode, omega: f64, psi: Vec<f64>, beta: [f64; 3]) -> Self {
        let mean = effective_value(mode).expect("candidate modes are valid");
        let mut m = Model {
            level,
            mode,
            mean,
            omega,
            psi,
            beta,
            rel: vec![Vec::new(); frames],
            logs: vec![Default::default(); frames],
            signal_cost: vec![0.0; level.signals.len()],
            cost: 0.0,
        };
        m.rebuild();
        m
    }

    fn rebuild(&mut self) {
        for f in 0..self.psi.len() {
            self.level.rel_gains(self.mode, self.mean, self.omega, self.psi[f], &mut self.rel[f]);
            for c in 0..CHANNELS {
                log_gains(&self.rel[f], self.beta[c], &mut self.logs[f][c]);
            }
        }
        for (k, s) in self.level.signals.iter().enumerate() {
            self.signal_cost[k] = pair_cost(&s.v, &self.logs[s.i][s.c], &self.logs[s.j][s.c]);
        }
        self.cost = self.signal_cost.iter().sum();
    }

    fn samples(&self) -> usize {
        self.level.signals.len() * self.level.t.len()
    }

    fn rms(&self) -> f64 {
        (self.cost / self.samples().max(1) as f64).sqrt()
    }

    /// Cost with frame `f` moved to phase `psi`; returns the new per-signal costs.
    fn phase_trial(&self, f: usize, psi: f64, rel: &mut Vec<f64>, logs: &mut [Vec<f64>; 3]) -> (f64, Vec<f64>) {
        self.level.rel_gains(self.mode, self.mean, self.omega, psi, rel);
        for c in 0..CHANNELS {
            log_gains(rel, self.beta[c], &mut logs[c]);
        }
        let mut costs = self.signal_cost.clone();
        for (k, s) in self.level.signals.iter().enumerate() {
            if s.i == f {
                costs[k] = pair_cost(&s.v, &logs[s.c], &self.logs[s.j][s.c]);
            } else if s.j == f {
                costs[k] = pair_cost(&s.v, &self.logs[s.i][s.c], &logs[s.c]);
            }
        }
        (costs.iter().sum(), costs)
    }

    fn step_phase(&mut self, f: usize) {
        let half = self.mode.intensity_period() / PHASE_GRID as f64;
        let centre = self.psi[f];
        let mut rel = Vec::new();
        let mut logs: [Vec<f64>; 3] = Default::default();
        let psi = golden_section(
            |p| self.phase_trial(f, p, &mut rel, &mut logs).0,
            centre - half,
            centre + half,
            SWEEP_TOL,
        );
        let (cost, costs) = self.phase_trial(f, psi, &mut rel, &mut logs);
        if cost <= self.cost {
            self.psi[f] = psi;
            self.rel[f] = rel;
            self.logs[f] = logs;
            self.signal_cost = costs;
            self.cost = cost;
        }
    }

    /// Cost with channel `c` at depth `beta`.
    fn beta_trial(&self, c: usize, beta: f64, logs: &mut [Vec<f64>]) -> (f64, Vec<f64>) {
        for (f, l) in logs.iter_mut().enumerate() {
            log_gains(&self.rel[f], beta, l);
        }
        let mut costs = self.signal_cost.clone();
        for (k, s) in self.level.signals.iter().enumerate() {
            if s.c == c {
                costs[k] = pair_cost(&s.v, &logs[s.i], &logs[s.j]);
            }
        }
        (costs.iter().sum(), costs)
    }

    fn step_beta(&mut self, c: usize) {
        let b0 = self.beta[c];
        let mut logs = vec![Vec::new(); self.psi.len()];
        let beta = golden_section(
            |b| self.beta_trial(c, b, &mut logs).0,
            (b0 - 0.25).max(1e-3),
            (b0 + 0.25).min(1.0),
            SWEEP_TOL,
        );
        let (cost, costs) = self.beta_trial(c, beta, &mut logs);
        if cost <= self.cost {
            self.beta[c] = beta;
            for (f, l) in logs.into_iter().enumerate() {
                self.logs[f][c] = l;
            }
            self.signal_cost = costs;
            self.cost = cost;
        }
    }

    /// Line search over a parameter that needs a full rebuild.
    fn step_global(&mut self, lo: f64, hi: f64, tol: f64, set: impl Fn(&mut Model<'a>, f64)) {
        let mut trial = self.clone();
        let x = golden_section(
            |x| {
                set(&mut trial, x);
                trial.rebuild();
                trial.cost
            },
            lo,
            hi,
            tol,
        );
        set(&mut trial, x);
        trial.rebuild();
        if trial.cost <= self.cost {
            *self = trial;
        }
    }

    /// Cyclic golden-section descent over phases, depths, frequency and
    /// optionally the PWM duty.
    fn refine(&mut self, max_sweeps: usize, refine_duty: bool) {
        for _ in 0..max_sweeps {
            let before = self.cost;
            for f in 0..self.psi.len() {
                self.step_phase(f);
            }
            for c in 0..CHANNELS {
                self.step_beta(c);
            }
            let w0 = self.omega;
            self.step_global(w0 * 0.98, (w0 * 1.02).min(PI), SWEEP_TOL * w0, |m, w| m.omega = w);
            if refine_duty {
                if let WaveformMode::Pwm { duty } = self.mode {
                    self.step_global((duty - 0.05).max(0.01), (duty + 0.05).min(1.0), SWEEP_TOL, |m, d| {
                        m.mode = WaveformMode::Pwm { duty: d };
                        m.mean = d;
                    });
                }
            }
            if before - self.cost <= SWEEP_GAIN * before || self.cost <= f64::MIN_POSITIVE {
                break;
            }
        }
    }

    fn report(&self, yc: f64, candidates: Vec<CandidateFit>) -> EstimatedFlicker {
        let period = self.mode.intensity_period();
        let phases = self.psi.iter().map(|p| wrap_phase(p - self.omega * yc, period)).collect();
        let mut per_frame = vec![(0.0, 0usize); self.psi.len()];
        for (s, e) in self.level.signals.iter().zip(&self.signal_cost) {
            for f in [s.i, s.j] {
                per_frame[f].0 += e;
                per_frame[f].1 += s.v.len();
            }
        }
        EstimatedFlicker {
            nu: self.omega * self.mode.cycles_per_ac_period() / TAU,
            mode: self.mode,
            phases,
            beta: self.beta,
            residual: self.rms(),
            frame_residuals: per_frame
                .into_iter()
                .map(|(e, n)| (e / n.max(1) as f64).sqrt())
                .collect(),
            candidates,
        }
    }
}

