//! Flicker parameterization shared by synthesis, estimation and removal.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the AC sinusoid is rectified into light intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaveformMode {
    /// |cos θ|, e.g. fluorescent tubes.
    FullWave,
    /// max(0, cos θ), e.g. incandescent bulbs on a diode.
    HalfWave,
    /// On while cos θ > cos(πD), e.g. dimmed LEDs.
    Pwm { duty: f64 },
}

impl WaveformMode {
    pub fn validate(&self) -> Result<()> {
        if let WaveformMode::Pwm { duty } = *self {
            if !(duty > 0.0 && duty <= 1.0) {
                return Err(Error::invalid(format!("PWM duty {duty} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// Period of the light intensity in AC phase θ.
    pub fn intensity_period(&self) -> f64 {
        match self {
            WaveformMode::FullWave => PI,
            WaveformMode::HalfWave | WaveformMode::Pwm { .. } => TAU,
        }
    }

    /// Intensity cycles per AC cycle.
    pub fn cycles_per_ac_period(&self) -> f64 {
        TAU / self.intensity_period()
    }

    pub fn name(&self) -> &'static str {
        match self {
            WaveformMode::FullWave => "full",
            WaveformMode::HalfWave => "half",
            WaveformMode::Pwm { .. } => "pwm",
        }
    }

    /// True when both modes are the same rectification kind, ignoring duty.
    pub fn same_kind(&self, other: &WaveformMode) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

/// One flicker realization: waveform, grid and scan frequencies, AC phase,
/// and the per-channel ambient-to-flicker intensity ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlickerSpec {
    pub mode: WaveformMode,
    /// Grid frequency in Hz.
    pub f_enf: f64,
    /// Row-scan frequency in rows per second.
    pub f_row: f64,
    /// AC phase at row 0, radians in [0, 2π).
    pub phase: f64,
    /// Ambient light as a multiple of the flickering light's mean, per channel.
    pub k: [f64; 3],
}

impl FlickerSpec {
    /// Validating constructor; the phase is reduced into [0, 2π).
    pub fn new(mode: WaveformMode, f_enf: f64, f_row: f64, phase: f64, k: [f64; 3]) -> Result<Self> {
        let spec = FlickerSpec {
            mode,
            f_enf,
            f_row,
            phase: wrap_phase(phase, TAU),
            k,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        if !(self.f_enf.is_finite() && self.f_enf > 0.0) {
            return Err(Error::invalid(format!("f_enf must be positive, got {}", self.f_enf)));
        }
        if !(self.f_row.is_finite() && self.f_row > 0.0) {
            return Err(Error::invalid(format!("f_row must be positive, got {}", self.f_row)));
        }
        if !self.phase.is_finite() {
            return Err(Error::invalid("phase must be finite"));
        }
        if let Some(k) = self.k.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return Err(Error::invalid(format!("ambient ratio k must be >= 0, got {k}")));
        }
        let nu = self.ac_cycles_per_row();
        if !(nu > 0.0 && nu < 0.5) {
            return Err(Error::invalid(format!(
                "f_enf/f_row = {nu} cycles per row is outside (0, 0.5)"
            )));
        }
        Ok(())
    }

    /// AC cycles per sensor row, f_enf / f_row.
    pub fn ac_cycles_per_row(&self) -> f64 {
        self.f_enf / self.f_row
    }

    /// Cycles per row of the intensity pattern (twice the AC rate for full-wave).
    pub fn intensity_cycles_per_row(&self) -> f64 {
        self.ac_cycles_per_row() * self.mode.cycles_per_ac_period()
    }

    /// AC phase θ at row `y`.
    #[inline]
    pub fn theta(&self, y: f64) -> f64 {
        TAU * self.f_enf * y / self.f_row + self.phase
    }

    /// Modulation depth 1/(k+1) per channel.
    pub fn beta(&self) -> [f64; 3] {
        self.k.map(|k| 1.0 / (k + 1.0))
    }

    pub fn with_phase(&self, phase: f64) -> Self {
        FlickerSpec {
            phase: wrap_phase(phase, TAU),
            ..*self
        }
    }
}

/// Reduces an angle into [0, period).
pub fn wrap_phase(phase: f64, period: f64) -> f64 {
    let r = phase.rem_euclid(period);
    // rem_euclid can round up to exactly `period` for tiny negative inputs
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Smallest absolute difference between two angles modulo `period`.
pub fn phase_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = wrap_phase(a - b, period);
    d.min(period - d)
}
