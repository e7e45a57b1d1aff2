//! Rectified AC waveforms, their period means, and per-row gain profiles.
//!
//! A flickering frame relates to its clean counterpart by a per-row,
//! per-channel multiplicative gain
//!
//! ```text
//! g(y) = 1 + (w(θ(y)) / w̄ - 1) / (k + 1),   θ(y) = 2π f_enf y / f_row + φ
//! ```
//!
//! where `w` is the unit-amplitude rectified waveform and `w̄` its mean over one
//! AC period, the level a long exposure integrates to.

use std::f64::consts::{FRAC_2_PI, FRAC_1_PI, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FlickerSpec, WaveformMode};

/// Unit-amplitude light intensity at AC phase `theta`.
pub fn waveform_value(mode: WaveformMode, theta: f64) -> f64 {
    let c = theta.rem_euclid(TAU).cos();
    match mode {
        WaveformMode::FullWave => c.abs(),
        WaveformMode::HalfWave => c.max(0.0),
        // duty 1 is a constant source; the strict comparison would switch it
        // off at the single phase where cos θ = -1
        WaveformMode::Pwm { duty } if duty >= 1.0 => 1.0,
        WaveformMode::Pwm { duty } => {
            if c > (PI * duty).cos() {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Mean of [`waveform_value`] over one AC period.
pub fn effective_value(mode: WaveformMode) -> Result<f64> {
    mode.validate()?;
    Ok(match mode {
        WaveformMode::FullWave => FRAC_2_PI,
        WaveformMode::HalfWave => FRAC_1_PI,
        WaveformMode::Pwm { duty } => duty,
    })
}

/// Gain for a single phase given the waveform mean and modulation depth `beta = 1/(k+1)`.
#[inline]
pub fn gain_at(mode: WaveformMode, mean: f64, beta: f64, theta: f64) -> f64 {
    1.0 + (waveform_value(mode, theta) / mean - 1.0) * beta
}

/// Per-row, per-channel multiplicative gains for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainProfile {
    values: Vec<[f64; 3]>,
}

impl GainProfile {
    pub fn from_rows(values: Vec<[f64; 3]>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("gain profile needs at least one row"));
        }
        if values.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::invalid("gain profile contains non-finite values"));
        }
        Ok(Self { values })
    }

    /// All-ones profile.
    pub fn unit(rows: usize) -> Result<Self> {
        Self::from_rows(vec![[1.0; 3]; rows])
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn get(&self, y: usize, c: usize) -> f64 {
        self.values[y][c]
    }

    pub fn row(&self, y: usize) -> [f64; 3] {
        self.values[y]
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    /// Gains of one channel as a vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|g| g[c]).collect()
    }
}

/// Evaluates the gain of every row `0..rows` at the row centre.
pub fn gain_profile(spec: &FlickerSpec, rows: usize) -> Result<GainProfile> {
    spec.validate()?;
    if rows == 0 {
        return Err(Error::invalid("gain profile needs at least one row"));
    }
    let mean = effective_value(spec.mode)?;
    let values = (0..rows)
        .map(|y| {
            let rel = waveform_value(spec.mode, spec.theta(y as f64)) / mean - 1.0;
            spec.k.map(|k| 1.0 + rel / (k + 1.0))
        })
        .collect();
    GainProfile::from_rows(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite midpoint mean over one period, split at the waveform's kinks
    /// and jumps so no sample straddles a breakpoint. Independent of the closed forms.
    fn quadrature_mean(mode: WaveformMode, samples: usize) -> f64 {
        let mut cuts = match mode {
            WaveformMode::FullWave | WaveformMode::HalfWave => vec![0.5 * PI, 1.5 * PI],
            WaveformMode::Pwm { duty } => vec![PI * duty, TAU - PI * duty],
        };
        cuts.insert(0, 0.0);
        cuts.push(TAU);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let n = ((b - a) / TAU * samples as f64).ceil().max(1.0) as usize;
            let h = (b - a) / n as f64;
            let piece: f64 = (0..n).map(|i| waveform_value(mode, a + (i as f64 + 0.5) * h)).sum();
            total += piece * h;
        }
        total / TAU
    }

    #[test]
    fn waveform_examples() {
        assert_eq!(waveform_value(WaveformMode::FullWave, PI), 1.0);
        assert_eq!(waveform_value(WaveformMode::HalfWave, PI), 0.0);
        let pwm = WaveformMode::Pwm { duty: 0.5 };
        assert_eq!(waveform_value(pwm, 0.0), 1.0);
        assert_eq!(waveform_value(pwm, PI), 0.0);
    }

    #[test]
    fn pwm_threshold_is_strict() {
        // cos(π·0.5) rounds to ~6e-17; a phase whose cosine lands exactly on
        // the threshold is off
        let duty = 1.0 / 3.0;
        let edge = PI * duty;
        assert_eq!(waveform_value(WaveformMode::Pwm { duty }, edge), 0.0);
        assert_eq!(waveform_value(WaveformMode::Pwm { duty }, edge - 1e-9), 1.0);
    }

    #[test]
    fn full_and_half_means_match_quadrature() {
        // quadrature oracle with 2^20 samples
        let n = 1 << 20;
        let full = quadrature_mean(WaveformMode::FullWave, n);
        let half = quadrature_mean(WaveformMode::HalfWave, n);
        assert!((full - 0.636_619_772_367_581_3).abs() < 1e-9);
        assert!((half - 0.318_309_886_183_790_7).abs() < 1e-9);
        assert!((effective_value(WaveformMode::FullWave).unwrap() - full).abs() < 1e-9);
        assert!((effective_value(WaveformMode::HalfWave).unwrap() - half).abs() < 1e-9);
    }

    #[test]
    fn pwm_mean_is_duty() {
        for d in 1..=10 {
            let mode = WaveformMode::Pwm { duty: d as f64 / 10.0 };
            let q = quadrature_mean(mode, 1 << 20);
            assert!((effective_value(mode).unwrap() - q).abs() < 1e-9, "duty {d}: {q}");
        }
        assert_eq!(effective_value(WaveformMode::Pwm { duty: 1.0 }).unwrap(), 1.0);
    }

    #[test]
    fn effective_value_rejects_zero_duty() {
        assert!(effective_value(WaveformMode::Pwm { duty: 0.0 }).is_err());
        assert!(effective_value(WaveformMode::Pwm { duty: -0.5 }).is_err());
    }

    #[test]
    fn full_wave_k0_row0_gain_is_half_pi() {
        let spec = FlickerSpec::new(WaveformMode::FullWave, 50.0, 1e5, 0.0, [0.0; 3]).unwrap();
        let g = gain_profile(&spec, 16).unwrap();
        // direct substitution: w = |cos 0| = 1, w̄ = 2/π, k = 0
        let direct = 1.0 + (1.0 / (2.0 / PI) - 1.0) / (0.0 + 1.0);
        assert!((g.get(0, 0) - direct).abs() < 1e-15);
        assert!((g.get(0, 0) - 1.5708).abs() < 1e-4);
    }

    #[test]
    fn large_k_flattens_profile() {
        let spec = FlickerSpec::new(WaveformMode::HalfWave, 60.0, 1.3e5, 0.4, [1e6; 3]).unwrap();
        let g = gain_profile(&spec, 512).unwrap();
        assert!(g.values().iter().flatten().all(|&v| (v - 1.0).abs() <= 2e-6 + 1e-12));
    }

    #[test]
    fn unit_duty_pwm_is_exactly_one() {
        for phase in [0.0, 1.0, PI, 5.0] {
            let spec = FlickerSpec::new(WaveformMode::Pwm { duty: 1.0 }, 50.0, 1e5, phase, [0.0, 0.3, 2.0]).unwrap();
            let g = gain_profile(&spec, 300).unwrap();
            assert!(g.values().iter().flatten().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn equal_k_gives_colourless_profile() {
        let spec = FlickerSpec::new(WaveformMode::FullWave, 50.0, 1e5, 0.3, [0.4; 3]).unwrap();
        let g = gain_profile(&spec, 64).unwrap();
        assert!(g.values().iter().all(|r| r[0] == r[1] && r[1] == r[2]));
    }

    fn arb_mode() -> impl Strategy<Value = WaveformMode> {
        prop_oneof![
            Just(WaveformMode::FullWave),
            Just(WaveformMode::HalfWave),
            (1u32..=10).prop_map(|d| WaveformMode::Pwm { duty: d as f64 / 10.0 }),
        ]
    }

    proptest! {
        #[test]
        fn waveform_is_periodic(mode in arb_mode(), theta in -20.0f64..20.0) {
            // exact periodicity holds for the reduced angle; compare away from PWM edges
            let a = waveform_value(mode, theta);
            let b = waveform_value(mode, theta + TAU);
            if let WaveformMode::Pwm { duty } = mode {
                let edge = (theta.rem_euclid(TAU).cos() - (PI * duty).cos()).abs();
                prop_assume!(edge > 1e-9);
            }
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn gains_within_bounds(mode in arb_mode(), k in 0.0f64..3.0, phase in 0.0f64..TAU) {
            let spec = FlickerSpec::new(mode, 50.0, 1e5, phase, [k; 3]).unwrap();
            let mean = effective_value(mode).unwrap();
            let g = gain_profile(&spec, 256).unwrap();
            let lo = 1.0 - 1.0 / (k + 1.0);
            let hi = 1.0 + (1.0 / mean - 1.0) / (k + 1.0);
            for &v in g.values().iter().flatten() {
                prop_assert!(v >= lo - 1e-12 && v >= -1e-12);
                prop_assert!(v <= hi + 1e-12);
            }
        }
    }
}
