//! Triangular FM-CW waveform, beat-frequency physics and a baseband
//! simulator for single-vehicle passes.
//!
//! The transmitted frequency sweeps linearly by `delta_f` over each ramp of
//! duration `t_ramp`, alternating up and down ramps (period `2 * t_ramp`).
//! Mixing the echo with the transmit signal leaves one tone per scatterer at
//! the beat frequency
//!
//! ```text
//! f_up   = (delta_f / t_ramp) * (2R / c) + |f_D|
//! f_down = (delta_f / t_ramp) * (2R / c) - |f_D|,      f_D = 2 v_r / lambda
//! ```
//!
//! The RF carrier is never sampled: signals are produced directly at baseband.

mod profiles;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use profiles::{sample_vehicle_scenario, BodySegment, ClassProfile, ProfileTable};
pub use synth::{
    synthesize_beat_signal, synthesize_point_targets, BeatSignal, PointTarget, Scatterer, Scenario,
};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RampPolarity {
    Up,
    Down,
}

impl RampPolarity {
    pub fn flip(self) -> Self {
        match self {
            RampPolarity::Up => RampPolarity::Down,
            RampPolarity::Down => RampPolarity::Up,
        }
    }
}

/// Mounting geometry: the antenna sits `height` metres above the lane and
/// looks down at `depression` radians toward the back of passing vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub height: f64,
    pub depression: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            height: 5.3,
            depression: 32f64.to_radians(),
        }
    }
}

impl Geometry {
    /// Horizontal distance from the mast to where the boresight meets the road.
    pub fn boresight_ground_distance(&self) -> f64 {
        self.height / self.depression.tan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarParams {
    /// Carrier frequency, Hz.
    pub f0: f64,
    /// Sweep bandwidth, Hz.
    pub delta_f: f64,
    /// Duration of one ramp, s.
    pub t_ramp: f64,
    pub samples_per_ramp: usize,
    pub fft_size: usize,
    /// Transmit amplitude.
    pub amplitude: f64,
    pub geometry: Geometry,
}

impl Default for RadarParams {
    fn default() -> Self {
        Self {
            f0: 24e9,
            delta_f: 120e6,
            t_ramp: 0.040,
            samples_per_ramp: 512,
            fft_size: 512,
            amplitude: 1.0,
            geometry: Geometry::default(),
        }
    }
}

impl RadarParams {
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParam {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                })
            }
        }
        positive("f0", self.f0)?;
        positive("delta_f", self.delta_f)?;
        positive("t_ramp", self.t_ramp)?;
        positive("geometry.height", self.geometry.height)?;
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::InvalidParam {
                field: "amplitude",
                reason: format!("must be finite and >= 0, got {}", self.amplitude),
            });
        }
        if self.samples_per_ramp < 2 {
            return Err(Error::InvalidParam {
                field: "samples_per_ramp",
                reason: format!("must be >= 2, got {}", self.samples_per_ramp),
            });
        }
        if self.fft_size < self.samples_per_ramp {
            return Err(Error::InvalidParam {
                field: "fft_size",
                reason: format!(
                    "must be >= samples_per_ramp ({}), got {}",
                    self.samples_per_ramp, self.fft_size
                ),
            });
        }
        Ok(())
    }

    /// Baseband sample rate, Hz.
    pub fn sample_rate(&self) -> f64 {
        self.samples_per_ramp as f64 / self.t_ramp
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f0
    }

    /// Frequency sweep rate `delta_f / t_ramp`, Hz/s.
    pub fn sweep_slope(&self) -> f64 {
        self.delta_f / self.t_ramp
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate() / 2.0
    }

    /// Width of one FFT bin, Hz.
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate() / self.fft_size as f64
    }

    /// Number of one-sided spectrum bins.
    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.delta_f)
    }

    /// Range corresponding to a Doppler-free beat frequency.
    pub fn range_for_beat(&self, f_beat: f64) -> f64 {
        let tau = f_beat / self.sweep_slope();
        tau * SPEED_OF_LIGHT / 2.0
    }
}

/// Unit triangular pulse: `1 + t` on (-1, 0], `1 - t` on (0, 1), zero elsewhere.
pub fn tri(t: f64) -> f64 {
    if t > -1.0 && t <= 0.0 {
        1.0 + t
    } else if t > 0.0 && t < 1.0 {
        1.0 - t
    } else {
        0.0
    }
}

/// Frequency deviation of the transmit signal at time `t`.
///
/// Symmetric triangle wave of period `2T`: trough `-delta_f/2` at `t = 2nT`,
/// peak `+delta_f/2` at `t = (2n+1)T`.
pub fn modulating_frequency(t: f64, p: &RadarParams) -> f64 {
    let period = 2.0 * p.t_ramp;
    let phase = t.rem_euclid(period);
    p.delta_f * (tri((phase - p.t_ramp) / p.t_ramp) - 0.5)
}

pub fn instantaneous_tx_frequency(t: f64, p: &RadarParams) -> f64 {
    p.f0 + modulating_frequency(t, p)
}

/// Polarity of the ramp containing `t` for a sweep that starts ascending at `t = 0`.
pub fn ramp_polarity_at(t: f64, p: &RadarParams) -> RampPolarity {
    if t.rem_euclid(2.0 * p.t_ramp) < p.t_ramp {
        RampPolarity::Up
    } else {
        RampPolarity::Down
    }
}

/// Up- and down-ramp beat frequencies of a point target.
///
/// `v_radial` is signed (receding positive); only its magnitude enters the
/// beat pair. The down-ramp value may be negative.
pub fn beat_frequencies(range: f64, v_radial: f64, p: &RadarParams) -> Result<(f64, f64)> {
    if !(range >= 0.0) {
        return Err(Error::Domain(format!("range must be >= 0, got {range}")));
    }
    let range_term = p.sweep_slope() * (2.0 * range / SPEED_OF_LIGHT);
    let doppler = doppler_shift(v_radial, p).abs();
    Ok((range_term + doppler, range_term - doppler))
}

/// Signed Doppler shift `2 v / lambda`.
pub fn doppler_shift(v_radial: f64, p: &RadarParams) -> f64 {
    2.0 * v_radial / p.wavelength()
}

/// Recovers range and radial speed magnitude from a signed beat pair.
pub fn invert_beat(f_b_up: f64, f_b_down: f64, p: &RadarParams) -> Result<(f64, f64)> {
    let range_term = 0.5 * (f_b_up + f_b_down);
    if !(range_term >= 0.0) {
        return Err(Error::Domain(format!(
            "beat pair ({f_b_up}, {f_b_down}) implies a negative range"
        )));
    }
    let doppler = 0.5 * (f_b_up - f_b_down);
    let range = p.range_for_beat(range_term);
    let speed = doppler.abs() * p.wavelength() / 2.0;
    Ok((range, speed))
}
