use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{beat_frequencies, RadarParams, RampPolarity};
use crate::class::VehicleClass;
use crate::error::{Error, Result};

/// Point reflector on a vehicle body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Distance back from the vehicle front, m.
    pub along_track_offset: f64,
    /// Height above the road, m.
    pub height: f64,
    pub amplitude: f64,
}

/// One vehicle passing through the antenna footprint at constant speed.
///
/// At `t = 0` the vehicle front is at horizontal distance `entry_distance`
/// from the mast foot, moving toward increasing distance. The footprint
/// covers `[entry_distance, entry_distance + footprint_length]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub class_label: VehicleClass,
    pub speed: f64,
    pub entry_distance: f64,
    pub footprint_length: f64,
    pub scatterers: Vec<Scatterer>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.scatterers.is_empty() {
            return Err(Error::EmptyScatterers);
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::InvalidParam {
                field: "speed",
                reason: format!("must be > 0, got {}", self.speed),
            });
        }
        if !(self.footprint_length.is_finite() && self.footprint_length > 0.0) {
            return Err(Error::InvalidParam {
                field: "footprint_length",
                reason: format!("must be > 0, got {}", self.footprint_length),
            });
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParam {
                field: "noise_sigma",
                reason: format!("must be >= 0, got {}", self.noise_sigma),
            });
        }
        for s in &self.scatterers {
            if !(s.amplitude >= 0.0 && s.height >= 0.0 && s.along_track_offset.is_finite()) {
                return Err(Error::InvalidParam {
                    field: "scatterers",
                    reason: format!("invalid scatterer {s:?}"),
                });
            }
        }
        Ok(())
    }

    /// Length of the vehicle as seen by the scatterer layout.
    pub fn extent(&self) -> f64 {
        self.scatterers
            .iter()
            .map(|s| s.along_track_offset)
            .fold(0.0, f64::max)
    }

    /// Ramps needed for the whole vehicle to cross the footprint, rounded up
    /// to an even count so up and down spectrograms have equal width.
    pub fn num_ramps(&self, p: &RadarParams) -> usize {
        let duration = (self.footprint_length + self.extent()) / self.speed;
        let ramps = ((duration / p.t_ramp).ceil() as usize).max(2);
        ramps + ramps % 2
    }

    /// Raised-cosine footprint weighting at horizontal distance `d`.
    pub fn envelope(&self, d: f64) -> f64 {
        let x = (d - self.entry_distance) / self.footprint_length;
        if x <= 0.0 || x >= 1.0 {
            0.0
        } else {
            0.5 * (1.0 - (2.0 * PI * x).cos())
        }
    }
}

/// Sampled baseband beat waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub first_ramp: RampPolarity,
    pub samples_per_ramp: usize,
    pub label: Option<VehicleClass>,
}

impl BeatSignal {
    pub fn num_ramps(&self) -> usize {
        self.samples.len() / self.samples_per_ramp
    }

    pub fn polarity_of_ramp(&self, ramp: usize) -> RampPolarity {
        if ramp % 2 == 0 {
            self.first_ramp
        } else {
            self.first_ramp.flip()
        }
    }
}

/// Stationary point target for controlled experiments: range and radial
/// velocity stay fixed over every ramp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTarget {
    pub range: f64,
    pub v_radial: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Adds `amplitude * cos(2 pi f n / fs + phase)` to `out` with a rotating phasor.
fn add_tone(out: &mut [f64], freq: f64, amplitude: f64, phase: f64, sample_rate: f64) {
    let step = 2.0 * PI * freq / sample_rate;
    let (rs, rc) = step.sin_cos();
    let (mut zs, mut zc) = phase.sin_cos();
    for x in out.iter_mut() {
        *x += amplitude * zc;
        let c = zc * rc - zs * rs;
        zs = zs * rc + zc * rs;
        zc = c;
    }
}

fn check_nyquist(freq: f64, p: &RadarParams) -> Result<()> {
    if freq.abs() >= p.nyquist() {
        return Err(Error::Nyquist {
            freq_hz: freq,
            nyquist_hz: p.nyquist(),
        });
    }
    Ok(())
}

fn add_noise(samples: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma checked finite and positive");
        for x in samples.iter_mut() {
            *x += normal.sample(rng);
        }
    }
}

/// Synthesizes a beat signal from fixed-range point targets.
pub fn synthesize_point_targets(
    targets: &[PointTarget],
    num_ramps: usize,
    first_ramp: RampPolarity,
    p: &RadarParams,
    noise_sigma: f64,
    seed: u64,
) -> Result<BeatSignal> {
    p.validate()?;
    let spr = p.samples_per_ramp;
    let fs = p.sample_rate();
    let beats = targets
        .iter()
        .map(|t| {
            let (up, down) = beat_frequencies(t.range, t.v_radial, p)?;
            check_nyquist(up, p)?;
            check_nyquist(down, p)?;
            Ok((up, down))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut signal = BeatSignal {
        samples: vec![0.0; num_ramps * spr],
        sample_rate: fs,
        first_ramp,
        samples_per_ramp: spr,
        label: None,
    };
    for r in 0..num_ramps {
        let polarity = signal.polarity_of_ramp(r);
        let ramp = &mut signal.samples[r * spr..(r + 1) * spr];
        for (t, &(up, down)) in targets.iter().zip(&beats) {
            let f = match polarity {
                RampPolarity::Up => up,
                RampPolarity::Down => down,
            };
            add_tone(ramp, f, p.amplitude * t.amplitude, t.phase, fs);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise(&mut signal.samples, noise_sigma, &mut rng);
    Ok(signal)
}

/// Synthesizes the dechirped baseband signal of a vehicle pass.
///
/// Geometry is frozen at each ramp midpoint: a scatterer at horizontal
/// distance `d` and height `z` sits at slant range `sqrt((h - z)^2 + d^2)` and
/// closes at `speed * d / R`. The signal always starts with an up-ramp.
pub fn synthesize_beat_signal(s: &Scenario, p: &RadarParams) -> Result<BeatSignal> {
    p.validate()?;
    s.validate()?;
    let spr = p.samples_per_ramp;
    let fs = p.sample_rate();
    let num_ramps = s.num_ramps(p);

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let phases: Vec<f64> = s
        .scatterers
        .iter()
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();

    let mut signal = BeatSignal {
        samples: vec![0.0; num_ramps * spr],
        sample_rate: fs,
        first_ramp: RampPolarity::Up,
        samples_per_ramp: spr,
        label: Some(s.class_label),
    };
    let h = p.geometry.height;
    for r in 0..num_ramps {
        let polarity = signal.polarity_of_ramp(r);
        let t_mid = (r as f64 + 0.5) * p.t_ramp;
        let ramp = &mut signal.samples[r * spr..(r + 1) * spr];
        for (sc, &phase) in s.scatterers.iter().zip(&phases) {
            let d = s.entry_distance + s.speed * t_mid - sc.along_track_offset;
            let weight = s.envelope(d);
            if weight == 0.0 || sc.amplitude == 0.0 {
                continue;
            }
            let range = (h - sc.height).hypot(d);
            let v_radial = if range > 0.0 { s.speed * d / range } else { 0.0 };
            let (up, down) = beat_frequencies(range, v_radial, p)?;
            let f = match polarity {
                RampPolarity::Up => up,
                RampPolarity::Down => down,
            };
            check_nyquist(f, p)?;
            add_tone(ramp, f, p.amplitude * sc.amplitude * weight, phase, fs);
        }
    }
    add_noise(&mut signal.samples, s.noise_sigma, &mut rng);
    Ok(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario {
            class_label: VehicleClass::A,
            speed: 30.0,
            entry_distance: -15.0,
            footprint_length: 30.0,
            scatterers: vec![
                Scatterer {
                    along_track_offset: 0.0,
                    height: 1.0,
                    amplitude: 1.0,
                },
                Scatterer {
                    along_track_offset: 4.0,
                    height: 1.2,
                    amplitude: 0.5,
                },
            ],
            noise_sigma: 0.1,
            seed: 42,
        }
    }

    #[test]
    fn rotating_phasor_matches_direct_cosine() {
        let mut buf = vec![0.0; 512];
        add_tone(&mut buf, 1234.5, 0.7, 0.3, 12_800.0);
        for (n, &x) in buf.iter().enumerate() {
            let direct = 0.7 * (2.0 * PI * 1234.5 * n as f64 / 12_800.0 + 0.3).cos();
            assert!((x - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_count_is_even_and_covers_pass() {
        let p = RadarParams::default();
        let s = scenario();
        let n = s.num_ramps(&p);
        assert_eq!(n % 2, 0);
        assert!(n as f64 * p.t_ramp >= (30.0 + 4.0) / 30.0);
        let sig = synthesize_beat_signal(&s, &p).unwrap();
        assert_eq!(sig.samples.len(), n * 512);
        assert_eq!(sig.sample_rate, 12_800.0);
        assert_eq!(sig.label, Some(VehicleClass::A));
    }

    #[test]
    fn deterministic_under_seed() {
        let p = RadarParams::default();
        let a = synthesize_beat_signal(&scenario(), &p).unwrap();
        let b = synthesize_beat_signal(&scenario(), &p).unwrap();
        assert_eq!(a, b);
        let mut other = scenario();
        other.seed = 43;
        assert_ne!(a.samples, synthesize_beat_signal(&other, &p).unwrap().samples);
    }

    #[test]
    fn silent_scenario_is_all_zero() {
        let p = RadarParams::default();
        let mut s = scenario();
        s.noise_sigma = 0.0;
        for sc in &mut s.scatterers {
            sc.amplitude = 0.0;
        }
        let sig = synthesize_beat_signal(&s, &p).unwrap();
        assert!(sig.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_scatterers_rejected() {
        let p = RadarParams::default();
        let mut s = scenario();
        s.scatterers.clear();
        assert!(matches!(synthesize_beat_signal(&s, &p), Err(Error::EmptyScatterers)));
    }

    #[test]
    fn too_fast_vehicle_violates_nyquist() {
        let p = RadarParams::default();
        let mut s = scenario();
        s.speed = 60.0;
        assert!(matches!(synthesize_beat_signal(&s, &p), Err(Error::Nyquist { .. })));
    }

    #[test]
    fn envelope_vanishes_outside_footprint() {
        let s = scenario();
        assert_eq!(s.envelope(-15.0), 0.0);
        assert_eq!(s.envelope(15.0), 0.0);
        assert_eq!(s.envelope(40.0), 0.0);
        assert!((s.envelope(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_targets_alternate_polarity() {
        let p = RadarParams::default();
        let t = PointTarget {
            range: 20.0,
            v_radial: 0.0,
            amplitude: 1.0,
            phase: 0.0,
        };
        let sig = synthesize_point_targets(&[t], 4, RampPolarity::Down, &p, 0.0, 0).unwrap();
        assert_eq!(sig.num_ramps(), 4);
        assert_eq!(sig.polarity_of_ramp(0), RampPolarity::Down);
        assert_eq!(sig.polarity_of_ramp(1), RampPolarity::Up);
        // static target: identical tone on both polarities
        assert_eq!(sig.samples[..512], sig.samples[512..1024]);
    }
}
