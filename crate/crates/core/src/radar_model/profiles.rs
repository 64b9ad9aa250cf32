use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{synthesize_beat_signal, RadarParams, Scatterer, Scenario};
use crate::class::VehicleClass;
use crate::error::{Error, Result};

/// A stretch of vehicle body, expressed as fractions of the vehicle length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySegment {
    pub start: f64,
    pub end: f64,
    /// Scatterer height range, m.
    pub height: [f64; 2],
    pub reflectivity: [f64; 2],
    /// Scatterers per metre of segment.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    /// Vehicle length range, m.
    pub length: [f64; 2],
    /// Speed range, m/s.
    pub speed: [f64; 2],
    pub segments: Vec<BodySegment>,
}

/// Per-class simulation knobs plus the global scene setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileTable {
    pub classes: BTreeMap<VehicleClass, ClassProfile>,
    /// Global speed floor, m/s.
    pub v_min: f64,
    /// Global speed ceiling, m/s; keeps the highest beat below Nyquist.
    pub v_max: f64,
    pub footprint_length: f64,
    /// Footprint start relative to the mast foot; `None` centres the
    /// footprint under the mast.
    pub entry_distance: Option<f64>,
    /// Peak signal to noise ratio of the generated signals, dB.
    pub psnr_db: f64,
}

fn seg(start: f64, end: f64, height: [f64; 2], reflectivity: [f64; 2], density: f64) -> BodySegment {
    BodySegment {
        start,
        end,
        height,
        reflectivity,
        density,
    }
}

impl Default for ProfileTable {
    fn default() -> Self {
        use VehicleClass::*;
        let mut classes = BTreeMap::new();
        classes.insert(
            A,
            ClassProfile {
                length: [3.5, 5.0],
                speed: [25.0, 36.0],
                segments: vec![
                    seg(0.0, 0.25, [0.8, 1.0], [0.010, 0.020], 2.0),
                    seg(0.25, 0.75, [1.3, 1.5], [0.010, 0.020], 2.0),
                    seg(0.75, 1.0, [0.9, 1.1], [0.015, 0.030], 2.0),
                ],
            },
        );
        classes.insert(
            B,
            ClassProfile {
                length: [8.0, 12.0],
                speed: [22.0, 33.0],
                segments: vec![
                    seg(0.0, 0.42, [0.9, 1.5], [0.010, 0.025], 2.0),
                    seg(0.55, 1.0, [1.5, 2.2], [0.015, 0.035], 1.5),
                ],
            },
        );
        classes.insert(
            C,
            ClassProfile {
                length: [10.0, 14.0],
                speed: [20.0, 25.0],
                segments: vec![
                    seg(0.0, 0.2, [2.6, 3.1], [0.020, 0.040], 2.0),
                    seg(0.27, 0.97, [3.4, 3.8], [0.005, 0.015], 1.0),
                    seg(0.97, 1.0, [3.4, 3.8], [0.050, 0.080], 3.0),
                ],
            },
        );
        classes.insert(
            D,
            ClassProfile {
                length: [14.0, 18.0],
                speed: [20.0, 25.0],
                segments: vec![
                    seg(0.0, 0.15, [2.8, 3.2], [0.020, 0.040], 2.0),
                    seg(0.2, 1.0, [3.8, 4.0], [0.010, 0.030], 1.5),
                ],
            },
        );
        classes.insert(
            E,
            ClassProfile {
                length: [11.0, 14.0],
                speed: [22.0, 28.0],
                segments: vec![seg(0.0, 1.0, [3.0, 3.5], [0.010, 0.020], 2.5)],
            },
        );
        classes.insert(
            G,
            ClassProfile {
                length: [1.8, 2.5],
                speed: [25.0, 38.0],
                segments: vec![seg(0.0, 1.0, [0.8, 1.4], [0.003, 0.008], 2.0)],
            },
        );
        Self {
            classes,
            v_min: 10.0,
            v_max: 38.0,
            footprint_length: 30.0,
            entry_distance: None,
            psnr_db: 20.0,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

impl ProfileTable {
    pub fn profile(&self, class: VehicleClass) -> Result<&ClassProfile> {
        self.classes
            .get(&class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub fn entry_distance(&self) -> f64 {
        self.entry_distance
            .unwrap_or(-0.5 * self.footprint_length)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidParam { field, reason });
        if !(self.v_min > 0.0 && self.v_max >= self.v_min) {
            return bad(
                "profiles.v_min",
                format!("need 0 < v_min <= v_max, got {} / {}", self.v_min, self.v_max),
            );
        }
        if !(self.footprint_length > 0.0) {
            return bad(
                "profiles.footprint_length",
                format!("must be > 0, got {}", self.footprint_length),
            );
        }
        if !self.psnr_db.is_finite() {
            return bad("profiles.psnr_db", "must be finite".into());
        }
        for (class, prof) in &self.classes {
            let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0] >= 0.0;
            if !(ordered(prof.length) && prof.length[0] > 0.0 && ordered(prof.speed)) {
                return bad("profiles.classes", format!("class {class}: bad length/speed range"));
            }
            if prof.segments.is_empty() {
                return bad("profiles.classes", format!("class {class}: no body segments"));
            }
            for s in &prof.segments {
                if !(0.0 <= s.start && s.start < s.end && s.end <= 1.0)
                    || !ordered(s.height)
                    || !ordered(s.reflectivity)
                    || !(s.density > 0.0)
                {
                    return bad("profiles.classes", format!("class {class}: bad segment {s:?}"));
                }
            }
        }
        Ok(())
    }
}

/// Draws a random vehicle pass of the given class.
///
/// Deterministic under `(class, seed)`. The speed is drawn from the class
/// range and clamped to `[v_min, v_max]` of the table; the noise level is set
/// from the clean signal's peak so every sample has the table's PSNR.
pub fn sample_vehicle_scenario(
    class: VehicleClass,
    seed: u64,
    profiles: &ProfileTable,
    radar: &RadarParams,
) -> Result<Scenario> {
    let prof = profiles.profile(class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let length = uniform(&mut rng, prof.length);
    let speed = uniform(&mut rng, prof.speed).clamp(profiles.v_min, profiles.v_max);

    let mut scatterers = Vec::new();
    for s in &prof.segments {
        let span = (s.end - s.start) * length;
        let count = ((s.density * span).round() as usize).max(1);
        for _ in 0..count {
            let frac = uniform(&mut rng, [s.start, s.end]);
            scatterers.push(Scatterer {
                along_track_offset: frac * length,
                height: uniform(&mut rng, s.height),
                amplitude: uniform(&mut rng, s.reflectivity),
            });
        }
    }

    let mut scenario = Scenario {
        class_label: class,
        speed,
        entry_distance: profiles.entry_distance(),
        footprint_length: profiles.footprint_length,
        scatterers,
        noise_sigma: 0.0,
        seed: rng.random(),
    };
    let clean = synthesize_beat_signal(&scenario, radar)?;
    let peak = clean.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    scenario.noise_sigma = peak * 10f64.powf(-profiles.psnr_db / 20.0);
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let t = ProfileTable::default();
        let p = RadarParams::default();
        let a = sample_vehicle_scenario(VehicleClass::G, 7, &t, &p).unwrap();
        let b = sample_vehicle_scenario(VehicleClass::G, 7, &t, &p).unwrap();
        assert_eq!(a, b);
        let c = sample_vehicle_scenario(VehicleClass::G, 8, &t, &p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn draws_respect_ranges() {
        let t = ProfileTable::default();
        let p = RadarParams::default();
        for class in VehicleClass::ALL {
            let prof = t.profile(class).unwrap();
            for seed in 0..40 {
                let s = sample_vehicle_scenario(class, seed, &t, &p).unwrap();
                assert!(s.speed >= prof.speed[0].max(t.v_min) - 1e-12);
                assert!(s.speed <= prof.speed[1].min(t.v_max) + 1e-12);
                assert!(s.extent() <= prof.length[1]);
                assert!(s.noise_sigma > 0.0);
                assert_eq!(s.class_label, class);
            }
        }
    }

    #[test]
    fn speed_is_clamped_to_global_bound() {
        let mut t = ProfileTable::default();
        t.classes.get_mut(&VehicleClass::G).unwrap().speed = [45.0, 50.0];
        let s = sample_vehicle_scenario(VehicleClass::G, 1, &t, &RadarParams::default()).unwrap();
        assert_eq!(s.speed, 38.0);
    }

    #[test]
    fn missing_class_profile_is_an_error() {
        let mut t = ProfileTable::default();
        t.classes.remove(&VehicleClass::B);
        let err = sample_vehicle_scenario(VehicleClass::B, 1, &t, &RadarParams::default());
        assert!(matches!(err, Err(Error::UnknownClass(_))));
    }

    #[test]
    fn default_table_is_valid_and_serializable() {
        let t = ProfileTable::default();
        t.validate().unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: ProfileTable = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
    }
}
