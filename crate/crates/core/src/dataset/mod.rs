//! Synthetic labelled dataset: generation, on-disk layout, fold splits and
//! class-balanced batches.
//!
//! A dataset directory holds one `.rdt` tensor per sample, optionally the raw
//! `.rbs` beat signal, and a `manifest.json` describing everything needed to
//! reproduce it.

pub(crate) mod format;
mod split;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::class::VehicleClass;
use crate::error::{Error, Result};
use crate::radar_model::{
    sample_vehicle_scenario, synthesize_beat_signal, BeatSignal, ProfileTable, RadarParams, Scenario,
};
use crate::spectrogram::{signal_to_tensor, RdTensor, TensorLayout};

pub use format::{
    decode_signal, decode_tensor, encode_signal, encode_tensor, load_signal, load_tensor,
    save_signal, save_tensor, SIGNAL_MAGIC, TENSOR_MAGIC,
};
pub use split::{balanced_batches, derive_seed, stratified_fold_split, FoldSplit};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

/// Named per-class sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetPreset {
    /// 100 samples per class.
    Desk,
    /// 9,981 samples skewed toward cars, cargo trucks and buses.
    PaperLike,
}

impl DatasetPreset {
    pub fn counts(self) -> BTreeMap<VehicleClass, usize> {
        use VehicleClass::*;
        match self {
            DatasetPreset::Desk => VehicleClass::ALL.iter().map(|&c| (c, 100)).collect(),
            DatasetPreset::PaperLike => [(A, 3200), (B, 600), (C, 700), (D, 2200), (E, 2400), (G, 881)]
                .into_iter()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub class: VehicleClass,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_file: Option<String>,
    pub speed: f64,
    pub seed: u64,
    /// Spectrogram columns before padding.
    pub columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub radar_params_hash: String,
    pub radar: RadarParams,
    pub layout: TensorLayout,
    pub base_seed: u64,
    pub class_counts: BTreeMap<VehicleClass, usize>,
    pub samples: Vec<SampleRecord>,
}

/// SHA-256 of the canonical JSON encoding of the radar parameters.
pub fn radar_params_hash(p: &RadarParams) -> String {
    let json = serde_json::to_vec(p).expect("radar params serialize");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub counts: BTreeMap<VehicleClass, usize>,
    pub base_seed: u64,
    pub layout: TensorLayout,
    /// Also write the raw beat signal of every sample.
    pub save_signals: bool,
}

/// A dataset directory with its manifest loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
        Ok(Self { root, manifest })
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    /// `(id, class)` for every sample, in id order.
    pub fn labels(&self) -> Vec<(usize, VehicleClass)> {
        self.manifest.samples.iter().map(|s| (s.id, s.class)).collect()
    }

    pub fn tensor_path(&self, id: usize) -> PathBuf {
        self.root.join(&self.manifest.samples[id].file)
    }

    pub fn signal_path(&self, id: usize) -> Option<PathBuf> {
        self.manifest.samples[id].signal_file.as_ref().map(|f| self.root.join(f))
    }

    pub fn load(&self, id: usize) -> Result<RdTensor> {
        let rec = &self.manifest.samples[id];
        let mut t = load_tensor(self.root.join(&rec.file))?;
        let expected = [3, self.manifest.layout.height, self.manifest.layout.width];
        if t.shape() != expected {
            return Err(Error::shape(expected, t.shape()));
        }
        t.label = Some(rec.class);
        Ok(t)
    }

    /// Loads every tensor, indexed by sample id.
    pub fn load_all(&self) -> Result<Vec<RdTensor>> {
        for (i, rec) in self.manifest.samples.iter().enumerate() {
            if rec.id != i {
                return Err(Error::Domain(format!("manifest ids not sequential at {i}")));
            }
        }
        (0..self.len()).into_par_iter().map(|id| self.load(id)).collect()
    }
}

/// Draws one vehicle pass and runs it through the tensor pipeline.
pub fn synthesize_sample(
    class: VehicleClass,
    seed: u64,
    profiles: &ProfileTable,
    radar: &RadarParams,
    layout: TensorLayout,
) -> Result<(Scenario, BeatSignal, RdTensor)> {
    let scenario = sample_vehicle_scenario(class, seed, profiles, radar)?;
    let signal = synthesize_beat_signal(&scenario, radar)?;
    let mut tensor = signal_to_tensor(&signal, radar, layout)?;
    tensor.label = Some(class);
    Ok((scenario, signal, tensor))
}

/// Same samples as [`generate_dataset`], kept in memory and indexed by id.
pub fn generate_tensors(opts: &GenerateOptions, profiles: &ProfileTable, radar: &RadarParams) -> Result<Vec<RdTensor>> {
    radar.validate()?;
    profiles.validate()?;
    sample_jobs(&opts.counts)?
        .par_iter()
        .map(|&(id, class)| {
            let seed = opts.base_seed.wrapping_add(id as u64);
            Ok(synthesize_sample(class, seed, profiles, radar, opts.layout)?.2)
        })
        .collect()
}

fn sample_jobs(counts: &BTreeMap<VehicleClass, usize>) -> Result<Vec<(usize, VehicleClass)>> {
    if let Some((class, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(Error::InvalidParam {
            field: "counts",
            reason: format!("class {class} has a count of 0"),
        });
    }
    Ok(counts
        .iter()
        .flat_map(|(&c, &n)| std::iter::repeat_n(c, n))
        .enumerate()
        .collect())
}

/// Generates, saves and indexes a synthetic dataset in `out_dir`.
///
/// Sample `i` (ids run class by class in A..G order) uses seed
/// `base_seed + i`, so the output is identical however the work is scheduled.
/// `out_dir` is created if needed, but its parent must exist.
pub fn generate_dataset(
    opts: &GenerateOptions,
    profiles: &ProfileTable,
    radar: &RadarParams,
    out_dir: impl AsRef<Path>,
) -> Result<Dataset> {
    radar.validate()?;
    profiles.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    let jobs = sample_jobs(&opts.counts)?;
    if !root.is_dir() {
        fs::create_dir(&root).map_err(|e| Error::io(&root, e))?;
    }

    let samples = jobs
        .par_iter()
        .map(|&(id, class)| -> Result<SampleRecord> {
            let seed = opts.base_seed.wrapping_add(id as u64);
            let (scenario, signal, tensor) = synthesize_sample(class, seed, profiles, radar, opts.layout)?;
            let file = format!("sample_{id:05}.rdt");
            save_tensor(root.join(&file), &tensor)?;
            let signal_file = if opts.save_signals {
                let f = format!("sample_{id:05}.rbs");
                save_signal(root.join(&f), &signal)?;
                Some(f)
            } else {
                None
            };
            Ok(SampleRecord {
                id,
                class,
                file,
                signal_file,
                speed: scenario.speed,
                seed,
                columns: signal.num_ramps() / 2,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        radar_params_hash: radar_params_hash(radar),
        radar: *radar,
        layout: opts.layout,
        base_seed: opts.base_seed,
        class_counts: opts.counts.clone(),
        samples,
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    log::info!("generated {} samples in {}", manifest.samples.len(), root.display());
    Ok(Dataset { root, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_opts(n: usize) -> GenerateOptions {
        GenerateOptions {
            counts: VehicleClass::ALL.iter().map(|&c| (c, n)).collect(),
            base_seed: 1,
            layout: TensorLayout::new(257, 32),
            save_signals: true,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p = RadarParams::default();
        let t = ProfileTable::default();
        let a = generate_dataset(&small_opts(2), &t, &p, dir.path().join("a")).unwrap();
        let b = generate_dataset(&small_opts(2), &t, &p, dir.path().join("b")).unwrap();
        assert_eq!(a.manifest.class_counts, small_opts(2).counts);
        assert_eq!(a.len(), 12);
        for id in 0..a.len() {
            let fa = fs::read(a.tensor_path(id)).unwrap();
            let fb = fs::read(b.tensor_path(id)).unwrap();
            assert_eq!(fa, fb);
            assert_eq!(
                fs::read(a.signal_path(id).unwrap()).unwrap(),
                fs::read(b.signal_path(id).unwrap()).unwrap()
            );
        }
        assert_eq!(
            fs::read(a.root.join(MANIFEST_FILE)).unwrap(),
            fs::read(b.root.join(MANIFEST_FILE)).unwrap()
        );

        let reopened = Dataset::open(&a.root).unwrap();
        assert_eq!(reopened.manifest, a.manifest);
        let all = reopened.load_all().unwrap();
        assert_eq!(all.len(), 12);
        assert!(all.iter().all(|t| t.shape() == [3, 257, 32]));
        assert_eq!(all[0].label, Some(VehicleClass::A));
        assert_eq!(all[11].label, Some(VehicleClass::G));
    }

    #[test]
    fn missing_parent_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nope").join("data");
        let err = generate_dataset(&small_opts(1), &ProfileTable::default(), &RadarParams::default(), &out)
            .unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn large_preset_counts_are_skewed() {
        let counts = DatasetPreset::PaperLike.counts();
        assert_eq!(counts.values().sum::<usize>(), 9981);
        let mut by_size: Vec<_> = counts.iter().collect();
        by_size.sort_by_key(|(_, &n)| std::cmp::Reverse(n));
        let top: Vec<VehicleClass> = by_size[..3].iter().map(|(&c, _)| c).collect();
        for c in [VehicleClass::A, VehicleClass::D, VehicleClass::E] {
            assert!(top.contains(&c));
        }
    }

    #[test]
    fn hash_tracks_params() {
        let p = RadarParams::default();
        let q = RadarParams {
            delta_f: 100e6,
            ..p
        };
        assert_eq!(radar_params_hash(&p), radar_params_hash(&p));
        assert_ne!(radar_params_hash(&p), radar_params_hash(&q));
        assert_eq!(radar_params_hash(&p).len(), 64);
    }
}
