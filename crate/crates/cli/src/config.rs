//! Run configuration: one JSON document holding every knob of the pipeline.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use radarnet::dataset::DatasetPreset;
use radarnet::evaluation::CvOptions;
use radarnet::network::{Preset, TrainConfig};
use radarnet::radar_model::{ProfileTable, RadarParams};
use radarnet::spectrogram::TensorLayout;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub preset: DatasetPreset,
    pub seed: u64,
    pub save_signals: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            preset: DatasetPreset::Desk,
            seed: 1,
            save_signals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub split_seed: u64,
    pub net_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        let d = CvOptions::default();
        Self {
            folds: d.folds,
            train_per_class: d.train_per_class,
            val_per_class: d.val_per_class,
            split_seed: d.split_seed,
            net_seed: d.net_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub radar: RadarParams,
    pub profiles: ProfileTable,
    pub dataset: DatasetConfig,
    pub layout: TensorLayout,
    pub network: Preset,
    pub train: TrainConfig,
    pub cv: CvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let radar = RadarParams::default();
        Self {
            layout: TensorLayout::new(radar.freq_bins(), 32),
            radar,
            profiles: ProfileTable::default(),
            dataset: DatasetConfig::default(),
            network: Preset::Mini,
            train: TrainConfig::default(),
            cv: CvConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.radar.validate()?;
        self.profiles.validate()?;
        self.train.validate()?;
        if self.layout.height == 0 || self.layout.width == 0 {
            anyhow::bail!("invalid parameter `layout`: height and width must be positive");
        }
        if self.cv.folds == 0 {
            anyhow::bail!("invalid parameter `cv.folds`: must be at least 1");
        }
        Ok(())
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            folds: self.cv.folds,
            train_per_class: self.cv.train_per_class,
            val_per_class: self.cv.val_per_class,
            preset: self.network,
            train: self.train.clone(),
            split_seed: self.cv.split_seed,
            net_seed: self.cv.net_seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_roundtrips() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.layout, TensorLayout::new(257, 32));
    }

    #[test]
    fn unknown_field_is_named() {
        let err = serde_json::from_str::<RunConfig>(r#"{"train": {"epochz": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
    }
}
