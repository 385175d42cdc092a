//! Experiment configuration: one TOML file, every field defaulted, with
//! dotted `key=value` overrides and a stable content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamform::CameraModel;
use crate::error::{Error, Result};
use crate::features::FeaturePipeline;
use crate::nn::{InceptionConfig, TrainConfig};
use crate::scene::{NoiseKind, RoomSpec, Vec3, DEFAULT_SPEED_OF_SOUND};

/// Where SNR-calibrated noise enters the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStage {
    /// Independent noise on every microphone before beamforming; the SNR is
    /// per channel.
    Channel,
    /// Noise added to the beamformed signal; the SNR is at the classifier input.
    #[default]
    Beamformed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub clips_per_class: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
    pub snr_db: f64,
    pub noise_stage: NoiseStage,
    pub noise_kind: NoiseKind,
    pub mains_hz: f64,
    pub pulses_per_cycle: u32,
    /// Per-clip gas-leak band edges are drawn uniformly from these ranges.
    pub leak_band_lo_hz: [f64; 2],
    pub leak_band_hi_hz: [f64; 2],
    /// Leak-rate scales drawn per gas-leak clip.
    pub leak_rates: Vec<f64>,
    /// Background clips get 0..=max machinery tones.
    pub max_machinery_tones: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            clips_per_class: 40,
            duration_s: 10.0,
            sample_rate_hz: 96_000,
            seed: 2024,
            snr_db: 5.0,
            noise_stage: NoiseStage::Beamformed,
            noise_kind: NoiseKind::Gaussian,
            mains_hz: 60.0,
            pulses_per_cycle: 4,
            leak_band_lo_hz: [22_000.0, 26_000.0],
            leak_band_hi_hz: [36_000.0, 42_000.0],
            leak_rates: vec![0.2, 0.5, 1.0],
            max_machinery_tones: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub array_preset: String,
    pub n_mics: usize,
    pub speed_of_sound: f64,
    /// Source position in array coordinates (x right, y up, z forward).
    pub source_position: Vec3,
    pub camera: CameraModel,
    /// Pixel of the detection the beam is steered to.
    pub detection_px: [f64; 2],
    /// Reverberant room for the main corpus; free field when absent.
    pub room: Option<RoomSpec>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            array_preset: "fx112".into(),
            n_mics: 112,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            source_position: [0.0, 0.0, 5.0],
            camera: CameraModel::default(),
            detection_px: [320.0, 240.0],
            room: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Fraction of clips per class used for training.
    pub train_fraction: f64,
    /// Fraction of training clips per class held out for early stopping.
    pub val_fraction: f64,
    /// Training windows drawn per clip.
    pub windows_per_clip: usize,
    /// Length of the evaluated excerpt at the start of each test clip; 0
    /// evaluates whole clips.
    pub eval_excerpt_s: f64,
    pub split_seed: u64,
    pub model_seed: u64,
    pub kfold_k: usize,
    pub kfold_seed: u64,
    pub timing_runs: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            val_fraction: 0.15,
            windows_per_clip: 16,
            eval_excerpt_s: 0.0,
            split_seed: 11,
            model_seed: 3,
            kfold_k: 10,
            kfold_seed: 13,
            timing_runs: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomRow {
    pub size: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_levels_db: Vec<f64>,
    pub rooms: Vec<RoomRow>,
    pub room_absorption: f64,
    pub room_image_order: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_levels_db: (0..9).map(|i| 5.0 - i as f64).collect(),
            rooms: [[20.0, 10.0, 20.0], [30.0, 15.0, 30.0], [40.0, 20.0, 40.0], [50.0, 25.0, 50.0]]
                .into_iter()
                .map(|size| RoomRow { size })
                .collect(),
            room_absorption: 0.3,
            room_image_order: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub scene: SceneConfig,
    pub features: FeaturePipeline,
    pub model: InceptionConfig,
    pub train: TrainConfig,
    pub protocol: ProtocolConfig,
    pub sweeps: SweepConfig,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text`, applies `key=value` overrides (dotted keys, TOML
    /// values; bare words are taken as strings) and validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_err)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        let bad = |m: String| Err(Error::Config(m));
        if c.clips_per_class == 0 {
            return bad("corpus.clips_per_class must be positive".into());
        }
        if !(c.duration_s > 0.0) || !c.snr_db.is_finite() {
            return bad("corpus.duration_s must be positive and corpus.snr_db finite".into());
        }
        if c.leak_band_lo_hz[0] > c.leak_band_lo_hz[1] || c.leak_band_hi_hz[0] > c.leak_band_hi_hz[1] {
            return bad("leak band ranges must be ordered [min, max]".into());
        }
        if c.leak_rates.is_empty() {
            return bad("corpus.leak_rates must not be empty".into());
        }
        if self.features.stft.sample_rate_hz != c.sample_rate_hz {
            return bad(format!(
                "features.stft.sample_rate_hz ({}) differs from corpus.sample_rate_hz ({})",
                self.features.stft.sample_rate_hz, c.sample_rate_hz
            ));
        }
        self.features.stft.validate().map_err(config_err)?;
        let bins = self.features.n_band_bins();
        if self.model.input_height != bins || self.model.input_width != self.features.win_frames {
            return bad(format!(
                "model input {}x{} does not match the feature window {}x{}",
                self.model.input_height, self.model.input_width, bins, self.features.win_frames
            ));
        }
        self.model.validate().map_err(config_err)?;
        let p = &self.protocol;
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) || !(0.0..1.0).contains(&p.val_fraction) {
            return bad("protocol.train_fraction must be in (0, 1) and val_fraction in [0, 1)".into());
        }
        if p.windows_per_clip == 0 || p.kfold_k < 2 || p.timing_runs == 0 {
            return bad("windows_per_clip and timing_runs must be positive and kfold_k >= 2".into());
        }
        if p.eval_excerpt_s < 0.0 {
            return bad("protocol.eval_excerpt_s must be >= 0".into());
        }
        if self.sweeps.snr_levels_db.iter().any(|v| !v.is_finite()) {
            return bad("sweep SNR levels must be finite".into());
        }
        if !(self.sweeps.room_absorption > 0.0 && self.sweeps.room_absorption <= 1.0) {
            return bad("sweeps.room_absorption must be in (0, 1]".into());
        }
        self.scene.camera.validate().map_err(config_err)?;
        if let Some(room) = &self.scene.room {
            room.validate().map_err(config_err)?;
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?} descends into a non-table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::from_toml_with_overrides(
            "",
            &["corpus.clips_per_class=3".into(), "corpus.noise_stage=channel".into(), "features.gamma=1.0".into()],
        )
        .unwrap();
        assert_eq!(cfg.corpus.clips_per_class, 3);
        assert_eq!(cfg.corpus.noise_stage, NoiseStage::Channel);
        assert_eq!(cfg.features.gamma, 1.0);
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["corpus.nope=1".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["corpus".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["corpus.clips_per_class=0".into()]).is_err());
    }

    #[test]
    fn room_survives_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.scene.room = Some(RoomSpec {
            size: [20.0, 10.0, 20.0],
            absorption: 0.3,
            max_image_order: 2,
            array_center: [10.0, 5.0, 10.0],
        });
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn mismatched_model_input_rejected() {
        assert!(ExperimentConfig::from_toml_with_overrides("", &["features.win_frames=16".into()]).is_err());
    }
}
