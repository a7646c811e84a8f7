//! Experiment configuration (TOML). Every key is optional; missing keys take
//! the defaults below.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! dir = "data"                  # train/, valid/ and test/ live below this
//! train_count = 200
//! valid_count = 40
//! test_count = 50
//! duration_s = 3.0
//! channels = 4
//! train_overlaps = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
//! test_overlaps = [0.0, 0.1, 0.2, 0.3, 0.4]
//! window = 256                  # STFT window N
//! hop = 128                     # STFT hop H
//! sample_rate = 16000
//!
//! [model]
//! layers = 8
//! heads = 4
//! d_model = 64
//! ffn_dim = 256
//! max_len = 200
//! streams = 3                   # speakers + noise
//!
//! [train]
//! batch = 4
//! chunk_frames = 64
//! peak_lr = 1e-3
//! warmup_steps = 500
//! total_steps = 20000
//! weight_decay = 1e-2
//! clip_norm = 5.0
//! valid_chunks_per_scene = 2
//!
//! [inference]
//! window_frames = 64
//! hop_frames = 32
//! taus = [0.0, 1e-4, 1e-3, 1e-2, inf]
//! distance = "all"              # or "speakers"
//!
//! [output]
//! dir = "runs/default"
//! ```

use std::path::{Path, PathBuf};

use exitsep_core::optim::{AdamWConfig, Schedule};
use exitsep_core::{DistanceKind, ModelConfig, StftConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub inference: InferenceSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
    pub train_count: usize,
    pub valid_count: usize,
    pub test_count: usize,
    pub duration_s: f64,
    pub channels: usize,
    pub train_overlaps: Vec<f64>,
    pub test_overlaps: Vec<f64>,
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub streams: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch: usize,
    pub chunk_frames: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub valid_chunks_per_scene: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub window_frames: usize,
    pub hop_frames: usize,
    pub taus: Vec<f64>,
    pub distance: DistanceName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceName {
    #[default]
    All,
    Speakers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            inference: InferenceSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: PathBuf::from("data"),
            train_count: 200,
            valid_count: 40,
            test_count: 50,
            duration_s: 3.0,
            channels: 4,
            train_overlaps: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            test_overlaps: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            window: 256,
            hop: 128,
            sample_rate: 16000,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::from(&ModelConfig::desk(4))
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = Schedule::default();
        let a = AdamWConfig::default();
        TrainSection {
            batch: 4,
            chunk_frames: 64,
            peak_lr: s.peak_lr,
            warmup_steps: s.warmup_steps,
            total_steps: s.total_steps,
            weight_decay: a.weight_decay,
            clip_norm: 5.0,
            valid_chunks_per_scene: 2,
        }
    }
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            window_frames: 64,
            hop_frames: 32,
            taus: vec![0.0, 1e-4, 1e-3, 1e-2, f64::INFINITY],
            distance: DistanceName::All,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
        }
    }
}

impl From<&ModelConfig> for ModelSection {
    fn from(c: &ModelConfig) -> Self {
        ModelSection {
            layers: c.layers,
            heads: c.heads,
            d_model: c.d_model,
            ffn_dim: c.ffn_dim,
            max_len: c.max_len,
            streams: c.streams,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, input_dim: usize, freq_bins: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
            input_dim,
            freq_bins,
            streams: self.streams,
        }
    }
}

impl From<DistanceName> for DistanceKind {
    fn from(d: DistanceName) -> Self {
        match d {
            DistanceName::All => DistanceKind::AllStreams,
            DistanceName::Speakers => DistanceKind::SpeakersOnly,
        }
    }
}

impl TrainSection {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            window: self.data.window,
            hop: self.data.hop,
            sample_rate: self.data.sample_rate,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let bins = self.data.window / 2 + 1;
        self.model.to_config(self.data.channels * bins, bins)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(Error::Usage(m));
        self.stft().validate()?;
        self.model_config().validate()?;
        for (field, list) in [("data.train_overlaps", &self.data.train_overlaps), ("data.test_overlaps", &self.data.test_overlaps)] {
            if let Some(bad) = list.iter().find(|o| !(0.0..1.0).contains(*o)) {
                return usage(format!("{field}: overlap {bad} outside [0, 1)"));
            }
        }
        if self.data.channels == 0 {
            return usage("data.channels must be positive".into());
        }
        let t = &self.train;
        if t.batch == 0 || t.chunk_frames == 0 || t.chunk_frames > self.model.max_len {
            return usage(format!(
                "train.batch {} / train.chunk_frames {}: need both positive and chunk ≤ model.max_len {}",
                t.batch, t.chunk_frames, self.model.max_len
            ));
        }
        if t.total_steps < t.warmup_steps || t.warmup_steps == 0 {
            return usage("train.warmup_steps must be positive and ≤ train.total_steps".into());
        }
        let i = &self.inference;
        if i.window_frames > self.model.max_len || i.hop_frames == 0 || i.hop_frames > i.window_frames {
            return usage(format!(
                "inference.window_frames {} / hop_frames {}: need 0 < hop ≤ window ≤ model.max_len",
                i.window_frames, i.hop_frames
            ));
        }
        if let Some(bad) = i.taus.iter().find(|t| t.is_nan() || **t < 0.0) {
            return usage(format!("inference.taus: threshold {bad} must be ≥ 0"));
        }
        Ok(())
    }
}
