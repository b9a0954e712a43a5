//! Run configuration: one document tying together the generator, builder,
//! model, training, modality toggles, and output paths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hat::HatConfig;
use crate::scene::{BuildConfig, SceneFrame};
use crate::synth::SynthConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Input-modality switches matching the incremental ablation axes. Toggling
/// a modality off removes its cells/features before building; turning
/// temporal off treats the window as a single frame. Screen evidence rides
/// on the visual toggle (both are view-based modalities).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityToggles {
    pub objects: bool,
    pub skeletons: bool,
    pub visual: bool,
    pub robot_logs: bool,
    pub audio: bool,
    pub temporal: bool,
}

impl Default for ModalityToggles {
    fn default() -> Self {
        ModalityToggles {
            objects: true,
            skeletons: true,
            visual: true,
            robot_logs: true,
            audio: true,
            temporal: true,
        }
    }
}

impl ModalityToggles {
    pub fn filter_frame(&self, frame: &SceneFrame) -> SceneFrame {
        let mut out = frame.clone();
        if !self.objects {
            out.objects.clear();
        }
        if !self.skeletons {
            out.humans.clear();
        }
        if !self.visual {
            out.cameras.clear();
            out.evidence.screen = None;
        }
        if !self.robot_logs {
            out.evidence.robot_log = None;
        }
        if !self.audio {
            out.evidence.audio = None;
        }
        out
    }

    /// Frames the model actually sees per window.
    pub fn effective_window(&self, window_t: usize) -> usize {
        if self.temporal {
            window_t
        } else {
            1
        }
    }

    /// Slices the window's frames to the temporally visible suffix and
    /// applies the per-frame filters.
    pub fn apply(&self, frames: &[SceneFrame]) -> Vec<SceneFrame> {
        let keep = self.effective_window(frames.len()).min(frames.len());
        frames[frames.len() - keep..]
            .iter()
            .map(|f| self.filter_frame(f))
            .collect()
    }

    /// The six incremental ablation rows, in table order.
    pub fn ablation_rows() -> Vec<(String, ModalityToggles)> {
        let off = ModalityToggles {
            objects: false,
            skeletons: false,
            visual: false,
            robot_logs: false,
            audio: false,
            temporal: false,
        };
        let mut rows = Vec::new();
        let mut current = ModalityToggles { objects: true, ..off };
        rows.push(("objects".to_string(), current));
        current.skeletons = true;
        rows.push(("+skeletons".to_string(), current));
        current.visual = true;
        rows.push(("+visual".to_string(), current));
        current.robot_logs = true;
        rows.push(("+robot_logs".to_string(), current));
        current.audio = true;
        rows.push(("+audio".to_string(), current));
        current.temporal = true;
        rows.push(("+temporal".to_string(), current));
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hat: HatConfig,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hat: HatConfig::default(),
            init_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_action: f64,
    pub lambda_phase: f64,
    pub lambda_relation: f64,
    pub eval_interval: usize,
    pub eval_window_cap: usize,
    /// Stop early once every tracked val macro-F1 reaches this value.
    pub early_stop_min_f1: Option<f64>,
    /// Global L2 gradient-norm ceiling; occasional sharp-window batches
    /// otherwise derail the unnormalized attention stack.
    pub grad_clip_norm: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 2,
            learning_rate: 1e-3,
            lambda_action: 1.0,
            lambda_phase: 1.0,
            lambda_relation: 1.0,
            eval_interval: 100,
            eval_window_cap: 64,
            early_stop_min_f1: Some(0.92),
            grad_clip_norm: Some(10.0),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub episodes: usize,
    pub split: (f64, f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            episodes: 16,
            split: (0.75, 0.125, 0.125),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    pub data_dir: String,
    pub checkpoint: String,
    pub report: String,
    pub triplets: String,
    pub train_log: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "out/data".into(),
            checkpoint: "out/checkpoint.json".into(),
            report: "out/report.json".into(),
            triplets: "out/triplets.txt".into(),
            train_log: "out/train_log.json".into(),
        }
    }
}

/// The whole run in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub format_version: u32,
    pub synth: SynthConfig,
    pub build: BuildConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub modality_toggles: ModalityToggles,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: FORMAT_VERSION,
            synth: SynthConfig::default(),
            build: BuildConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            modality_toggles: ModalityToggles::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ConfigError::Version(self.format_version));
        }
        self.build
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.synth
            .validate(self.build.window_t)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model
            .hat
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.train.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be >= 1".into()));
        }
        if self.train.eval_interval == 0 {
            return Err(ConfigError::Invalid("eval_interval must be >= 1".into()));
        }
        for (name, lambda) in [
            ("lambda_action", self.train.lambda_action),
            ("lambda_phase", self.train.lambda_phase),
            ("lambda_relation", self.train.lambda_relation),
        ] {
            if lambda < 0.0 {
                return Err(ConfigError::Invalid(format!("{name} must be >= 0")));
            }
        }
        let (a, b, c) = self.data.split;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid("split ratios must sum to 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toggles_strip_modalities() {
        let run = RunConfig::default();
        let ep = crate::synth::generate_episode(&run.synth, &run.build, 0).unwrap();
        let toggles = ModalityToggles {
            objects: false,
            visual: false,
            audio: false,
            ..ModalityToggles::default()
        };
        let filtered = toggles.filter_frame(&ep.frames[0]);
        assert!(filtered.objects.is_empty());
        assert!(filtered.cameras.is_empty());
        assert!(filtered.evidence.screen.is_none());
        assert!(filtered.evidence.audio.is_none());
        assert!(filtered.evidence.robot_log.is_some());
        assert!(!filtered.humans.is_empty());
    }

    #[test]
    fn temporal_off_keeps_last_frame_only() {
        let run = RunConfig::default();
        let ep = crate::synth::generate_episode(&run.synth, &run.build, 0).unwrap();
        let toggles = ModalityToggles {
            temporal: false,
            ..ModalityToggles::default()
        };
        let window = &ep.frames[0..run.build.window_t];
        let applied = toggles.apply(window);
        assert_eq!(applied.len(), 1);
        assert_eq!(applied[0].timestamp, window.last().unwrap().timestamp);
    }

    #[test]
    fn ablation_rows_are_incremental_and_six() {
        let rows = ModalityToggles::ablation_rows();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].1.objects, true);
        assert_eq!(rows[0].1.skeletons, false);
        assert_eq!(rows[5].1, ModalityToggles::default());
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut run = RunConfig::default();
        run.format_version = 2;
        assert!(matches!(run.validate(), Err(ConfigError::Version(2))));
    }
}
