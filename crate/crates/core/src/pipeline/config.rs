//! Declarative experiment configuration (TOML) with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::aer::SensorDims;
use crate::skan::{RandomThreshold, SkanConfig};
use crate::surface::SurfaceKind;
use crate::synth::DropSampler;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generate the synthetic drop suite.
    Synth {
        #[serde(default = "default_drops")]
        drops_per_class: usize,
        #[serde(default = "default_true")]
        with_flips: bool,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        sampler: DropSampler,
    },
    /// Class sub-directories of AER `.bin` files.
    Directory {
        path: PathBuf,
        #[serde(default = "default_dims")]
        dims: SensorDims,
    },
}

fn default_drops() -> usize {
    12
}
fn default_true() -> bool {
    true
}
fn default_dims() -> SensorDims {
    SensorDims::ATIS
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synth {
            drops_per_class: default_drops(),
            with_flips: true,
            seed: 0,
            sampler: DropSampler::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSection {
    /// Surfaces the protocol runs on.
    pub kinds: Vec<SurfaceKind>,
    pub tau_us: f64,
    /// Index constant; calibrated from the dataset event rate when absent.
    pub n_e: Option<f64>,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        SurfaceSection {
            kinds: SurfaceKind::ALL.to_vec(),
            tau_us: 3000.0,
            n_e: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    None,
    Learnt,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub mode: FeatureMode,
    pub skan: SkanConfig,
    /// Original drops per class used for feature training (their flips are
    /// included when present).
    pub train_per_class: usize,
    /// Patterns sampled to calibrate random-network thresholds.
    pub calibration_patterns: usize,
    pub random_threshold: RandomThreshold,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            mode: FeatureMode::Learnt,
            skan: SkanConfig::default(),
            train_per_class: 4,
            calibration_patterns: 1000,
            random_threshold: RandomThreshold::MeanPatch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "L-E")]
    LinearE,
    #[serde(rename = "ELM-E")]
    ElmE,
    #[serde(rename = "L-F")]
    LinearF,
    #[serde(rename = "ELM-F")]
    ElmF,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::LinearE, Arm::ElmE, Arm::LinearF, Arm::ElmF];

    pub fn name(self) -> &'static str {
        match self {
            Arm::LinearE => "L-E",
            Arm::ElmE => "ELM-E",
            Arm::LinearF => "L-F",
            Arm::ElmF => "ELM-F",
        }
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Arm::LinearF | Arm::ElmF)
    }

    pub fn is_elm(self) -> bool {
        matches!(self, Arm::ElmE | Arm::ElmF)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub arms: Vec<Arm>,
    pub elm_hidden: usize,
    pub elm_seed: u64,
    /// Ridge penalties relative to the mean squared norm of the training rows.
    pub lambda_grid: Vec<f64>,
    pub normalize_frames: bool,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            arms: Arm::ALL.to_vec(),
            elm_hidden: 2000,
            elm_seed: 7,
            lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            normalize_frames: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    Full,
    FrameBalanced {
        #[serde(default = "default_balanced")]
        frames: Vec<usize>,
    },
    VelocitySegregated {
        #[serde(default = "default_segregated")]
        frames: Vec<usize>,
        /// Fraction of each class's slow (train) and fast (test) recordings
        /// drawn per trial.
        #[serde(default = "default_subsample")]
        subsample: f64,
    },
    FeatureSweep {
        #[serde(default = "default_sizes")]
        sizes: Vec<usize>,
        #[serde(default = "default_counts")]
        counts: Vec<usize>,
    },
}

fn default_balanced() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}
fn default_segregated() -> Vec<usize> {
    vec![4, 8, 16]
}
fn default_subsample() -> f64 {
    0.75
}
fn default_sizes() -> Vec<usize> {
    vec![3, 5, 9, 13, 17]
}
fn default_counts() -> Vec<usize> {
    vec![1, 5, 10, 25, 50]
}

impl ProtocolConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolConfig::Full => "full",
            ProtocolConfig::FrameBalanced { .. } => "frame_balanced",
            ProtocolConfig::VelocitySegregated { .. } => "velocity_segregated",
            ProtocolConfig::FeatureSweep { .. } => "feature_sweep",
        }
    }

    /// The named protocol with default parameters.
    pub fn from_name(name: &str) -> Result<Self, PipelineError> {
        Ok(match name.replace('-', "_").as_str() {
            "full" => ProtocolConfig::Full,
            "frame_balanced" => ProtocolConfig::FrameBalanced { frames: default_balanced() },
            "velocity_segregated" => ProtocolConfig::VelocitySegregated {
                frames: default_segregated(),
                subsample: default_subsample(),
            },
            "feature_sweep" => ProtocolConfig::FeatureSweep {
                sizes: default_sizes(),
                counts: default_counts(),
            },
            other => return Err(PipelineError::Config(format!("unknown protocol '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub surface: SurfaceSection,
    pub tracker: TrackerConfig,
    pub resample_len: usize,
    /// Only sample frames whose box lies strictly inside the sensor.
    pub skip_clipped_frames: bool,
    pub features: FeatureSection,
    pub classifier: ClassifierSection,
    pub protocol: ProtocolConfig,
    pub trials: usize,
    pub split_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            surface: SurfaceSection::default(),
            tracker: TrackerConfig::default(),
            resample_len: 72,
            skip_clipped_frames: true,
            features: FeatureSection::default(),
            classifier: ClassifierSection::default(),
            protocol: ProtocolConfig::Full,
            trials: 20,
            split_seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `key.path=value` overrides; values parse as TOML, falling back
    /// to a plain string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, PipelineError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = toml::Value::try_from(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("override '{item}' is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut tree, key.trim(), value)?;
        }
        let cfg: ExperimentConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.resample_len < 2 {
            return bad("resample_len must be at least 2".into());
        }
        if self.surface.kinds.is_empty() {
            return bad("no surface kinds selected".into());
        }
        if !(self.surface.tau_us > 0.0) || self.surface.n_e.is_some_and(|n| !(n > 0.0)) {
            return bad("surface constants must be positive".into());
        }
        self.tracker.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.features
            .skan
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.classifier.lambda_grid.is_empty() || self.classifier.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return bad("lambda grid must be non-empty and positive".into());
        }
        if self.classifier.arms.is_empty() {
            return bad("no classifier arms selected".into());
        }
        if self.features.mode == FeatureMode::None && self.classifier.arms.iter().any(|a| a.uses_features()) {
            return bad("feature arms need features.mode = learnt or random".into());
        }
        match &self.protocol {
            ProtocolConfig::Full => {}
            ProtocolConfig::FrameBalanced { frames } => {
                if frames.is_empty() || frames.iter().any(|n| ![1, 2, 4, 8, 16, 32].contains(n)) {
                    return bad(format!("frame counts {frames:?} must come from 1, 2, 4, 8, 16, 32"));
                }
            }
            ProtocolConfig::VelocitySegregated { frames, subsample } => {
                if frames.is_empty() || frames.contains(&0) {
                    return bad("frame counts must be positive".into());
                }
                if !(*subsample > 0.0 && *subsample <= 1.0) {
                    return bad("subsample must lie in (0, 1]".into());
                }
            }
            ProtocolConfig::FeatureSweep { sizes, counts } => {
                if sizes.is_empty() || counts.is_empty() {
                    return bad("sizes and counts must be non-empty".into());
                }
                if let Some(s) = sizes.iter().find(|s| **s % 2 == 0) {
                    return bad(format!("feature size {s} is even; patches are centred"));
                }
                if counts.contains(&0) {
                    return bad("feature counts must be positive".into());
                }
            }
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), PipelineError> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("'{key}': '{part}' is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| PipelineError::Config(format!("'{key}' does not name a table field")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
