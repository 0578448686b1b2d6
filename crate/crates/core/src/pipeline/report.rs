//! Experiment reports: JSON documents plus flat CSV tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{Arm, ExperimentConfig};
use crate::surface::SurfaceKind;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial: usize,
    pub seed: u64,
    pub frame: f64,
    pub drop: f64,
    pub frames: usize,
    pub drops: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub median_frame: f64,
    pub median_drop: f64,
    pub mean_frame: f64,
    pub std_frame: f64,
    pub mean_drop: f64,
    pub std_drop: f64,
}

impl Summary {
    pub fn of(scores: &[TrialScore]) -> Self {
        let f: Vec<f64> = scores.iter().map(|s| s.frame).collect();
        let d: Vec<f64> = scores.iter().map(|s| s.drop).collect();
        Summary {
            median_frame: median(&f),
            median_drop: median(&d),
            mean_frame: mean(&f),
            std_frame: std_dev(&f),
            mean_drop: mean(&d),
            std_drop: std_dev(&d),
        }
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// One classifier arm on one surface (and frame budget, where relevant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub surface: SurfaceKind,
    pub arm: Arm,
    /// Frames per recording, for the frame-budget protocols.
    pub frames_per_recording: Option<usize>,
    /// Selected ridge penalty relative to the mean squared row norm.
    pub lambda_rel: f64,
    pub trials: Vec<TrialScore>,
    pub summary: Summary,
    /// Summed over trials, `[true][predicted]`.
    pub frame_confusion: Vec<Vec<usize>>,
    pub drop_confusion: Vec<Vec<usize>>,
    /// Recording id -> number of trials in which its drop vote was wrong.
    pub misclassified: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub size: usize,
    pub count: usize,
    pub learnt: Summary,
    pub random: Summary,
    pub learnt_trials: Vec<TrialScore>,
    pub random_trials: Vec<TrialScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub recordings: usize,
    pub class_names: Vec<String>,
    pub n_e: f64,
    /// Surface name -> (valid frames, skipped frame instants).
    pub frames: BTreeMap<String, (usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub protocol: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub trial_seeds: Vec<u64>,
    pub dataset: DatasetSummary,
    pub arms: Vec<ArmResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepCell>,
    /// Surface name -> per-class least-squares slope of early activation
    /// rate against midpoint velocity (`None` when undefined).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub activation_slopes: BTreeMap<String, Vec<Option<f64>>>,
    /// Named derived quantities such as ELM/linear error ratios.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub derived: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<String>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn arm(&self, surface: SurfaceKind, arm: Arm, frames: Option<usize>) -> Option<&ArmResult> {
        self.arms
            .iter()
            .find(|a| a.surface == surface && a.arm == arm && a.frames_per_recording == frames)
    }

    /// One row per (arm, trial).
    pub fn write_trials_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "protocol,surface,arm,frames_per_recording,lambda_rel,trial,seed,frame_acc,drop_acc,frames,drops")?;
        for a in &self.arms {
            for t in &a.trials {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    self.protocol,
                    a.surface.name(),
                    a.arm.name(),
                    a.frames_per_recording.map_or(String::new(), |n| n.to_string()),
                    a.lambda_rel,
                    t.trial,
                    t.seed,
                    t.frame,
                    t.drop,
                    t.frames,
                    t.drops
                )?;
            }
        }
        Ok(())
    }

    /// One row per sweep cell and feature kind.
    pub fn write_sweep_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "size,count,features,mean_frame,std_frame,mean_drop,std_drop")?;
        for c in &self.sweep {
            for (name, s) in [("learnt", &c.learnt), ("random", &c.random)] {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    c.size, c.count, name, s.mean_frame, s.std_frame, s.mean_drop, s.std_drop
                )?;
            }
        }
        Ok(())
    }
}
