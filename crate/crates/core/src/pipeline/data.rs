//! Dataset acquisition, index-constant calibration and seeded splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::DatasetConfig;
use super::PipelineError;
use crate::aer::{load_dataset, Recording};
use crate::synth::{generate_suite, Manifest};

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub class_names: Vec<String>,
    pub recordings: Vec<Recording>,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    /// Recordings sharing a group (a drop and its mirror) are never split
    /// across train and test.
    pub groups: Vec<usize>,
    pub manifest: Option<Manifest>,
}

impl LoadedDataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    pub fn check_classes(&self) -> Result<(), PipelineError> {
        let mut seen = vec![false; self.num_classes()];
        for &l in &self.labels {
            seen[l] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(c) => Err(PipelineError::Data(format!(
                "class '{}' has no recordings",
                self.class_names[c]
            ))),
            None if self.num_classes() < 2 => {
                Err(PipelineError::Data("need at least two classes".into()))
            }
            None => Ok(()),
        }
    }
}

pub fn load(config: &DatasetConfig) -> Result<LoadedDataset, PipelineError> {
    match config {
        DatasetConfig::Synth {
            drops_per_class,
            with_flips,
            seed,
            sampler,
        } => {
            let suite = generate_suite(sampler, *drops_per_class, *with_flips, *seed)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            let per_group = if *with_flips { 2 } else { 1 };
            let ids = suite.manifest.entries.iter().map(|e| e.recording_id.clone()).collect();
            let labels = suite.manifest.entries.iter().map(|e| e.class).collect();
            let groups = (0..suite.recordings.len()).map(|k| k / per_group).collect();
            Ok(LoadedDataset {
                class_names: suite.manifest.class_names.clone(),
                recordings: suite.recordings,
                ids,
                labels,
                groups,
                manifest: Some(suite.manifest),
            })
        }
        DatasetConfig::Directory { path, dims } => {
            let ds = load_dataset(path, *dims).map_err(|e| PipelineError::Data(e.to_string()))?;
            let ids = ds.recordings.iter().map(|r| r.meta.clone()).collect();
            let labels = ds.recordings.iter().map(|r| r.label.unwrap_or(0)).collect();
            let groups = (0..ds.recordings.len()).collect();
            Ok(LoadedDataset {
                class_names: ds.class_names,
                recordings: ds.recordings,
                ids,
                labels,
                groups,
                manifest: None,
            })
        }
    }
}

/// `round(mean ON-event rate x tau)`, the rate taken over the summed
/// duration of all recordings.
pub fn calibrate_n_e(recordings: &[Recording], tau_us: f64) -> Result<f64, PipelineError> {
    let mut events = 0usize;
    let mut duration = 0u64;
    for r in recordings {
        events += r.events.iter().filter(|e| e.p == crate::aer::Polarity::On).count();
        duration += r.duration_us();
    }
    if events == 0 || duration == 0 {
        return Err(PipelineError::Data("cannot calibrate n_e on an empty dataset".into()));
    }
    Ok((events as f64 / duration as f64 * tau_us).round().max(1.0))
}

/// SplitMix64 finalizer of `split_seed` and `trial`.
pub fn trial_seed(split_seed: u64, trial: usize) -> u64 {
    let mut z = split_seed ^ (trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Groups of each class in first-appearance order.
fn class_groups(labels: &[usize], groups: &[usize], members: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in members {
        let g = out.entry(labels[r]).or_default();
        if !g.contains(&groups[r]) {
            g.push(groups[r]);
        }
    }
    out
}

/// Stratified group-level split of `members`: per class, the groups are
/// shuffled with `seed` and the first `round(fraction * n)` (at least one,
/// and at most `n - 1` when `n > 1`) go to the first set.
pub fn stratified_split(
    labels: &[usize],
    groups: &[usize],
    members: &[usize],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (_, mut g) in class_groups(labels, groups, members) {
        g.shuffle(&mut rng);
        let n = g.len();
        let mut take = (fraction * n as f64).round() as usize;
        take = take.max(1);
        if n > 1 {
            take = take.min(n - 1);
        }
        chosen.extend_from_slice(&g[..take.min(n)]);
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for &r in members {
        if chosen.contains(&groups[r]) {
            a.push(r);
        } else {
            b.push(r);
        }
    }
    (a, b)
}

/// Per class, a seeded random `fraction` of `members` (at least one).
pub fn stratified_subsample(labels: &[usize], members: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in members {
        by_class.entry(labels[r]).or_default().push(r);
    }
    let mut out = Vec::new();
    for (_, mut rs) in by_class {
        rs.shuffle(&mut rng);
        let take = ((fraction * rs.len() as f64).round() as usize).clamp(1, rs.len());
        out.extend_from_slice(&rs[..take]);
    }
    out.sort_unstable();
    out
}

/// The first `per_class` groups of each class, all their members.
pub fn leading_groups(labels: &[usize], groups: &[usize], per_class: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..labels.len()).collect();
    let keep: Vec<usize> = class_groups(labels, groups, &all)
        .into_values()
        .flat_map(|g| g.into_iter().take(per_class))
        .collect();
    all.into_iter().filter(|r| keep.contains(&groups[*r])).collect()
}
