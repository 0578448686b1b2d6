//! The experiment protocols and the shared trial machinery.

use std::collections::BTreeMap;

use faer::Mat;
use log::{info, warn};

use super::config::{Arm, ExperimentConfig, FeatureMode, ProtocolConfig};
use super::data::{self, trial_seed, LoadedDataset};
use super::frames::{build_frames, FrameSettings, RecordingFrames};
use super::report::{median, ArmResult, DatasetSummary, Report, Summary, SweepCell, TrialScore, REPORT_VERSION};
use super::PipelineError;
use crate::aer::{Recording, SensorDims};
use crate::classify::{
    evaluate_predictions, ClassifierKind, ClassifierModel, ElmProjection, ElmSpec, Evaluation, FeatureBank,
    RecordingPredictions,
};
use crate::skan::{random_features, sample_patterns, train_features, SkanConfig, SkanNetwork};
use crate::surface::{SurfaceConfig, SurfaceKind};
use crate::tracker::{activation_velocity_fit, midpoint_velocity, track, TrackError};

/// A loaded dataset with its calibrated constants.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: LoadedDataset,
    pub n_e: f64,
    pub dims: SensorDims,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let data = data::load(&config.dataset)?;
        if data.is_empty() {
            return Err(PipelineError::Data("dataset has no recordings".into()));
        }
        data.check_classes()?;
        let dims = data.recordings[0].dims;
        let n_e = match config.surface.n_e {
            Some(n) => n,
            None => {
                let n = data::calibrate_n_e(&data.recordings, config.surface.tau_us)?;
                info!("calibrated n_e = {n} from the mean ON-event rate");
                n
            }
        };
        Ok(Experiment { config, data, n_e, dims })
    }

    pub fn surface_config(&self, kind: SurfaceKind) -> SurfaceConfig {
        SurfaceConfig {
            basis: kind.basis(),
            kernel: kind.kernel(),
            tau_us: self.config.surface.tau_us,
            n_e: self.n_e,
            dims: self.dims,
        }
    }

    pub fn frame_settings(&self, kind: SurfaceKind) -> FrameSettings {
        FrameSettings {
            surface: self.surface_config(kind),
            tracker: self.config.tracker,
            resample_len: self.config.resample_len,
            normalize: self.config.classifier.normalize_frames,
            skip_clipped: self.config.skip_clipped_frames,
        }
    }

    /// Recordings used for unsupervised feature training.
    pub fn feature_training_set(&self) -> Vec<usize> {
        data::leading_groups(&self.data.labels, &self.data.groups, self.config.features.train_per_class)
    }

    fn recordings(&self, index: &[usize]) -> Vec<&Recording> {
        index.iter().map(|&r| &self.data.recordings[r]).collect()
    }

    pub fn train_network(&self, kind: SurfaceKind, skan: SkanConfig) -> Result<SkanNetwork, PipelineError> {
        let train = self.recordings(&self.feature_training_set());
        Ok(train_features(&train, self.surface_config(kind), SkanNetwork::new(skan)?)?)
    }

    pub fn random_network(&self, kind: SurfaceKind, skan: SkanConfig) -> Result<SkanNetwork, PipelineError> {
        let train = self.recordings(&self.feature_training_set());
        let calibration = sample_patterns(
            &train,
            self.surface_config(kind),
            skan.side,
            self.config.features.calibration_patterns,
        )?;
        Ok(random_features(skan, skan.seed, &calibration, self.config.features.random_threshold)?)
    }

    /// The network the configured feature mode asks for.
    pub fn network(&self, kind: SurfaceKind, skan: SkanConfig) -> Result<Option<SkanNetwork>, PipelineError> {
        match self.config.features.mode {
            FeatureMode::None => Ok(None),
            FeatureMode::Learnt => self.train_network(kind, skan).map(Some),
            FeatureMode::Random => self.random_network(kind, skan).map(Some),
        }
    }

    pub fn build_all(
        &self,
        kind: SurfaceKind,
        network: Option<&SkanNetwork>,
    ) -> Result<Vec<RecordingFrames>, PipelineError> {
        let settings = self.frame_settings(kind);
        self.data
            .recordings
            .iter()
            .map(|r| build_frames(r, &settings, network))
            .collect()
    }

    fn needs_features(&self) -> bool {
        self.config.classifier.arms.iter().any(|a| a.uses_features())
    }

    fn all(&self) -> Vec<usize> {
        (0..self.data.len()).collect()
    }

    fn summary(&self, frames: &BTreeMap<String, (usize, usize)>) -> DatasetSummary {
        DatasetSummary {
            recordings: self.data.len(),
            class_names: self.data.class_names.clone(),
            n_e: self.n_e,
            frames: frames.clone(),
        }
    }

    fn report(&self, protocol: &str, frames: BTreeMap<String, (usize, usize)>) -> Report {
        let mut notes = vec![format!(
            "n_e = {} ({})",
            self.n_e,
            if self.config.surface.n_e.is_some() { "configured" } else { "calibrated from the mean ON-event rate" }
        )];
        if self.config.classifier.arms.iter().any(|a| a.is_elm()) && self.config.classifier.elm_hidden < 30_000 {
            notes.push(format!(
                "ELM hidden layer reduced to {} neurons (reference size 30000)",
                self.config.classifier.elm_hidden
            ));
        }
        Report {
            version: REPORT_VERSION,
            protocol: protocol.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            config: self.config.clone(),
            trial_seeds: (0..self.config.trials).map(|t| trial_seed(self.config.split_seed, t)).collect(),
            dataset: self.summary(&frames),
            arms: Vec::new(),
            sweep: Vec::new(),
            activation_slopes: BTreeMap::new(),
            derived: BTreeMap::new(),
            excluded: Vec::new(),
            notes,
        }
    }
}

fn frame_counts(frames: &[RecordingFrames]) -> (usize, usize) {
    (
        frames.iter().map(|f| f.frames.len()).sum(),
        frames.iter().map(|f| f.skipped()).sum(),
    )
}

/// Train rows and per-recording test rows of one trial.
#[derive(Debug, Clone, Default)]
pub struct Plan {
    pub train: Vec<usize>,
    pub test: Vec<(usize, Vec<usize>)>,
}

/// Rows of all frames as a design matrix, addressable per recording.
pub struct Bank {
    bank: FeatureBank,
    offsets: Vec<usize>,
    labels: Vec<usize>,
}

impl Bank {
    pub fn new(
        frames: &[RecordingFrames],
        labels: &[usize],
        arm: Arm,
        elm_hidden: usize,
        elm_seed: u64,
    ) -> Result<Self, PipelineError> {
        let mut offsets = Vec::with_capacity(frames.len() + 1);
        let mut rows: Vec<&[f64]> = Vec::new();
        let mut row_labels = Vec::new();
        for (r, rf) in frames.iter().enumerate() {
            offsets.push(rows.len());
            for f in &rf.frames {
                let v = if arm.uses_features() {
                    f.f.as_deref().ok_or_else(|| PipelineError::Config("feature arm without a network".into()))?
                } else {
                    &f.e[..]
                };
                rows.push(v);
                row_labels.push(labels[r]);
            }
        }
        offsets.push(rows.len());
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(PipelineError::Data("frame lengths differ within one experiment".into()));
        }
        let x = Mat::from_fn(rows.len(), d, |i, j| rows[i][j]);
        let bank = if arm.is_elm() {
            FeatureBank::elm(x.as_ref(), &ElmProjection::new(d, elm_hidden, elm_seed))
        } else {
            FeatureBank::linear(x.as_ref())
        };
        Ok(Bank { bank, offsets, labels: row_labels })
    }

    /// Global row indices of recording `r`'s valid frames.
    pub fn rows(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    fn evaluate(
        &self,
        plan: &Plan,
        lambda_rel: f64,
        num_classes: usize,
        ids: &[String],
        labels: &[usize],
    ) -> Result<Evaluation, PipelineError> {
        let train_labels: Vec<usize> = plan.train.iter().map(|&i| self.labels[i]).collect();
        let lambda = lambda_rel * self.bank.scale(&plan.train);
        let w = self.bank.fit(&plan.train, &train_labels, num_classes, lambda)?;
        let all: Vec<usize> = plan.test.iter().flat_map(|(_, rows)| rows.iter().copied()).collect();
        let predictions = self.bank.predict(&all, &w);
        let mut groups = Vec::with_capacity(plan.test.len());
        let mut at = 0;
        for (r, rows) in &plan.test {
            groups.push(RecordingPredictions {
                recording_id: ids[*r].clone(),
                label: labels[*r],
                predictions: predictions[at..at + rows.len()].to_vec(),
            });
            at += rows.len();
        }
        Ok(evaluate_predictions(&groups, num_classes))
    }
}

/// Everything needed to run one arm over a set of trials.
struct ArmJob<'a> {
    surface: SurfaceKind,
    arm: Arm,
    frames_per_recording: Option<usize>,
    frames: &'a [RecordingFrames],
    plans: &'a [Plan],
    /// Inner split of the first trial's training data for choosing lambda.
    selection: &'a Plan,
}

fn run_arm(exp: &Experiment, job: &ArmJob) -> Result<ArmResult, PipelineError> {
    let cls = &exp.config.classifier;
    let classes = exp.data.num_classes();
    let bank = Bank::new(job.frames, &exp.data.labels, job.arm, cls.elm_hidden, cls.elm_seed)?;
    let (ids, labels) = (&exp.data.ids, &exp.data.labels);
    let mut lambda_rel = cls.lambda_grid[cls.lambda_grid.len() - 1];
    if cls.lambda_grid.len() > 1 && !job.selection.train.is_empty() {
        let mut best = f64::NEG_INFINITY;
        let mut grid = cls.lambda_grid.clone();
        grid.sort_by(|a, b| b.total_cmp(a));
        for l in grid {
            match bank.evaluate(job.selection, l, classes, ids, labels) {
                Ok(e) if e.per_frame_accuracy > best => {
                    best = e.per_frame_accuracy;
                    lambda_rel = l;
                }
                Ok(_) => {}
                Err(e) => warn!("lambda {l} failed during selection: {e}"),
            }
        }
    }
    let mut trials = Vec::with_capacity(job.plans.len());
    let mut frame_confusion = vec![vec![0; classes]; classes];
    let mut drop_confusion = vec![vec![0; classes]; classes];
    let mut misclassified = BTreeMap::new();
    for (t, plan) in job.plans.iter().enumerate() {
        let e = bank.evaluate(plan, lambda_rel, classes, ids, labels)?;
        for c in 0..classes {
            for k in 0..classes {
                frame_confusion[c][k] += e.frame_confusion[c][k];
                drop_confusion[c][k] += e.drop_confusion[c][k];
            }
        }
        for id in &e.misclassified {
            *misclassified.entry(id.clone()).or_insert(0) += 1;
        }
        trials.push(TrialScore {
            trial: t,
            seed: trial_seed(exp.config.split_seed, t),
            frame: e.per_frame_accuracy,
            drop: e.per_drop_accuracy,
            frames: e.frames,
            drops: e.drops,
        });
    }
    info!(
        "{} {} n={:?}: median frame {:.4}",
        job.surface.name(),
        job.arm.name(),
        job.frames_per_recording,
        median(&trials.iter().map(|t| t.frame).collect::<Vec<_>>())
    );
    Ok(ArmResult {
        surface: job.surface,
        arm: job.arm,
        frames_per_recording: job.frames_per_recording,
        lambda_rel,
        summary: Summary::of(&trials),
        trials,
        frame_confusion,
        drop_confusion,
        misclassified,
    })
}

/// Seed used for the inner lambda-selection split.
fn selection_seed(split_seed: u64) -> u64 {
    trial_seed(split_seed ^ 0x5e1e_c7ed, 0)
}

fn all_rows(bank_offsets: &[RecordingFrames], recs: &[usize]) -> (Vec<usize>, Vec<(usize, Vec<usize>)>) {
    let mut offsets = Vec::with_capacity(bank_offsets.len());
    let mut at = 0;
    for f in bank_offsets {
        offsets.push(at);
        at += f.frames.len();
    }
    let per: Vec<(usize, Vec<usize>)> = recs
        .iter()
        .map(|&r| (r, (offsets[r]..offsets[r] + bank_offsets[r].frames.len()).collect()))
        .collect();
    (per.iter().flat_map(|(_, v)| v.iter().copied()).collect(), per)
}

/// Row offsets of each recording in a bank built from `frames`.
fn offsets_of(frames: &[RecordingFrames]) -> Vec<usize> {
    let mut out = Vec::with_capacity(frames.len());
    let mut at = 0;
    for f in frames {
        out.push(at);
        at += f.frames.len();
    }
    out
}

fn full_plan(frames: &[RecordingFrames], train: &[usize], test: &[usize]) -> Plan {
    let (train_rows, _) = all_rows(frames, train);
    let (_, test_rows) = all_rows(frames, test);
    Plan {
        train: train_rows,
        test: test_rows.into_iter().filter(|(_, rows)| !rows.is_empty()).collect(),
    }
}

fn error_ratio(elm: &ArmResult, lin: &ArmResult) -> Option<f64> {
    let ratios: Vec<f64> = elm
        .trials
        .iter()
        .zip(&lin.trials)
        .filter(|(_, l)| l.frame < 1.0)
        .map(|(e, l)| (1.0 - e.frame) / (1.0 - l.frame))
        .collect();
    (!ratios.is_empty()).then(|| median(&ratios))
}

/// Random 50/50 recording-level splits; every arm on every surface.
pub fn run_full(exp: &Experiment) -> Result<Report, PipelineError> {
    let cfg = &exp.config;
    let all = exp.all();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.trials)
        .map(|t| data::stratified_split(&exp.data.labels, &exp.data.groups, &all, 0.5, trial_seed(cfg.split_seed, t)))
        .collect();
    let (inner_train, inner_val) = data::stratified_split(
        &exp.data.labels,
        &exp.data.groups,
        &splits[0].0,
        0.5,
        selection_seed(cfg.split_seed),
    );
    let mut counts = BTreeMap::new();
    let mut arms = Vec::new();
    let mut slopes = BTreeMap::new();
    let mut excluded = Vec::new();
    for &kind in &cfg.surface.kinds {
        let net = if exp.needs_features() { exp.network(kind, cfg.features.skan)? } else { None };
        let frames = exp.build_all(kind, net.as_ref())?;
        counts.insert(kind.name().to_string(), frame_counts(&frames));
        for (r, f) in frames.iter().enumerate() {
            if f.frames.is_empty() {
                excluded.push(format!("{}: {} has no valid frames", kind.name(), exp.data.ids[r]));
            }
        }
        let plans: Vec<Plan> = splits.iter().map(|(a, b)| full_plan(&frames, a, b)).collect();
        let selection = full_plan(&frames, &inner_train, &inner_val);
        for &arm in &cfg.classifier.arms {
            arms.push(run_arm(
                exp,
                &ArmJob { surface: kind, arm, frames_per_recording: None, frames: &frames, plans: &plans, selection: &selection },
            )?);
        }
        let fit = activation_velocity_fit(
            &exp.data.recordings,
            exp.data.num_classes(),
            exp.surface_config(kind),
            &cfg.tracker,
        );
        let per_class: Vec<Option<f64>> = match fit {
            Ok(v) => v.into_iter().map(Some).collect(),
            Err(TrackError::UndefinedSlope(_)) => vec![None; exp.data.num_classes()],
            Err(e) => return Err(e.into()),
        };
        slopes.insert(kind.name().to_string(), per_class);
    }
    let mut report = exp.report("full", counts);
    for &kind in &cfg.surface.kinds {
        let find = |arm| arms.iter().find(|a: &&ArmResult| a.surface == kind && a.arm == arm);
        for (elm, lin, tag) in [(Arm::ElmE, Arm::LinearE, "E"), (Arm::ElmF, Arm::LinearF, "F")] {
            if let (Some(e), Some(l)) = (find(elm), find(lin)) {
                if let Some(r) = error_ratio(e, l) {
                    report.derived.insert(format!("elm_over_linear_error_ratio/{tag}/{}", kind.name()), r);
                }
            }
        }
    }
    report.arms = arms;
    report.activation_slopes = slopes;
    report.excluded = excluded;
    Ok(report)
}

/// `n` distinct frames of recording `r` drawn uniformly without replacement.
fn sample_rows(offset: usize, count: usize, n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::index::sample;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, count, n.min(count)).into_iter().map(|k| offset + k).collect();
    picked.sort_unstable();
    picked
}

fn balanced_plan(frames: &[RecordingFrames], train: &[usize], test: &[usize], n: usize, seed: u64) -> Plan {
    let offsets = offsets_of(frames);
    let train_rows = train
        .iter()
        .flat_map(|&r| sample_rows(offsets[r], frames[r].frames.len(), n, data::trial_seed(seed, r)))
        .collect();
    let (_, test_rows) = all_rows(frames, test);
    Plan {
        train: train_rows,
        test: test_rows.into_iter().filter(|(_, rows)| !rows.is_empty()).collect(),
    }
}

/// Equal frame budgets per training recording.
pub fn run_frame_balanced(exp: &Experiment, budgets: &[usize]) -> Result<Report, PipelineError> {
    let cfg = &exp.config;
    let mut counts = BTreeMap::new();
    let mut arms = Vec::new();
    let mut excluded = Vec::new();
    for &kind in &cfg.surface.kinds {
        let net = if exp.needs_features() { exp.network(kind, cfg.features.skan)? } else { None };
        let frames = exp.build_all(kind, net.as_ref())?;
        counts.insert(kind.name().to_string(), frame_counts(&frames));
        for &n in budgets {
            let eligible: Vec<usize> = (0..frames.len()).filter(|&r| frames[r].frames.len() >= n).collect();
            for r in (0..frames.len()).filter(|r| !eligible.contains(r)) {
                let msg = format!("{} n={n}: {} has only {} frames", kind.name(), exp.data.ids[r], frames[r].frames.len());
                warn!("{msg}");
                excluded.push(msg);
            }
            let sub = LoadedDatasetView { data: &exp.data, members: &eligible };
            sub.check_classes()?;
            let mut plans = Vec::with_capacity(cfg.trials);
            let mut first_train = Vec::new();
            for t in 0..cfg.trials {
                let seed = trial_seed(cfg.split_seed, t);
                let (a, b) = data::stratified_split(&exp.data.labels, &exp.data.groups, &eligible, 0.5, seed);
                plans.push(balanced_plan(&frames, &a, &b, n, seed));
                if t == 0 {
                    first_train = a;
                }
            }
            let sseed = selection_seed(cfg.split_seed);
            let (ia, ib) = data::stratified_split(&exp.data.labels, &exp.data.groups, &first_train, 0.5, sseed);
            let selection = balanced_plan(&frames, &ia, &ib, n, sseed);
            for &arm in &cfg.classifier.arms {
                arms.push(run_arm(
                    exp,
                    &ArmJob { surface: kind, arm, frames_per_recording: Some(n), frames: &frames, plans: &plans, selection: &selection },
                )?);
            }
        }
    }
    let mut report = exp.report("frame_balanced", counts);
    report.arms = arms;
    report.excluded = excluded;
    Ok(report)
}

struct LoadedDatasetView<'a> {
    data: &'a LoadedDataset,
    members: &'a [usize],
}

impl LoadedDatasetView<'_> {
    fn check_classes(&self) -> Result<(), PipelineError> {
        for c in 0..self.data.num_classes() {
            if !self.members.iter().any(|&r| self.data.labels[r] == c) {
                return Err(PipelineError::Data(format!(
                    "class '{}' has no eligible recordings",
                    self.data.class_names[c]
                )));
            }
        }
        Ok(())
    }
}

/// Midpoint velocity of every recording, tracked on the exponential time
/// surface so both arms share one slow/fast partition.
pub fn recording_velocities(exp: &Experiment) -> Result<Vec<Option<f64>>, PipelineError> {
    let sc = exp.surface_config(SurfaceKind::Ets);
    exp.data
        .recordings
        .iter()
        .map(|rec| {
            let states = track(rec, sc, &exp.config.tracker)?;
            let Some(span) = rec.span() else { return Ok(None) };
            match midpoint_velocity(&states, span, exp.config.tracker.velocity_half_baseline_us) {
                Ok(v) => Ok(Some(v)),
                Err(TrackError::UndefinedVelocity(_)) => Ok(None),
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

/// Per class, the slower half of the groups (by mean member velocity) and
/// the faster half.
pub fn velocity_halves(data: &LoadedDataset, velocity: &[Option<f64>]) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (r, v) in velocity.iter().enumerate() {
        if let Some(v) = v {
            by_class.entry(data.labels[r]).or_default().entry(data.groups[r]).or_default().push(*v);
        }
    }
    let mut slow_groups = Vec::new();
    for (_, groups) in by_class {
        let mut g: Vec<(f64, usize)> = groups.into_iter().map(|(g, v)| (super::report::mean(&v), g)).collect();
        g.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        slow_groups.extend(g[..g.len() / 2].iter().map(|x| x.1));
    }
    let (mut slow, mut fast) = (Vec::new(), Vec::new());
    for (r, v) in velocity.iter().enumerate() {
        if v.is_some() {
            if slow_groups.contains(&data.groups[r]) {
                slow.push(r);
            } else {
                fast.push(r);
            }
        }
    }
    (slow, fast)
}

fn edge_plan(frames: &[RecordingFrames], train: &[usize], test: &[usize], n: usize) -> Plan {
    let offsets = offsets_of(frames);
    let train_rows = train
        .iter()
        .flat_map(|&r| offsets[r]..offsets[r] + n.min(frames[r].frames.len()))
        .collect();
    let test_rows = test
        .iter()
        .map(|&r| {
            let len = frames[r].frames.len();
            (r, (offsets[r] + len - n.min(len)..offsets[r] + len).collect::<Vec<_>>())
        })
        .filter(|(_, rows)| !rows.is_empty())
        .collect();
    Plan { train: train_rows, test: test_rows }
}

/// Train on the first frames of slow drops, test on the last frames of fast
/// drops.
pub fn run_velocity_segregated(exp: &Experiment, budgets: &[usize], subsample: f64) -> Result<Report, PipelineError> {
    let cfg = &exp.config;
    let velocity = recording_velocities(exp)?;
    let mut excluded: Vec<String> = velocity
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(r, _)| format!("{}: midpoint velocity undefined", exp.data.ids[r]))
        .collect();
    let (slow, fast) = velocity_halves(&exp.data, &velocity);
    let mut counts = BTreeMap::new();
    let mut arms = Vec::new();
    for &kind in &cfg.surface.kinds {
        let net = if exp.needs_features() { exp.network(kind, cfg.features.skan)? } else { None };
        let frames = exp.build_all(kind, net.as_ref())?;
        counts.insert(kind.name().to_string(), frame_counts(&frames));
        for &n in budgets {
            let keep = |set: &[usize]| -> Vec<usize> { set.iter().copied().filter(|&r| frames[r].frames.len() >= n).collect() };
            let (s, f) = (keep(&slow), keep(&fast));
            for r in slow.iter().chain(&fast).filter(|r| !s.contains(r) && !f.contains(r)) {
                excluded.push(format!("{} n={n}: {} has only {} frames", kind.name(), exp.data.ids[*r], frames[*r].frames.len()));
            }
            LoadedDatasetView { data: &exp.data, members: &s }.check_classes()?;
            LoadedDatasetView { data: &exp.data, members: &f }.check_classes()?;
            let plans: Vec<Plan> = (0..cfg.trials)
                .map(|t| {
                    let seed = trial_seed(cfg.split_seed, t);
                    let train = data::stratified_subsample(&exp.data.labels, &s, subsample, seed);
                    let test = data::stratified_subsample(&exp.data.labels, &f, subsample, seed ^ 0xfa57);
                    edge_plan(&frames, &train, &test, n)
                })
                .collect();
            let (ia, ib) = data::stratified_split(&exp.data.labels, &exp.data.groups, &s, 0.5, selection_seed(cfg.split_seed));
            let selection = edge_plan(&frames, &ia, &ib, n);
            for &arm in &cfg.classifier.arms {
                arms.push(run_arm(
                    exp,
                    &ArmJob { surface: kind, arm, frames_per_recording: Some(n), frames: &frames, plans: &plans, selection: &selection },
                )?);
            }
        }
    }
    let mut report = exp.report("velocity_segregated", counts);
    let vs = |set: &[usize]| set.iter().filter_map(|&r| velocity[r]).collect::<Vec<_>>();
    report.derived.insert("velocity_median/slow".into(), median(&vs(&slow)));
    report.derived.insert("velocity_median/fast".into(), median(&vs(&fast)));
    report.arms = arms;
    excluded.sort();
    excluded.dedup();
    report.excluded = excluded;
    Ok(report)
}

/// Learnt against random feature sets over a grid of patch sizes and
/// neuron counts, with the linear classifier on feature surfaces. The first
/// configured surface kind is used; the no-feature linear baseline is
/// reported as an arm.
pub fn run_feature_sweep(exp: &Experiment, sizes: &[usize], counts: &[usize]) -> Result<Report, PipelineError> {
    let cfg = &exp.config;
    let kind = cfg.surface.kinds[0];
    let all = exp.all();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.trials)
        .map(|t| data::stratified_split(&exp.data.labels, &exp.data.groups, &all, 0.5, trial_seed(cfg.split_seed, t)))
        .collect();
    let (ia, ib) = data::stratified_split(&exp.data.labels, &exp.data.groups, &splits[0].0, 0.5, selection_seed(cfg.split_seed));
    let run = |frames: &[RecordingFrames], arm: Arm, tag: Option<usize>| -> Result<ArmResult, PipelineError> {
        let plans: Vec<Plan> = splits.iter().map(|(a, b)| full_plan(frames, a, b)).collect();
        let selection = full_plan(frames, &ia, &ib);
        run_arm(exp, &ArmJob { surface: kind, arm, frames_per_recording: tag, frames, plans: &plans, selection: &selection })
    };
    let base_frames = exp.build_all(kind, None)?;
    let mut frame_counts_map = BTreeMap::new();
    frame_counts_map.insert(kind.name().to_string(), frame_counts(&base_frames));
    let baseline = run(&base_frames, Arm::LinearE, None)?;
    drop(base_frames);
    let mut cells = Vec::new();
    for &size in sizes {
        for &count in counts {
            let skan = SkanConfig { side: size, neurons: count, ..cfg.features.skan };
            let learnt = exp.train_network(kind, skan)?;
            let learnt_frames = exp.build_all(kind, Some(&learnt))?;
            let l = run(&learnt_frames, Arm::LinearF, None)?;
            drop(learnt_frames);
            let random = exp.random_network(kind, skan)?;
            let random_frames = exp.build_all(kind, Some(&random))?;
            let r = run(&random_frames, Arm::LinearF, None)?;
            info!(
                "sweep size {size} count {count}: learnt {:.4} random {:.4}",
                l.summary.mean_frame, r.summary.mean_frame
            );
            cells.push(SweepCell {
                size,
                count,
                learnt: l.summary,
                random: r.summary,
                learnt_trials: l.trials,
                random_trials: r.trials,
            });
        }
    }
    let mut report = exp.report("feature_sweep", frame_counts_map);
    report.notes.push(format!(
        "feature sweep on {} with the linear classifier; counts grid {:?} is a configurable choice",
        kind.name(),
        counts
    ));
    report.arms = vec![baseline];
    report.sweep = cells;
    Ok(report)
}

/// Dispatch on the configured protocol.
pub fn run(exp: &Experiment) -> Result<Report, PipelineError> {
    match &exp.config.protocol {
        ProtocolConfig::Full => run_full(exp),
        ProtocolConfig::FrameBalanced { frames } => run_frame_balanced(exp, frames),
        ProtocolConfig::VelocitySegregated { frames, subsample } => run_velocity_segregated(exp, frames, *subsample),
        ProtocolConfig::FeatureSweep { sizes, counts } => run_feature_sweep(exp, sizes, counts),
    }
}

/// Fit one arm on every valid frame of `frames` (one entry per dataset
/// recording) with penalty `lambda_rel` times the mean squared row norm.
pub fn fit_model(
    exp: &Experiment,
    frames: &[RecordingFrames],
    arm: Arm,
    lambda_rel: f64,
) -> Result<ClassifierModel, PipelineError> {
    let cls = &exp.config.classifier;
    let bank = Bank::new(frames, &exp.data.labels, arm, cls.elm_hidden, cls.elm_seed)?;
    let rows: Vec<usize> = (0..bank.bank.rows()).collect();
    if rows.is_empty() {
        return Err(PipelineError::Data("no valid frames to fit".into()));
    }
    let lambda = lambda_rel * bank.bank.scale(&rows);
    let w = bank.bank.fit(&rows, &bank.labels, exp.data.num_classes(), lambda)?;
    let input_dim = frames
        .iter()
        .flat_map(|r| r.frames.first())
        .map(|f| if arm.uses_features() { f.f.as_ref().map_or(0, |v| v.len()) } else { f.e.len() })
        .next()
        .unwrap_or(0);
    let (kind, elm) = if arm.is_elm() {
        (ClassifierKind::Elm, Some(ElmSpec { hidden: cls.elm_hidden, seed: cls.elm_seed }))
    } else {
        (ClassifierKind::Linear, None)
    };
    Ok(ClassifierModel::from_readout(kind, input_dim, lambda, elm, &w))
}
