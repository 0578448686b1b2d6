//! Ridge one-vs-all and extreme learning machine classifiers, with per-frame
//! and per-drop (majority vote) scoring.

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("no training examples")]
    Empty,
    #[error("zero-dimensional input")]
    ZeroDim,
    #[error("class {0} has no training examples")]
    MissingClass(usize),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("frame has {got} values, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("ridge lambda must be positive, got {0}")]
    BadLambda(f64),
    #[error("no frames to vote on")]
    NoFrames,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Linear,
    Elm,
}

/// Fixed random hidden layer `sigmoid(X A + b)`. `A` (input_dim x hidden,
/// row-major) is drawn first, then `b`, all uniform in [-1, 1] from a
/// ChaCha8 stream seeded with `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmProjection {
    pub seed: u64,
    a: Mat<f64>,
    b: Vec<f64>,
}

impl ElmProjection {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Mat::<f64>::zeros(input_dim, hidden);
        for i in 0..input_dim {
            for j in 0..hidden {
                a.write(i, j, rng.random_range(-1.0..=1.0));
            }
        }
        let b = (0..hidden).map(|_| rng.random_range(-1.0..=1.0)).collect();
        ElmProjection { seed, a, b }
    }

    pub fn input_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.a.ncols()
    }

    pub fn transform(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let mut h = x * self.a.as_ref();
        for j in 0..h.ncols() {
            let bj = self.b[j];
            let col = h.col_mut(j);
            for v in col.iter_mut() {
                *v = sigmoid(*v + bj);
            }
        }
        h
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElmSpec {
    pub hidden: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub version: u32,
    pub kind: ClassifierKind,
    pub num_classes: usize,
    pub input_dim: usize,
    pub lambda: f64,
    pub elm: Option<ElmSpec>,
    /// Readout `(features + 1) x classes`, row-major; the last row is the bias.
    pub weights: Vec<f64>,
    #[serde(skip)]
    projection: Option<ElmProjection>,
}

impl PartialEq for ClassifierModel {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.kind == other.kind
            && self.num_classes == other.num_classes
            && self.input_dim == other.input_dim
            && self.lambda == other.lambda
            && self.elm == other.elm
            && self.weights == other.weights
    }
}

fn check_training(x: &[Vec<f64>], labels: &[usize], classes: usize, lambda: f64) -> Result<usize, ClassifyError> {
    if x.is_empty() {
        return Err(ClassifyError::Empty);
    }
    let d = x[0].len();
    if d == 0 {
        return Err(ClassifyError::ZeroDim);
    }
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(ClassifyError::DimensionMismatch { got: bad.len(), expected: d });
    }
    if labels.len() != x.len() {
        return Err(ClassifyError::Format("label count differs from row count".into()));
    }
    if !(lambda > 0.0) {
        return Err(ClassifyError::BadLambda(lambda));
    }
    let mut seen = vec![false; classes];
    for &l in labels {
        if l >= classes {
            return Err(ClassifyError::BadLabel { label: l, classes });
        }
        seen[l] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(ClassifyError::MissingClass(c));
    }
    Ok(d)
}

fn flatten(w: &Mat<f64>) -> Vec<f64> {
    (0..w.nrows())
        .flat_map(|i| (0..w.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| w.read(i, j))
        .collect()
}

/// One-vs-all ridge regression on `[x, 1]` with 0/1 targets.
pub fn train_linear(
    x: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    lambda: f64,
) -> Result<ClassifierModel, ClassifyError> {
    let d = check_training(x, labels, num_classes, lambda)?;
    let design = linalg::with_bias(linalg::from_rows(x).as_ref());
    let y = linalg::one_hot(labels, num_classes);
    let w = linalg::ridge(design.as_ref(), y.as_ref(), lambda)?;
    Ok(ClassifierModel {
        version: MODEL_VERSION,
        kind: ClassifierKind::Linear,
        num_classes,
        input_dim: d,
        lambda,
        elm: None,
        weights: flatten(&w),
        projection: None,
    })
}

/// Ridge readout on a seeded random sigmoid hidden layer.
pub fn train_elm(
    x: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    hidden: usize,
    lambda: f64,
    seed: u64,
) -> Result<ClassifierModel, ClassifyError> {
    let d = check_training(x, labels, num_classes, lambda)?;
    let projection = ElmProjection::new(d, hidden, seed);
    let h = projection.transform(linalg::from_rows(x).as_ref());
    let design = linalg::with_bias(h.as_ref());
    let y = linalg::one_hot(labels, num_classes);
    let w = linalg::ridge(design.as_ref(), y.as_ref(), lambda)?;
    Ok(ClassifierModel {
        version: MODEL_VERSION,
        kind: ClassifierKind::Elm,
        num_classes,
        input_dim: d,
        lambda,
        elm: Some(ElmSpec { hidden, seed }),
        weights: flatten(&w),
        projection: Some(projection),
    })
}

impl ClassifierModel {
    /// Assemble a model from an externally fitted readout.
    pub fn from_readout(
        kind: ClassifierKind,
        input_dim: usize,
        lambda: f64,
        elm: Option<ElmSpec>,
        readout: &Mat<f64>,
    ) -> Self {
        let projection = elm.map(|e| ElmProjection::new(input_dim, e.hidden, e.seed));
        ClassifierModel {
            version: MODEL_VERSION,
            kind,
            num_classes: readout.ncols(),
            input_dim,
            lambda,
            elm,
            weights: flatten(readout),
            projection,
        }
    }

    fn features(&self, frame: &[f64]) -> Vec<f64> {
        match &self.projection {
            Some(p) => {
                let x = Mat::from_fn(1, frame.len(), |_, j| frame[j]);
                let h = p.transform(x.as_ref());
                (0..h.ncols()).map(|j| h.read(0, j)).collect()
            }
            None => frame.to_vec(),
        }
    }

    pub fn scores(&self, frame: &[f64]) -> Result<Vec<f64>, ClassifyError> {
        if frame.len() != self.input_dim {
            return Err(ClassifyError::DimensionMismatch {
                got: frame.len(),
                expected: self.input_dim,
            });
        }
        let f = self.features(frame);
        let c = self.num_classes;
        let mut s: Vec<f64> = self.weights[f.len() * c..(f.len() + 1) * c].to_vec();
        for (i, v) in f.iter().enumerate() {
            if *v != 0.0 {
                for (k, sk) in s.iter_mut().enumerate() {
                    *sk += v * self.weights[i * c + k];
                }
            }
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifyError> {
        let mut m: ClassifierModel =
            serde_json::from_str(text).map_err(|e| ClassifyError::Format(e.to_string()))?;
        if m.version != MODEL_VERSION {
            return Err(ClassifyError::Format(format!("unsupported version {}", m.version)));
        }
        let features = match (m.kind, m.elm) {
            (ClassifierKind::Linear, None) => m.input_dim,
            (ClassifierKind::Elm, Some(e)) => e.hidden,
            _ => return Err(ClassifyError::Format("kind and elm spec disagree".into())),
        };
        if m.weights.len() != (features + 1) * m.num_classes {
            return Err(ClassifyError::Format("weight count does not match shape".into()));
        }
        m.projection = m.elm.map(|e| ElmProjection::new(m.input_dim, e.hidden, e.seed));
        Ok(m)
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Most frequent class; ties go to the lowest class.
pub fn majority_vote(votes: &[usize], num_classes: usize) -> Result<usize, ClassifyError> {
    if votes.is_empty() {
        return Err(ClassifyError::NoFrames);
    }
    let mut counts = vec![0usize; num_classes.max(votes.iter().max().unwrap() + 1)];
    for &v in votes {
        counts[v] += 1;
    }
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    Ok(best)
}

pub fn predict_frame(model: &ClassifierModel, frame: &[f64]) -> Result<usize, ClassifyError> {
    Ok(argmax(&model.scores(frame)?))
}

pub fn predict_drop<F: AsRef<[f64]>>(model: &ClassifierModel, frames: &[F]) -> Result<usize, ClassifyError> {
    let votes = frames
        .iter()
        .map(|f| predict_frame(model, f.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    majority_vote(&votes, model.num_classes)
}

/// Per-frame predictions of one test recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingPredictions {
    pub recording_id: String,
    pub label: usize,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_frame_accuracy: f64,
    pub per_drop_accuracy: f64,
    pub frames: usize,
    pub drops: usize,
    /// `confusion[true][predicted]` counts.
    pub frame_confusion: Vec<Vec<usize>>,
    pub drop_confusion: Vec<Vec<usize>>,
    pub misclassified: Vec<String>,
}

/// Score per-recording predictions. Recordings without frames are skipped.
pub fn evaluate_predictions(groups: &[RecordingPredictions], num_classes: usize) -> Evaluation {
    let mut frame_confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut drop_confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut misclassified = Vec::new();
    let (mut frames, mut frame_hits, mut drops, mut drop_hits) = (0, 0, 0, 0);
    for g in groups {
        let Ok(vote) = majority_vote(&g.predictions, num_classes) else {
            continue;
        };
        for &p in &g.predictions {
            frame_confusion[g.label][p] += 1;
            frame_hits += (p == g.label) as usize;
        }
        frames += g.predictions.len();
        drops += 1;
        drop_confusion[g.label][vote] += 1;
        if vote == g.label {
            drop_hits += 1;
        } else {
            misclassified.push(g.recording_id.clone());
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Evaluation {
        per_frame_accuracy: ratio(frame_hits, frames),
        per_drop_accuracy: ratio(drop_hits, drops),
        frames,
        drops,
        frame_confusion,
        drop_confusion,
        misclassified,
    }
}

/// Evaluate a model on `(recording_id, label, frames)` groups.
pub fn evaluate<F: AsRef<[f64]>>(
    model: &ClassifierModel,
    groups: &[(String, usize, Vec<F>)],
) -> Result<Evaluation, ClassifyError> {
    let preds = groups
        .iter()
        .map(|(id, label, frames)| {
            Ok(RecordingPredictions {
                recording_id: id.clone(),
                label: *label,
                predictions: frames
                    .iter()
                    .map(|f| predict_frame(model, f.as_ref()))
                    .collect::<Result<_, ClassifyError>>()?,
            })
        })
        .collect::<Result<Vec<_>, ClassifyError>>()?;
    Ok(evaluate_predictions(&preds, model.num_classes))
}

/// Rows scaled to sum to one; empty rows stay zero.
pub fn normalize_confusion(confusion: &[Vec<usize>]) -> Vec<Vec<f64>> {
    confusion
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect()
}

/// All frames of an experiment as one design matrix (bias column included),
/// optionally with its cached kernel `X X^T`, for repeated ridge fits on
/// row subsets.
pub struct FeatureBank {
    pub design: Mat<f64>,
    pub kernel: Option<Mat<f64>>,
}

impl FeatureBank {
    pub fn linear(frames: MatRef<'_, f64>) -> Self {
        FeatureBank {
            design: linalg::with_bias(frames),
            kernel: None,
        }
    }

    pub fn elm(frames: MatRef<'_, f64>, projection: &ElmProjection) -> Self {
        FeatureBank {
            design: linalg::with_bias(projection.transform(frames).as_ref()),
            kernel: None,
        }
    }

    /// Cache the kernel when the dual system is the smaller one for a
    /// training set of `train_rows` rows.
    pub fn cache_kernel_for(mut self, train_rows: usize) -> Self {
        if train_rows < self.dim() && self.kernel.is_none() {
            self.kernel = Some(&self.design * self.design.transpose());
        }
        self
    }

    pub fn rows(&self) -> usize {
        self.design.nrows()
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    /// Mean squared norm of the selected rows: the scale of a ridge penalty.
    pub fn scale(&self, rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return 1.0;
        }
        let s: f64 = match &self.kernel {
            Some(k) => rows.iter().map(|&r| k.read(r, r)).sum(),
            None => rows
                .iter()
                .map(|&r| (0..self.dim()).map(|j| self.design.read(r, j).powi(2)).sum::<f64>())
                .sum(),
        };
        s / rows.len() as f64
    }

    /// Ridge readout on the selected rows; `labels` are per selected row.
    pub fn fit(
        &self,
        rows: &[usize],
        labels: &[usize],
        num_classes: usize,
        lambda: f64,
    ) -> Result<Mat<f64>, ClassifyError> {
        if rows.is_empty() {
            return Err(ClassifyError::Empty);
        }
        if !(lambda > 0.0) {
            return Err(ClassifyError::BadLambda(lambda));
        }
        let y = linalg::one_hot(labels, num_classes);
        let x = linalg::select_rows(self.design.as_ref(), rows);
        let w = match &self.kernel {
            Some(k) if rows.len() < self.dim() => {
                let ks = linalg::select_square(k.as_ref(), rows);
                linalg::ridge_dual(x.as_ref(), ks.as_ref(), y.as_ref(), lambda)?
            }
            _ => linalg::ridge(x.as_ref(), y.as_ref(), lambda)?,
        };
        Ok(w)
    }

    /// Argmax predictions for the selected rows.
    pub fn predict(&self, rows: &[usize], readout: &Mat<f64>) -> Vec<usize> {
        let x = linalg::select_rows(self.design.as_ref(), rows);
        let s = &x * readout;
        (0..s.nrows())
            .map(|i| {
                let row: Vec<f64> = (0..s.ncols()).map(|j| s.read(i, j)).collect();
                argmax(&row)
            })
            .collect()
    }
}
