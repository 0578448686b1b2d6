//! Synapto-dendritic kernel adaptation network (SKAN).
//!
//! A surface patch is delay-coded: each pixel value `v` becomes a spike at
//! step `255 - round(255 v)` on its own channel, and zero pixels stay silent.
//! Every neuron has, per channel, a triangular kernel of adaptive half-width
//! `w` that starts at the spike, rises linearly to `peak` after `w` steps and
//! falls back to zero after `2w`. The soma sums its kernels; the first neuron
//! whose soma reaches its threshold fires and inhibits the rest.
//!
//! Learning moves each of the winner's kernel peaks one step toward its
//! firing time, pulls the winner's threshold toward its soma maximum and
//! lowers every other threshold a little.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aer::{Event, Recording};
use crate::surface::{MemorySurface, SurfaceConfig, SurfaceError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SkanError {
    #[error("patch value {value} at channel {channel} outside [0, 1]")]
    ValueOutOfRange { channel: usize, value: f64 },
    #[error("patch has {got} values, expected {expected}")]
    PatchSize { got: usize, expected: usize },
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("network file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkanConfig {
    pub neurons: usize,
    /// Receptive field side; channels = side².
    pub side: usize,
    pub peak: f64,
    pub w_min: u16,
    pub w_max: u16,
    pub dw: u16,
    pub theta_up: f64,
    /// Threshold decrement as a fraction of the initial threshold.
    pub theta_down_frac: f64,
    /// Initial threshold as a fraction of the channel count.
    pub theta_init_frac: f64,
    /// Lower bound on any threshold as a fraction of the initial threshold.
    pub theta_min_frac: f64,
    /// Threshold adaptation rates fall linearly over a training pass to
    /// this fraction of their nominal values (1 keeps them constant).
    pub anneal_final: f64,
    /// Simulation horizon, steps.
    pub t_max: usize,
    /// Seed for the initial kernel widths.
    pub seed: u64,
}

impl Default for SkanConfig {
    fn default() -> Self {
        SkanConfig {
            neurons: 25,
            side: 13,
            peak: 1.0,
            w_min: 2,
            w_max: 256,
            dw: 1,
            theta_up: 0.05,
            theta_down_frac: 0.001,
            theta_init_frac: 0.3,
            theta_min_frac: 0.2,
            anneal_final: 0.0,
            t_max: 512,
            seed: 0,
        }
    }
}

impl SkanConfig {
    pub fn channels(&self) -> usize {
        self.side * self.side
    }

    pub fn theta_init(&self) -> f64 {
        self.theta_init_frac * self.channels() as f64
    }

    pub fn theta_down(&self) -> f64 {
        self.theta_down_frac * self.theta_init()
    }

    pub fn validate(&self) -> Result<(), SkanError> {
        let bad = |m: &str| Err(SkanError::Config(m.into()));
        if self.neurons == 0 {
            return bad("need at least one neuron");
        }
        if self.side % 2 == 0 || self.side == 0 {
            return bad("receptive field side must be odd");
        }
        if self.w_min == 0 || self.w_min > self.w_max {
            return bad("need 0 < w_min <= w_max");
        }
        if !(self.peak > 0.0) || !(self.theta_init() > 0.0) {
            return bad("peak and initial threshold must be positive");
        }
        if self.t_max == 0 {
            return bad("t_max must be positive");
        }
        if !(0.0..=1.0).contains(&self.anneal_final) {
            return bad("anneal_final must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Sparse delay code of one patch: `(channel, delay)` pairs sorted by channel.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpikePattern {
    pub spikes: Vec<(u16, u8)>,
}

impl SpikePattern {
    pub fn delay(&self, channel: usize) -> Option<u8> {
        self.spikes
            .binary_search_by_key(&(channel as u16), |s| s.0)
            .ok()
            .map(|k| self.spikes[k].1)
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    (255.0 * v).round() as u8
}

pub fn encode_patch(values: &[f64]) -> Result<SpikePattern, SkanError> {
    let mut pattern = SpikePattern::default();
    encode_patch_into(values, &mut pattern)?;
    Ok(pattern)
}

/// `encode_patch` reusing the pattern's allocation.
pub fn encode_patch_into(values: &[f64], pattern: &mut SpikePattern) -> Result<(), SkanError> {
    pattern.spikes.clear();
    for (channel, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(SkanError::ValueOutOfRange { channel, value: v });
        }
        let q = quantize(v);
        if q > 0 {
            pattern.spikes.push((channel as u16, 255 - q));
        }
    }
    Ok(())
}

/// Result of presenting one pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub winner: Option<usize>,
    /// Firing step of the winner.
    pub fire_step: Option<usize>,
}

/// Reusable simulation buffers.
#[derive(Debug, Clone, Default)]
pub struct SkanScratch {
    /// Slope changes, step-major: `dd[t * neurons + k]`.
    dd: Vec<f64>,
    value: Vec<f64>,
    slope: Vec<f64>,
    patch: Vec<f64>,
    pattern: SpikePattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkanNetwork {
    pub version: u32,
    pub config: SkanConfig,
    /// Kernel half-widths, neuron-major: `widths[k * channels + j]`.
    pub widths: Vec<u16>,
    pub thresholds: Vec<f64>,
    pub learning: bool,
}

impl SkanNetwork {
    /// A fresh learning network with widths drawn uniformly from
    /// `[w_min, w_max]` and thresholds at their initial value.
    pub fn new(config: SkanConfig) -> Result<Self, SkanError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let widths = (0..config.neurons * config.channels())
            .map(|_| rng.random_range(config.w_min..=config.w_max))
            .collect();
        Ok(SkanNetwork {
            version: FORMAT_VERSION,
            config,
            widths,
            thresholds: vec![config.theta_init(); config.neurons],
            learning: true,
        })
    }

    pub fn neurons(&self) -> usize {
        self.config.neurons
    }

    pub fn frozen(mut self) -> Self {
        self.learning = false;
        self
    }

    pub fn width(&self, neuron: usize, channel: usize) -> u16 {
        self.widths[neuron * self.config.channels() + channel]
    }

    fn theta_floor(&self) -> f64 {
        (self.config.theta_min_frac * self.config.theta_init()).max(f64::MIN_POSITIVE)
    }

    /// Fill the slope-change table for all neurons.
    fn load(&self, pattern: &SpikePattern, scratch: &mut SkanScratch) -> usize {
        let k_n = self.config.neurons;
        let horizon = self.config.t_max + 1;
        if scratch.dd.len() != horizon * k_n {
            scratch.dd = vec![0.0; horizon * k_n];
        }
        scratch.value.clear();
        scratch.value.resize(k_n, 0.0);
        scratch.slope.clear();
        scratch.slope.resize(k_n, 0.0);
        let channels = self.config.channels();
        let h = self.config.peak;
        for &(j, d) in &pattern.spikes {
            let d = d as usize;
            for k in 0..k_n {
                let w = self.widths[k * channels + j as usize] as usize;
                let s = h / w as f64;
                for (at, delta) in [(d, s), (d + w, -2.0 * s), (d + 2 * w, s)] {
                    if at < horizon {
                        scratch.dd[at * k_n + k] += delta;
                    }
                }
            }
        }
        horizon
    }

    fn unload(&self, pattern: &SpikePattern, scratch: &mut SkanScratch) {
        let k_n = self.config.neurons;
        let horizon = self.config.t_max + 1;
        let channels = self.config.channels();
        for &(j, d) in &pattern.spikes {
            let d = d as usize;
            for k in 0..k_n {
                let w = self.widths[k * channels + j as usize] as usize;
                for at in [d, d + w, d + 2 * w] {
                    if at < horizon {
                        scratch.dd[at * k_n + k] = 0.0;
                    }
                }
            }
        }
    }

    /// Earliest (step, neuron) whose soma reaches threshold.
    fn race(&self, horizon: usize, scratch: &mut SkanScratch) -> Option<(usize, usize)> {
        let k_n = self.config.neurons;
        for t in 0..horizon {
            for k in 0..k_n {
                if scratch.value[k] >= self.thresholds[k] {
                    return Some((t, k));
                }
            }
            let row = &scratch.dd[t * k_n..(t + 1) * k_n];
            for k in 0..k_n {
                scratch.slope[k] += row[k];
                scratch.value[k] += scratch.slope[k];
            }
        }
        None
    }

    /// Peak soma of one neuron over the horizon.
    fn soma_max(&self, neuron: usize, horizon: usize, scratch: &SkanScratch) -> f64 {
        let k_n = self.config.neurons;
        let (mut value, mut slope, mut best) = (0.0f64, 0.0, 0.0f64);
        for t in 0..horizon {
            best = best.max(value);
            slope += scratch.dd[t * k_n + neuron];
            value += slope;
        }
        best
    }

    /// Soma trace of one neuron for a pattern, steps `0..=t_max`.
    pub fn soma_trace(&self, neuron: usize, pattern: &SpikePattern) -> Vec<f64> {
        let channels = self.config.channels();
        let h = self.config.peak;
        (0..=self.config.t_max)
            .map(|t| {
                pattern
                    .spikes
                    .iter()
                    .map(|&(j, d)| {
                        let w = self.widths[neuron * channels + j as usize] as f64;
                        let s = t as f64 - d as f64;
                        if s <= 0.0 || s >= 2.0 * w {
                            0.0
                        } else if s <= w {
                            h * s / w
                        } else {
                            h * (2.0 * w - s) / w
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// Present a pattern without learning.
    pub fn infer(&self, pattern: &SpikePattern, scratch: &mut SkanScratch) -> StepOutcome {
        if pattern.is_empty() {
            return StepOutcome { winner: None, fire_step: None };
        }
        let horizon = self.load(pattern, scratch);
        let hit = self.race(horizon, scratch);
        self.unload(pattern, scratch);
        StepOutcome {
            winner: hit.map(|h| h.1),
            fire_step: hit.map(|h| h.0),
        }
    }

    /// Present a pattern, adapting the network when learning is enabled.
    pub fn step(&mut self, pattern: &SpikePattern, scratch: &mut SkanScratch) -> StepOutcome {
        self.step_at_rate(pattern, scratch, 1.0)
    }

    /// `step` with the threshold adaptation rates scaled by `rate`.
    pub fn step_at_rate(&mut self, pattern: &SpikePattern, scratch: &mut SkanScratch, rate: f64) -> StepOutcome {
        if !self.learning {
            return self.infer(pattern, scratch);
        }
        if pattern.is_empty() {
            return StepOutcome { winner: None, fire_step: None };
        }
        let horizon = self.load(pattern, scratch);
        let hit = self.race(horizon, scratch);
        let down = rate * self.config.theta_down();
        let up = rate * self.config.theta_up;
        let floor = self.theta_floor();
        match hit {
            Some((t_fire, winner)) => {
                let soma_max = self.soma_max(winner, horizon, scratch);
                self.unload(pattern, scratch);
                let channels = self.config.channels();
                let (dw, lo, hi) = (self.config.dw as i32, self.config.w_min, self.config.w_max);
                for &(j, d) in &pattern.spikes {
                    let w = &mut self.widths[winner * channels + j as usize];
                    let err = t_fire as i64 - d as i64 - *w as i64;
                    let next = *w as i32 + dw * err.signum() as i32;
                    *w = (next.clamp(lo as i32, hi as i32)) as u16;
                }
                for (k, theta) in self.thresholds.iter_mut().enumerate() {
                    if k == winner {
                        *theta += up * (soma_max - *theta);
                    } else {
                        *theta -= down;
                    }
                    *theta = theta.max(floor);
                }
                StepOutcome {
                    winner: Some(winner),
                    fire_step: Some(t_fire),
                }
            }
            None => {
                self.unload(pattern, scratch);
                for theta in self.thresholds.iter_mut() {
                    *theta = (*theta - down).max(floor);
                }
                StepOutcome { winner: None, fire_step: None }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SkanError> {
        let net: SkanNetwork =
            serde_json::from_str(text).map_err(|e| SkanError::Format(e.to_string()))?;
        if net.version != FORMAT_VERSION {
            return Err(SkanError::Format(format!("unsupported version {}", net.version)));
        }
        net.config.validate()?;
        if net.widths.len() != net.config.neurons * net.config.channels()
            || net.thresholds.len() != net.config.neurons
        {
            return Err(SkanError::Format("array sizes do not match config".into()));
        }
        Ok(net)
    }

    /// Width matrix of one neuron as `side` rows.
    pub fn width_matrix(&self, neuron: usize) -> Vec<Vec<u16>> {
        let side = self.config.side;
        let channels = self.config.channels();
        self.widths[neuron * channels..(neuron + 1) * channels]
            .chunks(side)
            .map(|r| r.to_vec())
            .collect()
    }
}

/// A camera event labelled with the neuron that won on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEvent {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub i: u64,
    pub feature_id: usize,
}

/// Encode the patch around `event` (already absorbed into `surface`) into
/// `scratch.pattern`.
fn load_event_pattern(
    side: usize,
    event: &Event,
    surface: &MemorySurface,
    scratch: &mut SkanScratch,
) -> Result<(), SkanError> {
    let now = surface.config().basis.instant(event.t, event.i);
    scratch.patch.resize(side * side, 0.0);
    surface.fill_patch(event.x, event.y, side, now, &mut scratch.patch)?;
    let mut pattern = std::mem::take(&mut scratch.pattern);
    let result = encode_patch_into(&scratch.patch, &mut pattern);
    scratch.pattern = pattern;
    result
}

/// Run frozen inference for one event whose patch is read from `surface`.
pub fn extract_feature_event(
    event: &Event,
    surface: &MemorySurface,
    network: &SkanNetwork,
    scratch: &mut SkanScratch,
) -> Result<Option<FeatureEvent>, SkanError> {
    load_event_pattern(network.config.side, event, surface, scratch)?;
    let pattern = std::mem::take(&mut scratch.pattern);
    let outcome = network.infer(&pattern, scratch);
    scratch.pattern = pattern;
    Ok(outcome.winner.map(|k| FeatureEvent {
        x: event.x,
        y: event.y,
        t: event.t,
        i: event.i,
        feature_id: k,
    }))
}

/// Stream every ON event of `recordings` through a learning network, one
/// fresh event surface per recording, then freeze it.
pub fn train_features(
    recordings: &[&Recording],
    surface_config: SurfaceConfig,
    mut network: SkanNetwork,
) -> Result<SkanNetwork, SkanError> {
    network.learning = true;
    let mut scratch = SkanScratch::default();
    let mut surface = MemorySurface::new(surface_config)?;
    let side = network.config.side;
    let on: Vec<Recording> = recordings.iter().map(|r| r.on_events()).collect();
    let total = on.iter().map(|r| r.len()).sum::<usize>().max(1) as f64;
    let drop = 1.0 - network.config.anneal_final;
    let mut seen = 0usize;
    for rec in &on {
        surface.reset();
        for e in &rec.events {
            surface.absorb(e)?;
            load_event_pattern(side, e, &surface, &mut scratch)?;
            let pattern = std::mem::take(&mut scratch.pattern);
            let rate = 1.0 - drop * seen as f64 / total;
            network.step_at_rate(&pattern, &mut scratch, rate);
            scratch.pattern = pattern;
            seen += 1;
        }
    }
    network.learning = false;
    Ok(network)
}

/// Sample up to `count` spike patterns from the recordings' ON events at an
/// even stride.
pub fn sample_patterns(
    recordings: &[&Recording],
    surface_config: SurfaceConfig,
    side: usize,
    count: usize,
) -> Result<Vec<SpikePattern>, SkanError> {
    let total: usize = recordings.iter().map(|r| r.len()).sum();
    let stride = (total / count.max(1)).max(1);
    let mut out = Vec::with_capacity(count);
    let mut scratch = SkanScratch::default();
    let mut surface = MemorySurface::new(surface_config)?;
    let mut seen = 0usize;
    for rec in recordings {
        surface.reset();
        for e in rec.on_events().events.iter() {
            surface.absorb(e)?;
            if seen % stride == 0 && out.len() < count {
                load_event_pattern(side, e, &surface, &mut scratch)?;
                out.push(scratch.pattern.clone());
            }
            seen += 1;
        }
    }
    Ok(out)
}

/// How a random network's thresholds are calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomThreshold {
    /// Each neuron just fires on the mean calibration patch. On large patches
    /// the mean has many weak channels, so real patches rarely reach these
    /// thresholds.
    #[default]
    MeanPatch,
    /// Median of each neuron's peak soma over the calibration patches, so it
    /// fires on about half of typical inputs.
    Median,
}

/// Element-wise mean of the patch values behind `patterns`, re-encoded.
pub fn mean_pattern(patterns: &[SpikePattern], channels: usize) -> Result<SpikePattern, SkanError> {
    let mut mean = vec![0.0; channels];
    for p in patterns {
        for &(c, d) in &p.spikes {
            if let Some(m) = mean.get_mut(c as usize) {
                *m += (255 - d) as f64 / 255.0;
            }
        }
    }
    let n = patterns.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    encode_patch(&mean)
}

/// A frozen network with uniform random widths and thresholds calibrated on
/// `calibration` by `rule`. Without calibration patterns the initial
/// threshold is kept.
pub fn random_features(
    config: SkanConfig,
    seed: u64,
    calibration: &[SpikePattern],
    rule: RandomThreshold,
) -> Result<SkanNetwork, SkanError> {
    let mut net = SkanNetwork::new(SkanConfig { seed, ..config })?;
    net.learning = false;
    let calibration: Vec<&SpikePattern> = calibration.iter().filter(|p| !p.is_empty()).collect();
    if calibration.is_empty() {
        return Ok(net);
    }
    let floor = net.theta_floor();
    let mut scratch = SkanScratch::default();
    match rule {
        RandomThreshold::MeanPatch => {
            let owned: Vec<SpikePattern> = calibration.into_iter().cloned().collect();
            let mean = mean_pattern(&owned, config.channels())?;
            if mean.is_empty() {
                return Ok(net);
            }
            let horizon = net.load(&mean, &mut scratch);
            let peaks: Vec<f64> = (0..config.neurons).map(|k| net.soma_max(k, horizon, &scratch)).collect();
            net.unload(&mean, &mut scratch);
            for (k, peak) in peaks.into_iter().enumerate() {
                net.thresholds[k] = peak.max(floor);
            }
        }
        RandomThreshold::Median => {
            let mut peaks = vec![Vec::with_capacity(calibration.len()); config.neurons];
            for pattern in calibration {
                let horizon = net.load(pattern, &mut scratch);
                for (k, p) in peaks.iter_mut().enumerate() {
                    p.push(net.soma_max(k, horizon, &scratch));
                }
                net.unload(pattern, &mut scratch);
            }
            for (k, mut p) in peaks.into_iter().enumerate() {
                p.sort_by(f64::total_cmp);
                net.thresholds[k] = p[p.len() / 2].max(floor);
            }
        }
    }
    Ok(net)
}

/// Minimum-cost one-to-one assignment (Hungarian method) over a square cost
/// matrix; returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Mean absolute width difference between best-matched neurons of two
/// equally shaped networks.
pub fn feature_set_distance(a: &SkanNetwork, b: &SkanNetwork) -> f64 {
    assert_eq!(a.widths.len(), b.widths.len(), "networks differ in shape");
    let n = a.neurons();
    let c = a.config.channels();
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let wa = &a.widths[i * c..(i + 1) * c];
                    let wb = &b.widths[j * c..(j + 1) * c];
                    wa.iter()
                        .zip(wb)
                        .map(|(&x, &y)| (x as f64 - y as f64).abs())
                        .sum::<f64>()
                        / c as f64
                })
                .collect()
        })
        .collect();
    let assignment = min_cost_assignment(&cost);
    assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / n as f64
}
