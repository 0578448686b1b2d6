//! Single-target tracking from smoothed row and column projections of the
//! event memory surface.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aer::{Recording, SensorDims};
use crate::surface::{MemorySurface, SurfaceConfig, SurfaceError};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("velocity undefined: {0}")]
    UndefinedVelocity(String),
    #[error("slope undefined: {0}")]
    UndefinedSlope(String),
    #[error("invalid tracker config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// One value per sensor row.
    Rows,
    /// One value per sensor column.
    Columns,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Moving-average length in pixels.
    pub smoothing_window: usize,
    /// Detection level on the max-normalized profile.
    pub threshold: f64,
    /// Microseconds between frames.
    pub sample_interval_us: u64,
    /// The smoothed profile must peak at least this high (surface units)
    /// before normalization for a detection to count. Max normalization alone
    /// turns a single stray pixel into a full-height peak.
    pub min_peak: f64,
    /// Half the baseline of the central difference used for midpoint
    /// velocity, microseconds.
    pub velocity_half_baseline_us: u64,
    /// Length of the early window used by the activation/velocity fit.
    pub activation_window_us: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            smoothing_window: 8,
            threshold: 0.1,
            sample_interval_us: 3000,
            min_peak: 1.0,
            velocity_half_baseline_us: 24_000,
            activation_window_us: 50_000,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        if self.smoothing_window == 0 {
            return Err(TrackError::Config("smoothing_window must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(TrackError::Config("threshold must lie in (0, 1)".into()));
        }
        if self.sample_interval_us == 0 {
            return Err(TrackError::Config("sample_interval_us must be positive".into()));
        }
        Ok(())
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_lo: u16,
    pub x_hi: u16,
    pub y_lo: u16,
    pub y_hi: u16,
}

impl BBox {
    pub fn midpoint(&self) -> (f64, f64) {
        (
            (self.x_lo as f64 + self.x_hi as f64) / 2.0,
            (self.y_lo as f64 + self.y_hi as f64) / 2.0,
        )
    }

    pub fn width(&self) -> usize {
        (self.x_hi - self.x_lo) as usize + 1
    }

    pub fn height(&self) -> usize {
        (self.y_hi - self.y_lo) as usize + 1
    }

    pub fn touches_border(&self, dims: SensorDims) -> bool {
        self.x_lo == 0 || self.y_lo == 0 || self.x_hi + 1 >= dims.width || self.y_hi + 1 >= dims.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    /// Frame time, microseconds.
    pub instant: u64,
    /// Index of the last event absorbed before this frame, if any.
    pub last_index: Option<u64>,
    pub bbox: Option<BBox>,
}

impl TrackState {
    pub fn midpoint(&self) -> Option<(f64, f64)> {
        self.bbox.map(|b| b.midpoint())
    }
}

/// Raw per-row or per-column sums of surface values at `now`.
pub fn project(surface: &MemorySurface, axis: Axis, now: u64) -> Result<Vec<f64>, SurfaceError> {
    let dims = surface.dims();
    let len = match axis {
        Axis::Rows => dims.height,
        Axis::Columns => dims.width,
    } as usize;
    let mut out = vec![0.0; len];
    surface.for_each_active(now, |x, y, v| match axis {
        Axis::Rows => out[y as usize] += v,
        Axis::Columns => out[x as usize] += v,
    })?;
    Ok(out)
}

/// Centred moving average; the window shrinks at the borders.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let n = v.len();
    let window = window.max(1);
    let back = (window - 1) / 2;
    let ahead = window - 1 - back;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &x in v {
        prefix.push(prefix.last().unwrap() + x);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + ahead).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Divide by the maximum; an all-zero vector stays all-zero.
pub fn normalize_max(v: &mut [f64]) {
    let max = v.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
    }
}

/// Smoothed and max-normalized projection, together with the peak of the
/// smoothed profile before normalization.
pub fn project_smooth_peak(
    surface: &MemorySurface,
    axis: Axis,
    now: u64,
    window: usize,
) -> Result<(Vec<f64>, f64), SurfaceError> {
    let mut v = moving_average(&project(surface, axis, now)?, window);
    let peak = v.iter().cloned().fold(0.0, f64::max);
    normalize_max(&mut v);
    Ok((v, peak))
}

pub fn project_and_smooth(
    surface: &MemorySurface,
    axis: Axis,
    now: u64,
    window: usize,
) -> Result<Vec<f64>, SurfaceError> {
    Ok(project_smooth_peak(surface, axis, now, window)?.0)
}

/// Bounds of the longest run of samples at or above `threshold`; the
/// earliest such run wins ties.
pub fn detect_bounds(profile: &[f64], threshold: f64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, &v) in profile.iter().chain(std::iter::once(&f64::NEG_INFINITY)).enumerate() {
        match (v >= threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let len = i - s;
                if best.is_none_or(|(a, b)| len > b - a + 1) {
                    best = Some((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// Detect the target box on a surface at `now`.
pub fn detect_box(
    surface: &MemorySurface,
    now: u64,
    config: &TrackerConfig,
) -> Result<Option<BBox>, SurfaceError> {
    let (rows, row_peak) = project_smooth_peak(surface, Axis::Rows, now, config.smoothing_window)?;
    let (cols, col_peak) =
        project_smooth_peak(surface, Axis::Columns, now, config.smoothing_window)?;
    if row_peak < config.min_peak || col_peak < config.min_peak {
        return Ok(None);
    }
    let (Some((y_lo, y_hi)), Some((x_lo, x_hi))) = (
        detect_bounds(&rows, config.threshold),
        detect_bounds(&cols, config.threshold),
    ) else {
        return Ok(None);
    };
    Ok(Some(BBox {
        x_lo: x_lo as u16,
        x_hi: x_hi as u16,
        y_lo: y_lo as u16,
        y_hi: y_hi as u16,
    }))
}

/// Frame instants for a recording: `first + k * interval` for
/// `k = 1..=floor(span / interval)`.
pub fn frame_instants(recording: &Recording, interval: u64) -> Vec<u64> {
    match recording.span() {
        Some((a, b)) => (1..=(b - a) / interval).map(|k| a + k * interval).collect(),
        None => Vec::new(),
    }
}

/// The query instant for a surface after absorbing events up to `t`.
fn query_instant(surface: &MemorySurface, t: u64) -> Option<u64> {
    match surface.config().basis {
        crate::surface::DecayBasis::Time => Some(t),
        crate::surface::DecayBasis::Index => surface.latest_instant(),
    }
}

/// Track the target through a recording's ON events, one frame per
/// `sample_interval_us`.
pub fn track(
    recording: &Recording,
    surface_config: SurfaceConfig,
    config: &TrackerConfig,
) -> Result<Vec<TrackState>, TrackError> {
    config.validate()?;
    let on = recording.on_events();
    let mut surface = MemorySurface::new(surface_config)?;
    let mut out = Vec::new();
    let mut cursor = 0;
    for instant in frame_instants(recording, config.sample_interval_us) {
        while cursor < on.events.len() && on.events[cursor].t <= instant {
            surface.absorb(&on.events[cursor])?;
            cursor += 1;
        }
        let bbox = match query_instant(&surface, instant) {
            Some(now) => detect_box(&surface, now, config)?,
            None => None,
        };
        out.push(TrackState {
            instant,
            last_index: cursor.checked_sub(1).map(|c| c as u64),
            bbox,
        });
    }
    Ok(out)
}

/// Track with frames taken right after the ON events at the given indices
/// (sorted ascending, in the ON-only index space).
pub fn track_at_indices(
    recording: &Recording,
    surface_config: SurfaceConfig,
    config: &TrackerConfig,
    indices: &[u64],
) -> Result<Vec<TrackState>, TrackError> {
    config.validate()?;
    let on = recording.on_events();
    let mut surface = MemorySurface::new(surface_config)?;
    let mut out = Vec::with_capacity(indices.len());
    let mut cursor = 0usize;
    for &idx in indices {
        while cursor < on.events.len() && (cursor as u64) <= idx {
            surface.absorb(&on.events[cursor])?;
            cursor += 1;
        }
        let Some(last) = cursor.checked_sub(1) else {
            continue;
        };
        let t = on.events[last].t;
        let now = surface_config.basis.instant(t, last as u64);
        out.push(TrackState {
            instant: t,
            last_index: Some(last as u64),
            bbox: detect_box(&surface, now, config)?,
        });
    }
    Ok(out)
}

/// Vertical velocity in pixels per second at the temporal midpoint of
/// `span`, by central difference between the valid frames nearest to
/// `mid - half_baseline` (before the midpoint) and `mid + half_baseline`
/// (after it).
pub fn midpoint_velocity(
    track: &[TrackState],
    span: (u64, u64),
    half_baseline_us: u64,
) -> Result<f64, TrackError> {
    let mid = (span.0 + span.1) as f64 / 2.0;
    let (before_target, after_target) = (mid - half_baseline_us as f64, mid + half_baseline_us as f64);
    let nearest = |pred: &dyn Fn(f64) -> bool, target: f64| {
        track
            .iter()
            .filter(|s| s.bbox.is_some() && pred(s.instant as f64))
            .min_by(|a, b| {
                let da = (a.instant as f64 - target).abs();
                let db = (b.instant as f64 - target).abs();
                da.total_cmp(&db).then(a.instant.cmp(&b.instant))
            })
    };
    let before = nearest(&|t| t <= mid, before_target);
    let after = nearest(&|t| t > mid, after_target);
    match (before, after) {
        (Some(a), Some(b)) => {
            let ya = a.midpoint().unwrap().1;
            let yb = b.midpoint().unwrap().1;
            Ok((yb - ya) / ((b.instant - a.instant) as f64 * 1e-6))
        }
        _ => Err(TrackError::UndefinedVelocity(
            "need valid frames on both sides of the midpoint".into(),
        )),
    }
}

/// Least-squares slope of y on x.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Result<f64, TrackError> {
    if points.len() < 2 {
        return Err(TrackError::UndefinedSlope("need at least two points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * n * mx.abs().max(1.0) {
        return Err(TrackError::UndefinedSlope("all x values equal".into()));
    }
    Ok(sxy / sxx)
}

/// Velocity and early activation trend of one recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationVelocity {
    /// Midpoint velocity, pixels per second.
    pub velocity: f64,
    /// Mean rate of change of total activation over the early window, per
    /// second.
    pub activation_rate: f64,
}

/// Midpoint velocity plus the mean rate of change of total activation over
/// the first `activation_window_us` after the first valid detection.
pub fn activation_velocity(
    recording: &Recording,
    surface_config: SurfaceConfig,
    config: &TrackerConfig,
) -> Result<ActivationVelocity, TrackError> {
    config.validate()?;
    let on = recording.on_events();
    let mut surface = MemorySurface::new(surface_config)?;
    let mut states = Vec::new();
    let mut activation = Vec::new();
    let mut cursor = 0;
    for instant in frame_instants(recording, config.sample_interval_us) {
        while cursor < on.events.len() && on.events[cursor].t <= instant {
            surface.absorb(&on.events[cursor])?;
            cursor += 1;
        }
        let now = query_instant(&surface, instant);
        let bbox = match now {
            Some(now) => detect_box(&surface, now, config)?,
            None => None,
        };
        let total = match now {
            Some(now) => surface.total_activation(now)?,
            None => 0.0,
        };
        states.push(TrackState {
            instant,
            last_index: cursor.checked_sub(1).map(|c| c as u64),
            bbox,
        });
        activation.push((instant, total));
    }
    let span = recording
        .span()
        .ok_or_else(|| TrackError::UndefinedVelocity("empty recording".into()))?;
    let velocity = midpoint_velocity(&states, span, config.velocity_half_baseline_us)?;
    let first = states
        .iter()
        .find(|s| s.bbox.is_some())
        .ok_or_else(|| TrackError::UndefinedVelocity("no valid detection".into()))?
        .instant;
    let window: Vec<&(u64, f64)> = activation
        .iter()
        .filter(|(t, _)| *t >= first && *t <= first + config.activation_window_us)
        .collect();
    let activation_rate = match (window.first(), window.last()) {
        (Some(a), Some(b)) if b.0 > a.0 => (b.1 - a.1) / ((b.0 - a.0) as f64 * 1e-6),
        _ => 0.0,
    };
    Ok(ActivationVelocity {
        velocity,
        activation_rate,
    })
}

/// Per-class slope of early activation rate against midpoint velocity.
/// Recordings whose velocity cannot be estimated are skipped.
pub fn activation_velocity_fit(
    recordings: &[Recording],
    num_classes: usize,
    surface_config: SurfaceConfig,
    config: &TrackerConfig,
) -> Result<Vec<f64>, TrackError> {
    let mut points = vec![Vec::new(); num_classes];
    for rec in recordings {
        let Some(label) = rec.label else { continue };
        match activation_velocity(rec, surface_config, config) {
            Ok(av) => points[label].push((av.velocity, av.activation_rate)),
            Err(TrackError::UndefinedVelocity(_)) => {}
            Err(e) => return Err(e),
        }
    }
    points.iter().map(|p| least_squares_slope(p)).collect()
}

/// CSV rows `recording_id,frame_instant,x_lo,x_hi,y_lo,y_hi,mid_x,mid_y`;
/// frames without a box leave the box columns empty.
pub fn write_track_csv<W: Write + ?Sized>(
    out: &mut W,
    recording_id: &str,
    track: &[TrackState],
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(out, "recording_id,frame_instant,x_lo,x_hi,y_lo,y_hi,mid_x,mid_y")?;
    }
    for s in track {
        match s.bbox {
            Some(b) => {
                let (mx, my) = b.midpoint();
                writeln!(
                    out,
                    "{recording_id},{},{},{},{},{},{mx},{my}",
                    s.instant, b.x_lo, b.x_hi, b.y_lo, b.y_hi
                )?
            }
            None => writeln!(out, "{recording_id},{},,,,,,", s.instant)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aer::{Event, Polarity, SensorDims};
    use crate::surface::{DecayBasis, Kernel};

    fn surface() -> MemorySurface {
        MemorySurface::new(SurfaceConfig {
            basis: DecayBasis::Time,
            kernel: Kernel::Bin,
            tau_us: 3000.0,
            n_e: 50.0,
            dims: SensorDims::new(20, 10),
        })
        .unwrap()
    }

    #[test]
    fn empty_surface_projects_to_zero() {
        let s = surface();
        assert!(project_and_smooth(&s, Axis::Rows, 0, 8).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_window_one_is_one_hot() {
        let mut s = surface();
        s.absorb(&Event { x: 4, y: 3, t: 0, p: Polarity::On, i: 0 }).unwrap();
        let cols = project_and_smooth(&s, Axis::Columns, 0, 1).unwrap();
        let mut expect = vec![0.0; 20];
        expect[4] = 1.0;
        assert_eq!(cols, expect);
    }

    #[test]
    fn moving_average_matches_direct_convolution() {
        let mut impulse = vec![0.0; 30];
        impulse[15] = 1.0;
        impulse[1] = 0.5;
        for window in [1, 2, 3, 8] {
            let got = moving_average(&impulse, window);
            let back = (window - 1) / 2;
            for i in 0..30 {
                let lo = i as i64 - back as i64;
                let hi = lo + window as i64 - 1;
                let (mut s, mut n) = (0.0, 0);
                for j in lo..=hi {
                    if j >= 0 && j < 30 {
                        s += impulse[j as usize];
                        n += 1;
                    }
                }
                assert!((got[i] - s / n as f64).abs() < 1e-12, "w={window} i={i}");
            }
        }
        // an 8-tap box spreads an interior impulse over 8 samples
        let smoothed = moving_average(&impulse, 8);
        assert_eq!(smoothed.iter().filter(|&&v| (v - 0.125).abs() < 1e-12).count(), 8);
    }

    #[test]
    fn bounds_rules() {
        assert_eq!(detect_bounds(&[0.0; 5], 0.1), None);
        assert_eq!(detect_bounds(&[0.2, 0.2, 0.05], 0.1), Some((0, 1)));
        let mut p = vec![0.0; 20];
        p[1..4].iter_mut().for_each(|v| *v = 0.5);
        p[8..15].iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(detect_bounds(&p, 0.1), Some((8, 14)));
        assert_eq!(detect_bounds(&[1.0, 0.0, 1.0], 0.1), Some((0, 0)));
        assert_eq!(detect_bounds(&[0.0, 0.1], 0.1), Some((1, 1)));
    }

    #[test]
    fn frame_count_is_floor_of_span() {
        let ev = |t, i| Event { x: 0, y: 0, t, p: Polarity::On, i };
        let rec = Recording::new(vec![ev(100, 0), ev(9_200, 1)], SensorDims::new(20, 10));
        let cfg = SurfaceConfig { dims: rec.dims, ..Default::default() };
        let states = track(&rec, cfg, &TrackerConfig::default()).unwrap();
        assert_eq!(states.len(), 3);
        assert_eq!(states[0].instant, 3_100);
    }

    #[test]
    fn velocity_central_difference() {
        let st = |instant: u64, y: u16| TrackState {
            instant,
            last_index: None,
            bbox: Some(BBox { x_lo: 0, x_hi: 2, y_lo: y, y_hi: y + 4 }),
        };
        let track: Vec<TrackState> = (0..20).map(|k| st(k * 3000, (k * 3) as u16)).collect();
        let v = midpoint_velocity(&track, (0, 57_000), 9000).unwrap();
        assert!((v - 1000.0).abs() < 1e-9);
        let flat: Vec<TrackState> = (0..20).map(|k| st(k * 3000, 5)).collect();
        assert_eq!(midpoint_velocity(&flat, (0, 57_000), 9000).unwrap(), 0.0);
        assert!(midpoint_velocity(&track[..5], (0, 57_000), 9000).is_err());
    }

    #[test]
    fn slope_fit_cases() {
        assert_eq!(least_squares_slope(&[(1.0, 2.0), (3.0, 8.0)]).unwrap(), 3.0);
        assert_eq!(least_squares_slope(&[(1.0, 4.0), (2.0, 4.0), (5.0, 4.0)]).unwrap(), 0.0);
        assert!(least_squares_slope(&[(2.0, 1.0), (2.0, 3.0)]).is_err());
        assert!(least_squares_slope(&[(2.0, 1.0)]).is_err());
    }

    #[test]
    fn csv_rows() {
        let tr = vec![
            TrackState { instant: 3000, last_index: Some(4), bbox: None },
            TrackState {
                instant: 6000,
                last_index: Some(9),
                bbox: Some(BBox { x_lo: 1, x_hi: 3, y_lo: 2, y_hi: 5 }),
            },
        ];
        let mut buf = Vec::new();
        write_track_csv(&mut buf, "a/0001", &tr, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "a/0001,3000,,,,,,");
        assert_eq!(lines[2], "a/0001,6000,1,3,2,5,2,3.5");
    }
}
