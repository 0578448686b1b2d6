//! Synthetic falling-silhouette recordings.
//!
//! A binary silhouette falls through the sensor. Every 100 µs micro-step the
//! silhouette's integer placement is recomputed from its trajectory; pixels
//! whose occupancy differs from the previous placement emit one ON event,
//! delayed by a uniform per-event jitter. Optional background noise is a
//! homogeneous Poisson process over the whole frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aer::{flip_horizontal, Event, Polarity, Recording, SensorDims};

pub const MICRO_STEP_US: u64 = 100;
pub const NUM_CLASSES: usize = 4;
/// Relative wingspans of the four silhouette classes.
pub const WINGSPANS: [f64; NUM_CLASSES] = [9.1, 7.5, 10.3, 9.0];
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["mig31", "f117", "su24", "su35"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid drop spec: {0}")]
    InvalidSpec(String),
    #[error("warp is not strictly increasing: f({a}) = {fa} but f({b}) = {fb}")]
    NonIncreasingWarp { a: u64, b: u64, fa: f64, fb: f64 },
}

/// Right halves (x >= 0) of the class outlines, nose first, in wingspan
/// units. The nose points down, the direction of travel.
const OUTLINES: [&[(f64, f64)]; NUM_CLASSES] = [
    // long fuselage, trapezoid wings, twin tail
    &[
        (0.0, 0.80),
        (0.06, 0.55),
        (0.08, 0.10),
        (0.50, -0.22),
        (0.50, -0.34),
        (0.10, -0.30),
        (0.10, -0.55),
        (0.28, -0.72),
        (0.28, -0.80),
        (0.0, -0.78),
    ],
    // faceted arrowhead
    &[
        (0.0, 0.72),
        (0.50, -0.42),
        (0.38, -0.48),
        (0.20, -0.38),
        (0.25, -0.62),
        (0.10, -0.55),
        (0.0, -0.45),
    ],
    // broad swept wings, large tailplane
    &[
        (0.0, 0.70),
        (0.06, 0.45),
        (0.07, 0.05),
        (0.50, -0.12),
        (0.48, -0.22),
        (0.08, -0.25),
        (0.09, -0.45),
        (0.34, -0.60),
        (0.34, -0.70),
        (0.0, -0.68),
    ],
    // canards ahead of the wing
    &[
        (0.0, 0.72),
        (0.05, 0.50),
        (0.22, 0.30),
        (0.22, 0.24),
        (0.07, 0.22),
        (0.08, 0.0),
        (0.50, -0.28),
        (0.50, -0.36),
        (0.10, -0.38),
        (0.10, -0.48),
        (0.26, -0.62),
        (0.26, -0.68),
        (0.0, -0.64),
    ],
];

/// A binary bitmap, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl ShapeMask {
    /// Mean position of the set pixels, relative to the mask origin.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.bits[y * self.width + x] {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
        } else {
            (sx / n as f64, sy / n as f64)
        }
    }

    #[inline]
    pub fn get(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Rasterize a class outline: `span_px` is the wingspan in pixels and
    /// `rotation_deg` turns the silhouette clockwise on the sensor.
    pub fn airplane(class: usize, span_px: f64, rotation_deg: f64) -> ShapeMask {
        let half = OUTLINES[class % NUM_CLASSES];
        let mut poly: Vec<(f64, f64)> = half.to_vec();
        poly.extend(half.iter().rev().filter(|p| p.0 != 0.0).map(|&(x, y)| (-x, y)));
        let (s, c) = rotation_deg.to_radians().sin_cos();
        let pts: Vec<(f64, f64)> = poly
            .iter()
            .map(|&(x, y)| {
                let (x, y) = (x * span_px, y * span_px);
                (c * x - s * y, s * x + c * y)
            })
            .collect();
        let min_x = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let width = (max_x - min_x).ceil() as usize + 1;
        let height = (max_y - min_y).ceil() as usize + 1;
        let mut bits = vec![false; width * height];
        for row in 0..height {
            for col in 0..width {
                let p = (min_x + col as f64, min_y + row as f64);
                bits[row * width + col] = point_in_polygon(p, &pts);
            }
        }
        ShapeMask { width, height, bits }.trimmed()
    }

    /// Crop to the tight bounding box of set bits.
    fn trimmed(self) -> ShapeMask {
        let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.bits[y * self.width + x] {
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX {
            return ShapeMask {
                width: 0,
                height: 0,
                bits: vec![],
            };
        }
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut bits = Vec::with_capacity(w * h);
        for y in y0..=y1 {
            bits.extend_from_slice(&self.bits[y * self.width + x0..=y * self.width + x1]);
        }
        ShapeMask {
            width: w,
            height: h,
            bits,
        }
    }
}

fn point_in_polygon((px, py): (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropSpec {
    /// Silhouette class, 0..NUM_CLASSES.
    pub class: usize,
    /// Silhouette centre at t = 0, pixels.
    pub initial_position: (f64, f64),
    /// Downward velocity at t = 0, pixels per second.
    pub initial_velocity: f64,
    /// Downward acceleration, pixels per second squared.
    pub acceleration: f64,
    /// Multiplier on the class wingspan.
    pub scale: f64,
    pub rotation_deg: f64,
    /// Spurious events per second over the whole frame.
    pub noise_rate: f64,
    /// Upper bound on per-event emission delay, microseconds.
    pub jitter_us: u64,
    /// Simulation stops here if the silhouette has not left the frame.
    pub max_duration_us: u64,
    /// Wingspan in pixels of a scale-1 silhouette with relative span 10.
    pub px_per_span_unit: f64,
    pub seed: u64,
    pub dims: SensorDims,
}

impl DropSpec {
    pub fn span_px(&self) -> f64 {
        WINGSPANS[self.class % NUM_CLASSES] * self.px_per_span_unit * self.scale / 10.0
    }

    pub fn mask(&self) -> ShapeMask {
        ShapeMask::airplane(self.class, self.span_px(), self.rotation_deg)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.class >= NUM_CLASSES {
            return Err(SynthError::InvalidSpec(format!("class {} out of range", self.class)));
        }
        if !(self.noise_rate >= 0.0) || !(self.acceleration >= 0.0) {
            return Err(SynthError::InvalidSpec(
                "noise_rate and acceleration must be non-negative".into(),
            ));
        }
        if !(self.scale > 0.0) {
            return Err(SynthError::InvalidSpec("scale must be positive".into()));
        }
        let mask = self.mask();
        if mask.width > self.dims.width as usize {
            return Err(SynthError::InvalidSpec(format!(
                "silhouette width {} exceeds sensor width {}",
                mask.width, self.dims.width
            )));
        }
        Ok(())
    }

    /// Vertical centre position at time `t_us`.
    pub fn center_y(&self, t_us: u64) -> f64 {
        let t = t_us as f64 * 1e-6;
        self.initial_position.1 + self.initial_velocity * t + 0.5 * self.acceleration * t * t
    }

    pub fn velocity_at(&self, t_us: u64) -> f64 {
        self.initial_velocity + self.acceleration * t_us as f64 * 1e-6
    }
}

/// Ground truth at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t_us: u64,
    /// Centroid of the silhouette pixels in sensor coordinates.
    pub center: (f64, f64),
    /// (x_lo, x_hi, y_lo, y_hi), possibly partly outside the sensor.
    pub bbox: (i64, i64, i64, i64),
    pub velocity: f64,
    /// Some pixel of the silhouette is on the sensor.
    pub visible: bool,
    /// The silhouette lies entirely on the sensor.
    pub in_view: bool,
}

#[derive(Debug, Clone)]
pub struct GeneratedDrop {
    pub recording: Recording,
    /// One sample per millisecond of the simulation.
    pub trajectory: Vec<TruthSample>,
    /// First and last micro-step at which the silhouette was visible.
    pub crossing: Option<(u64, u64)>,
}

impl GeneratedDrop {
    pub fn crossing_duration_us(&self) -> Option<u64> {
        self.crossing.map(|(a, b)| b - a)
    }
}

fn placement(spec: &DropSpec, mask: &ShapeMask, t_us: u64) -> (i64, i64) {
    let cx = spec.initial_position.0 - (mask.width as f64 - 1.0) / 2.0;
    let cy = spec.center_y(t_us) - (mask.height as f64 - 1.0) / 2.0;
    (cx.round() as i64, cy.round() as i64)
}

pub fn generate_drop(spec: &DropSpec) -> Result<GeneratedDrop, SynthError> {
    spec.validate()?;
    let mask = spec.mask();
    let dims = spec.dims;
    let (w, h) = (dims.width as i64, dims.height as i64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut raw: Vec<(u64, u16, u16, Polarity)> = Vec::new();
    let mut trajectory = Vec::new();
    let mut crossing: Option<(u64, u64)> = None;
    let centroid = mask.centroid();
    let mut prev = placement(spec, &mask, 0);
    let mut t = 0;
    let mut end_t = spec.max_duration_us;
    loop {
        let cur = placement(spec, &mask, t);
        let (mx, my) = (mask.width as i64, mask.height as i64);
        let visible = cur.0 < w && cur.0 + mx > 0 && cur.1 < h && cur.1 + my > 0;
        if visible {
            crossing = Some((crossing.map_or(t, |c| c.0), t));
        }
        if t % 1000 == 0 {
            let bbox = (cur.0, cur.0 + mx - 1, cur.1, cur.1 + my - 1);
            trajectory.push(TruthSample {
                t_us: t,
                center: (cur.0 as f64 + centroid.0, cur.1 as f64 + centroid.1),
                bbox,
                velocity: spec.velocity_at(t),
                visible,
                in_view: bbox.0 >= 0 && bbox.1 < w && bbox.2 >= 0 && bbox.3 < h,
            });
        }
        if cur != prev {
            let x0 = prev.0.min(cur.0).max(0);
            let x1 = (prev.0.max(cur.0) + mx).min(w);
            let y0 = prev.1.min(cur.1).max(0);
            let y1 = (prev.1.max(cur.1) + my).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let before = mask.get(x - prev.0, y - prev.1);
                    let after = mask.get(x - cur.0, y - cur.1);
                    if before != after {
                        let jitter = if spec.jitter_us > 0 {
                            rng.random_range(0..=spec.jitter_us)
                        } else {
                            0
                        };
                        raw.push((t + jitter, x as u16, y as u16, Polarity::On));
                    }
                }
            }
            prev = cur;
        }
        // Stop once the silhouette is entirely below the frame.
        if cur.1 >= h {
            end_t = t;
            break;
        }
        if t >= spec.max_duration_us {
            break;
        }
        t += MICRO_STEP_US;
    }
    if crossing.is_none() {
        log::warn!("drop seed {}: silhouette never entered the frame", spec.seed);
    }

    if spec.noise_rate > 0.0 && end_t > 0 {
        let mean = spec.noise_rate * end_t as f64 * 1e-6;
        let count = Poisson::new(mean).map(|p| p.sample(&mut rng) as u64).unwrap_or(0);
        for _ in 0..count {
            let nt = rng.random_range(0..=end_t);
            let nx = rng.random_range(0..dims.width);
            let ny = rng.random_range(0..dims.height);
            let p = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
            raw.push((nt, nx, ny, p));
        }
    }

    raw.sort_by_key(|e| e.0);
    let events = raw
        .into_iter()
        .enumerate()
        .map(|(i, (t, x, y, p))| Event { x, y, t, p, i: i as u64 })
        .collect();
    let recording = Recording {
        events,
        dims,
        label: Some(spec.class),
        meta: format!("synth:seed={}", spec.seed),
    };
    Ok(GeneratedDrop {
        recording,
        trajectory,
        crossing,
    })
}

/// Re-time every event through a warp over microseconds. The warp must be
/// strictly increasing across the recording's distinct timestamps; results
/// are rounded to whole microseconds, so ties may appear but order never
/// changes.
pub fn time_warp<F: Fn(f64) -> f64>(rec: &Recording, warp: F) -> Result<Recording, SynthError> {
    let mut out = rec.clone();
    let mut prev: Option<(u64, f64)> = None;
    for e in out.events.iter_mut() {
        let w = warp(e.t as f64);
        if let Some((pt, pw)) = prev {
            if (e.t > pt && !(w > pw)) || (e.t == pt && w != pw) {
                return Err(SynthError::NonIncreasingWarp {
                    a: pt,
                    b: e.t,
                    fa: pw,
                    fb: w,
                });
            }
        }
        if !(w >= 0.0) {
            return Err(SynthError::NonIncreasingWarp {
                a: e.t,
                b: e.t,
                fa: w,
                fb: w,
            });
        }
        prev = Some((e.t, w));
        e.t = w.round() as u64;
    }
    Ok(out)
}

/// Distribution of random drops. Defaults give a mean crossing of roughly
/// 242 ms on a 64×128 sensor, with the target fully in view for at least
/// 32 frames of 3 ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropSampler {
    pub dims: SensorDims,
    pub velocity_range: (f64, f64),
    pub acceleration_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub rotation_range: (f64, f64),
    /// Fraction of the sensor width left free at either side for entry points.
    pub entry_margin: f64,
    /// Extra rows above the frame at t = 0, random up to this value.
    pub lead_in_px: f64,
    pub noise_rate: f64,
    pub jitter_us: u64,
    pub px_per_span_unit: f64,
    pub max_duration_us: u64,
}

impl Default for DropSampler {
    fn default() -> Self {
        DropSampler {
            dims: SensorDims::new(64, 128),
            velocity_range: (205.0, 390.0),
            acceleration_range: (1700.0, 3400.0),
            scale_range: (0.85, 1.15),
            rotation_range: (-20.0, 20.0),
            entry_margin: 0.1,
            lead_in_px: 4.0,
            noise_rate: 100.0,
            jitter_us: 200,
            px_per_span_unit: 24.0,
            max_duration_us: 1_000_000,
        }
    }
}

impl DropSampler {
    pub fn sample<R: Rng>(&self, class: usize, rng: &mut R) -> DropSpec {
        let uniform = |rng: &mut R, (a, b): (f64, f64)| {
            if b > a {
                rng.random_range(a..b)
            } else {
                a
            }
        };
        let mut spec = DropSpec {
            class,
            initial_position: (0.0, 0.0),
            initial_velocity: uniform(rng, self.velocity_range),
            acceleration: uniform(rng, self.acceleration_range),
            scale: uniform(rng, self.scale_range),
            rotation_deg: uniform(rng, self.rotation_range),
            noise_rate: self.noise_rate,
            jitter_us: self.jitter_us,
            max_duration_us: self.max_duration_us,
            px_per_span_unit: self.px_per_span_unit,
            seed: rng.random(),
            dims: self.dims,
        };
        let mask = spec.mask();
        let width = self.dims.width as f64;
        let half = mask.width as f64 / 2.0;
        let lo = half + self.entry_margin * width;
        let hi = width - half - self.entry_margin * width;
        let x = if hi > lo { rng.random_range(lo..hi) } else { width / 2.0 };
        let lead = uniform(rng, (0.0, self.lead_in_px));
        spec.initial_position = (x, -(mask.height as f64) / 2.0 - 1.0 - lead);
        spec
    }
}

/// One generated recording with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub class: usize,
    pub flipped: bool,
    pub spec: DropSpec,
    pub crossing_us: Option<(u64, u64)>,
    pub trajectory: Vec<TruthSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub seed: u64,
    pub sampler: DropSampler,
    /// Emission jitter is not calibrated against real sensors.
    pub jitter_note: String,
    pub entries: Vec<ManifestEntry>,
}

/// A generated dataset ready for the pipeline.
#[derive(Debug, Clone)]
pub struct SynthSuite {
    pub recordings: Vec<Recording>,
    pub manifest: Manifest,
}

/// `drops_per_class` drops of every class, each followed by its left-right
/// mirror when `with_flips` is set.
pub fn generate_suite(
    sampler: &DropSampler,
    drops_per_class: usize,
    with_flips: bool,
    seed: u64,
) -> Result<SynthSuite, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recordings = Vec::new();
    let mut entries = Vec::new();
    for class in 0..NUM_CLASSES {
        for k in 0..drops_per_class {
            let spec = sampler.sample(class, &mut rng);
            let drop = generate_drop(&spec)?;
            let id = format!("{}/{:04}", CLASS_NAMES[class], 2 * k);
            let mut rec = drop.recording;
            rec.meta = id.clone();
            entries.push(ManifestEntry {
                recording_id: id,
                class,
                flipped: false,
                spec: spec.clone(),
                crossing_us: drop.crossing,
                trajectory: drop.trajectory.clone(),
            });
            if with_flips {
                let mut flipped = flip_horizontal(&rec);
                let fid = format!("{}/{:04}", CLASS_NAMES[class], 2 * k + 1);
                flipped.meta = fid.clone();
                let wmax = sampler.dims.width as i64 - 1;
                let wf = sampler.dims.width as f64 - 1.0;
                let traj = drop
                    .trajectory
                    .iter()
                    .map(|s| TruthSample {
                        center: (wf - s.center.0, s.center.1),
                        bbox: (wmax - s.bbox.1, wmax - s.bbox.0, s.bbox.2, s.bbox.3),
                        ..*s
                    })
                    .collect();
                recordings.push(rec);
                recordings.push(flipped);
                entries.push(ManifestEntry {
                    recording_id: fid,
                    class,
                    flipped: true,
                    spec,
                    crossing_us: drop.crossing,
                    trajectory: traj,
                });
            } else {
                recordings.push(rec);
            }
        }
    }
    Ok(SynthSuite {
        recordings,
        manifest: Manifest {
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            seed,
            sampler: sampler.clone(),
            jitter_note: format!(
                "emission jitter uniform 0..={} us is a free parameter",
                sampler.jitter_us
            ),
            entries,
        },
    })
}
