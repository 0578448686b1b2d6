//! Decaying memory surfaces.
//!
//! A surface keeps, per pixel, the time, index and polarity of the most recent
//! event. Decayed values are computed on read from the age of that event, so
//! absorbing an event is O(1) and no surface-wide decay sweep ever happens.
//!
//! Ages are measured either in microseconds (`DecayBasis::Time`) or in events
//! (`DecayBasis::Index`). With `c` the time or index constant:
//!
//! | kernel | value at age `d`        | support    |
//! |--------|-------------------------|------------|
//! | `Bin`  | `1` if `d <= c`         | `[0, c]`   |
//! | `Lin`  | `max(0, 1 - d / 2c)`    | `[0, 2c]`  |
//! | `Exp`  | `exp(-d / c)`           | `[0, inf)` |
//!
//! Every kernel integrates to `c` over its support.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aer::{Event, Recording, SensorDims};

#[derive(Debug, Error, PartialEq)]
pub enum SurfaceError {
    #[error("pixel ({x}, {y}) outside surface {width}x{height}")]
    OutOfBounds { x: i64, y: i64, width: u16, height: u16 },
    #[error("event regresses: t {t} < {last_t} or index {i} < next index {next_i}")]
    Regression { t: u64, last_t: u64, i: u64, next_i: u64 },
    #[error("negative age: query instant {now} precedes last event at {last}")]
    NegativeAge { now: u64, last: u64 },
    #[error("invalid surface config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayBasis {
    Time,
    Index,
}

impl DecayBasis {
    /// Picks the basis' coordinate out of an event's (time, index) pair.
    #[inline]
    pub fn instant(self, t: u64, i: u64) -> u64 {
        match self {
            DecayBasis::Time => t,
            DecayBasis::Index => i,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Bin,
    Lin,
    Exp,
}

impl Kernel {
    /// Kernel value at a non-negative age for constant `c`.
    #[inline]
    pub fn value(self, age: f64, c: f64) -> f64 {
        match self {
            Kernel::Bin => {
                if age <= c {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Lin => (1.0 - age / (2.0 * c)).max(0.0),
            Kernel::Exp => (-age / c).exp(),
        }
    }

    /// Upper end of the support, `None` for unbounded.
    pub fn support(self, c: f64) -> Option<f64> {
        match self {
            Kernel::Bin => Some(c),
            Kernel::Lin => Some(2.0 * c),
            Kernel::Exp => None,
        }
    }
}

/// The six surface variants by their usual short names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Bts,
    Lts,
    Ets,
    Bis,
    Lis,
    Eis,
}

impl SurfaceKind {
    pub const ALL: [SurfaceKind; 6] = [
        SurfaceKind::Bts,
        SurfaceKind::Lts,
        SurfaceKind::Ets,
        SurfaceKind::Bis,
        SurfaceKind::Lis,
        SurfaceKind::Eis,
    ];

    pub fn new(basis: DecayBasis, kernel: Kernel) -> Self {
        use DecayBasis::*;
        use Kernel::*;
        match (basis, kernel) {
            (Time, Bin) => SurfaceKind::Bts,
            (Time, Lin) => SurfaceKind::Lts,
            (Time, Exp) => SurfaceKind::Ets,
            (Index, Bin) => SurfaceKind::Bis,
            (Index, Lin) => SurfaceKind::Lis,
            (Index, Exp) => SurfaceKind::Eis,
        }
    }

    pub fn basis(self) -> DecayBasis {
        match self {
            SurfaceKind::Bts | SurfaceKind::Lts | SurfaceKind::Ets => DecayBasis::Time,
            _ => DecayBasis::Index,
        }
    }

    pub fn kernel(self) -> Kernel {
        match self {
            SurfaceKind::Bts | SurfaceKind::Bis => Kernel::Bin,
            SurfaceKind::Lts | SurfaceKind::Lis => Kernel::Lin,
            SurfaceKind::Ets | SurfaceKind::Eis => Kernel::Exp,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SurfaceKind::Bts => "BTS",
            SurfaceKind::Lts => "LTS",
            SurfaceKind::Ets => "ETS",
            SurfaceKind::Bis => "BIS",
            SurfaceKind::Lis => "LIS",
            SurfaceKind::Eis => "EIS",
        }
    }
}

impl std::str::FromStr for SurfaceKind {
    type Err = String;

    /// Case-insensitive surface name, e.g. `eis` or `ETS`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SurfaceKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown surface '{s}' (expected one of bts, lts, ets, bis, lis, eis)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceConfig {
    pub basis: DecayBasis,
    pub kernel: Kernel,
    /// Time constant in microseconds.
    pub tau_us: f64,
    /// Index constant in events.
    pub n_e: f64,
    pub dims: SensorDims,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            basis: DecayBasis::Time,
            kernel: Kernel::Exp,
            tau_us: 3000.0,
            n_e: 554.0,
            dims: SensorDims::ATIS,
        }
    }
}

impl SurfaceConfig {
    pub fn of_kind(kind: SurfaceKind, dims: SensorDims) -> Self {
        SurfaceConfig {
            basis: kind.basis(),
            kernel: kind.kernel(),
            dims,
            ..Default::default()
        }
    }

    pub fn kind(&self) -> SurfaceKind {
        SurfaceKind::new(self.basis, self.kernel)
    }

    /// The active constant: `tau_us` or `n_e`.
    pub fn constant(&self) -> f64 {
        match self.basis {
            DecayBasis::Time => self.tau_us,
            DecayBasis::Index => self.n_e,
        }
    }

    pub fn validate(&self) -> Result<(), SurfaceError> {
        if !(self.tau_us > 0.0) || !(self.n_e > 0.0) {
            return Err(SurfaceError::Config(format!(
                "constants must be positive (tau_us = {}, n_e = {})",
                self.tau_us, self.n_e
            )));
        }
        if self.dims.width == 0 || self.dims.height == 0 {
            return Err(SurfaceError::Config("empty dims".into()));
        }
        Ok(())
    }

    /// Decayed value of a pixel whose last event is `age` units old.
    #[inline]
    pub fn decay(&self, age: u64) -> f64 {
        self.kernel.value(age as f64, self.constant())
    }
}

/// Per-pixel last-event store with lazily materialized values.
#[derive(Debug, Clone)]
pub struct MemorySurface {
    config: SurfaceConfig,
    last_t: Vec<u64>,
    last_i: Vec<u64>,
    /// 0 marks an unpopulated pixel.
    last_p: Vec<i8>,
    /// Pixel offsets in first-touch order.
    populated: Vec<u32>,
    event_count: u64,
    next_i: u64,
    newest_t: u64,
}

impl MemorySurface {
    pub fn new(config: SurfaceConfig) -> Result<Self, SurfaceError> {
        config.validate()?;
        let n = config.dims.pixels();
        Ok(MemorySurface {
            config,
            last_t: vec![0; n],
            last_i: vec![0; n],
            last_p: vec![0; n],
            populated: Vec::new(),
            event_count: 0,
            next_i: 0,
            newest_t: 0,
        })
    }

    pub fn config(&self) -> &SurfaceConfig {
        &self.config
    }

    pub fn dims(&self) -> SensorDims {
        self.config.dims
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    pub fn populated_count(&self) -> usize {
        self.populated.len()
    }

    /// Forget all events, keeping the allocation.
    pub fn reset(&mut self) {
        for &k in &self.populated {
            self.last_p[k as usize] = 0;
        }
        self.populated.clear();
        self.event_count = 0;
        self.next_i = 0;
        self.newest_t = 0;
    }

    #[inline]
    fn offset(&self, x: u16, y: u16) -> usize {
        y as usize * self.config.dims.width as usize + x as usize
    }

    /// Store an event. Timestamps must not decrease and indices must increase;
    /// for a camera stream indices are dense so this means `i == event_count`.
    /// Feature surfaces share the camera stream's index clock and so may skip
    /// indices.
    pub fn absorb(&mut self, event: &Event) -> Result<(), SurfaceError> {
        self.absorb_at(event.x, event.y, event.t, event.i, event.p.sign())
    }

    pub fn absorb_at(
        &mut self,
        x: u16,
        y: u16,
        t: u64,
        i: u64,
        polarity: i8,
    ) -> Result<(), SurfaceError> {
        let dims = self.config.dims;
        if !dims.contains(x, y) {
            return Err(SurfaceError::OutOfBounds {
                x: x as i64,
                y: y as i64,
                width: dims.width,
                height: dims.height,
            });
        }
        if t < self.newest_t || i < self.next_i {
            return Err(SurfaceError::Regression {
                t,
                last_t: self.newest_t,
                i,
                next_i: self.next_i,
            });
        }
        let k = self.offset(x, y);
        if self.last_p[k] == 0 {
            self.populated.push(k as u32);
        }
        self.last_t[k] = t;
        self.last_i[k] = i;
        self.last_p[k] = if polarity >= 0 { 1 } else { -1 };
        self.event_count += 1;
        self.next_i = i + 1;
        self.newest_t = t;
        Ok(())
    }

    /// The query instant of the most recently absorbed event, in basis units.
    pub fn latest_instant(&self) -> Option<u64> {
        if self.event_count == 0 {
            None
        } else {
            Some(self.config.basis.instant(self.newest_t, self.next_i - 1))
        }
    }

    #[inline]
    fn value_at_offset(&self, k: usize, now: u64) -> Result<f64, SurfaceError> {
        let p = self.last_p[k];
        if p == 0 {
            return Ok(0.0);
        }
        let last = match self.config.basis {
            DecayBasis::Time => self.last_t[k],
            DecayBasis::Index => self.last_i[k],
        };
        if now < last {
            return Err(SurfaceError::NegativeAge { now, last });
        }
        Ok(p as f64 * self.config.decay(now - last))
    }

    /// Value of pixel (x, y) at `now` (microseconds or event index, per basis).
    pub fn sample_value(&self, x: u16, y: u16, now: u64) -> Result<f64, SurfaceError> {
        let dims = self.config.dims;
        if !dims.contains(x, y) {
            return Err(SurfaceError::OutOfBounds {
                x: x as i64,
                y: y as i64,
                width: dims.width,
                height: dims.height,
            });
        }
        self.value_at_offset(self.offset(x, y), now)
    }

    /// Sum of all pixel values at `now`; visits populated pixels only.
    pub fn total_activation(&self, now: u64) -> Result<f64, SurfaceError> {
        let mut sum = 0.0;
        for &k in &self.populated {
            sum += self.value_at_offset(k as usize, now)?;
        }
        Ok(sum)
    }

    /// Visit every populated pixel with its value at `now`.
    pub fn for_each_active<F: FnMut(u16, u16, f64)>(
        &self,
        now: u64,
        mut f: F,
    ) -> Result<(), SurfaceError> {
        let w = self.config.dims.width as usize;
        for &k in &self.populated {
            let v = self.value_at_offset(k as usize, now)?;
            if v != 0.0 {
                let k = k as usize;
                f((k % w) as u16, (k / w) as u16, v);
            }
        }
        Ok(())
    }

    /// The `side`×`side` window centred on (cx, cy), row-major; cells outside
    /// the sensor are zero. Panics if `side` is even.
    pub fn extract_patch(
        &self,
        cx: u16,
        cy: u16,
        side: usize,
        now: u64,
    ) -> Result<Patch, SurfaceError> {
        assert!(side % 2 == 1, "patch side must be odd, got {side}");
        let mut values = vec![0.0; side * side];
        self.fill_patch(cx, cy, side, now, &mut values)?;
        Ok(Patch { side, values })
    }

    /// Allocation-free variant of `extract_patch` for hot loops.
    pub fn fill_patch(
        &self,
        cx: u16,
        cy: u16,
        side: usize,
        now: u64,
        out: &mut [f64],
    ) -> Result<(), SurfaceError> {
        debug_assert_eq!(out.len(), side * side);
        let half = (side / 2) as i64;
        let (w, h) = (self.config.dims.width as i64, self.config.dims.height as i64);
        for (row, dy) in (-half..=half).enumerate() {
            let y = cy as i64 + dy;
            for (col, dx) in (-half..=half).enumerate() {
                let x = cx as i64 + dx;
                out[row * side + col] = if x < 0 || y < 0 || x >= w || y >= h {
                    0.0
                } else {
                    self.value_at_offset((y * w + x) as usize, now)?
                };
            }
        }
        Ok(())
    }

    /// Dense row-major snapshot of all values.
    pub fn snapshot(&self, now: u64) -> Result<Vec<Vec<f64>>, SurfaceError> {
        let dims = self.config.dims;
        let mut grid = vec![vec![0.0; dims.width as usize]; dims.height as usize];
        self.for_each_active(now, |x, y, v| grid[y as usize][x as usize] = v)?;
        Ok(grid)
    }
}

/// A square window of surface values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: usize,
    pub values: Vec<f64>,
}

impl Patch {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }
}

/// Total activation of a recording's ON events sampled every `stride` basis
/// units, starting at the first event's instant. Each sample sees every
/// event at or before its instant.
pub fn activation_series(
    recording: &Recording,
    config: SurfaceConfig,
    stride: u64,
) -> Result<Vec<(u64, f64)>, SurfaceError> {
    let stride = stride.max(1);
    let on = recording.on_events();
    let mut surface = MemorySurface::new(config)?;
    let (Some(first), Some(last)) = (on.events.first(), on.events.last()) else {
        return Ok(Vec::new());
    };
    let basis = config.basis;
    let start = basis.instant(first.t, first.i);
    let end = basis.instant(last.t, last.i);
    let mut out = Vec::new();
    let mut cursor = 0;
    let mut instant = start;
    while instant <= end {
        while cursor < on.events.len() {
            let e = &on.events[cursor];
            if basis.instant(e.t, e.i) > instant {
                break;
            }
            surface.absorb(e)?;
            cursor += 1;
        }
        out.push((instant, surface.total_activation(instant)?));
        instant += stride;
    }
    Ok(out)
}

/// Write a snapshot as CSV, one row per sensor row.
pub fn write_snapshot_csv<W: Write>(grid: &[Vec<f64>], mut out: W) -> std::io::Result<()> {
    for row in grid {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aer::Polarity;

    fn cfg(basis: DecayBasis, kernel: Kernel) -> SurfaceConfig {
        SurfaceConfig {
            basis,
            kernel,
            tau_us: 3000.0,
            n_e: 100.0,
            dims: SensorDims::new(16, 12),
        }
    }

    fn on(x: u16, y: u16, t: u64, i: u64) -> Event {
        Event { x, y, t, p: Polarity::On, i }
    }

    #[test]
    fn kernel_closed_forms() {
        let c = 3000.0;
        assert!((Kernel::Exp.value(c, c) - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(Kernel::Lin.value(2.0 * c, c), 0.0);
        assert_eq!(Kernel::Lin.value(c, c), 0.5);
        assert_eq!(Kernel::Bin.value(c, c), 1.0);
        assert_eq!(Kernel::Bin.value(c + 1.0, c), 0.0);
    }

    #[test]
    fn fresh_event_samples_one() {
        for kernel in [Kernel::Bin, Kernel::Lin, Kernel::Exp] {
            let mut s = MemorySurface::new(cfg(DecayBasis::Time, kernel)).unwrap();
            s.absorb(&on(3, 4, 100, 0)).unwrap();
            assert_eq!(s.sample_value(3, 4, 100).unwrap(), 1.0);
            assert_eq!(s.sample_value(2, 4, 100).unwrap(), 0.0);
        }
    }

    #[test]
    fn later_event_overwrites() {
        let mut s = MemorySurface::new(cfg(DecayBasis::Time, Kernel::Exp)).unwrap();
        s.absorb(&on(1, 1, 0, 0)).unwrap();
        s.absorb(&on(1, 1, 3000, 1)).unwrap();
        assert_eq!(s.sample_value(1, 1, 3000).unwrap(), 1.0);
        assert_eq!(s.populated_count(), 1);
    }

    #[test]
    fn index_basis_ignores_time() {
        let mut s = MemorySurface::new(cfg(DecayBasis::Index, Kernel::Exp)).unwrap();
        s.absorb(&on(0, 0, 0, 0)).unwrap();
        s.absorb(&on(1, 0, 1_000_000, 1)).unwrap();
        let v = s.sample_value(0, 0, 1).unwrap();
        assert!((v - (-0.01f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn regressions_and_bounds_are_errors() {
        let mut s = MemorySurface::new(cfg(DecayBasis::Time, Kernel::Bin)).unwrap();
        s.absorb(&on(0, 0, 10, 0)).unwrap();
        assert!(matches!(s.absorb(&on(0, 0, 9, 1)), Err(SurfaceError::Regression { .. })));
        assert!(matches!(s.absorb(&on(0, 0, 11, 0)), Err(SurfaceError::Regression { .. })));
        assert!(matches!(s.absorb(&on(16, 0, 11, 1)), Err(SurfaceError::OutOfBounds { .. })));
        assert!(matches!(
            s.sample_value(0, 0, 5),
            Err(SurfaceError::NegativeAge { now: 5, last: 10 })
        ));
    }

    #[test]
    fn invalid_constants_rejected() {
        let mut c = cfg(DecayBasis::Time, Kernel::Exp);
        c.tau_us = 0.0;
        assert!(MemorySurface::new(c).is_err());
    }

    #[test]
    fn patch_of_isolated_event() {
        let mut s = MemorySurface::new(cfg(DecayBasis::Time, Kernel::Lin)).unwrap();
        s.absorb(&on(0, 0, 5, 0)).unwrap();
        let p = s.extract_patch(0, 0, 3, 5).unwrap();
        assert_eq!(p.get(1, 1), 1.0);
        assert_eq!(p.values.iter().sum::<f64>(), 1.0);
        let far = s.extract_patch(10, 10, 5, 5).unwrap();
        assert!(far.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn total_activation_basics() {
        let mut s = MemorySurface::new(cfg(DecayBasis::Time, Kernel::Exp)).unwrap();
        assert_eq!(s.total_activation(0).unwrap(), 0.0);
        s.absorb(&on(2, 2, 7, 0)).unwrap();
        assert_eq!(s.total_activation(7).unwrap(), 1.0);
        s.reset();
        assert_eq!(s.total_activation(7).unwrap(), 0.0);
        assert_eq!(s.event_count(), 0);
    }

    #[test]
    fn empty_recording_has_empty_series() {
        let rec = Recording::new(vec![], SensorDims::new(4, 4));
        assert!(activation_series(&rec, cfg(DecayBasis::Time, Kernel::Bin), 10)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn snapshot_csv_shape() {
        let mut s = MemorySurface::new(cfg(DecayBasis::Time, Kernel::Bin)).unwrap();
        s.absorb(&on(1, 2, 0, 0)).unwrap();
        let grid = s.snapshot(0).unwrap();
        assert_eq!(grid.len(), 12);
        assert_eq!(grid[2][1], 1.0);
        let mut buf = Vec::new();
        write_snapshot_csv(&grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(text.lines().nth(2).unwrap().starts_with("0,1,0"));
    }
}
