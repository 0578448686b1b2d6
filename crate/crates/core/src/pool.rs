//! Spatial pooling of surfaces over the tracked box into fixed-length frames.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::surface::{MemorySurface, SurfaceError};
use crate::tracker::BBox;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("no surfaces to pool")]
    NoSurfaces,
    #[error("surfaces disagree on sensor dims")]
    DimsMismatch,
    #[error("box {0:?} outside the sensor")]
    BadBox(BBox),
    #[error("invalid pooling config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// The raw event surface.
    E,
    /// One surface per feature neuron.
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub resample_len: usize,
    pub sample_interval_us: u64,
    pub mode: PoolMode,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            resample_len: 72,
            sample_interval_us: 3000,
            mode: PoolMode::E,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<(), PoolError> {
        if self.resample_len < 2 {
            return Err(PoolError::Config("resample_len must be at least 2".into()));
        }
        if self.sample_interval_us == 0 {
            return Err(PoolError::Config("sample interval must be positive".into()));
        }
        Ok(())
    }

    /// Frame length for `surfaces` pooled surfaces.
    pub fn frame_len(&self, surfaces: usize) -> usize {
        2 * self.resample_len * surfaces
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub vector: Vec<f64>,
    pub label: usize,
    pub recording_id: String,
    pub frame_index: usize,
}

/// Sample `v` at `m` evenly spaced positions spanning `[0, n-1]`.
pub fn resample_linear(v: &[f64], m: usize) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot resample an empty vector");
    let n = v.len();
    if n == 1 || m == 1 {
        return vec![v[0]; m];
    }
    let scale = (n - 1) as f64 / (m - 1) as f64;
    (0..m)
        .map(|k| {
            if k == m - 1 {
                return v[n - 1];
            }
            let pos = k as f64 * scale;
            let lo = (pos.floor() as usize).min(n - 2);
            let frac = pos - lo as f64;
            v[lo] * (1.0 - frac) + v[lo + 1] * frac
        })
        .collect()
}

/// Row sums (length = box height) and column sums (length = box width) of
/// surface values inside `bbox`.
pub fn pool_surface(
    surface: &MemorySurface,
    bbox: &BBox,
    now: u64,
) -> Result<(Vec<f64>, Vec<f64>), PoolError> {
    let dims = surface.dims();
    if bbox.x_hi >= dims.width || bbox.y_hi >= dims.height || bbox.x_lo > bbox.x_hi || bbox.y_lo > bbox.y_hi
    {
        return Err(PoolError::BadBox(*bbox));
    }
    let mut rows = vec![0.0; bbox.height()];
    let mut cols = vec![0.0; bbox.width()];
    let area = bbox.width() * bbox.height();
    if surface.populated_count() < area {
        surface.for_each_active(now, |x, y, v| {
            if (bbox.x_lo..=bbox.x_hi).contains(&x) && (bbox.y_lo..=bbox.y_hi).contains(&y) {
                rows[(y - bbox.y_lo) as usize] += v;
                cols[(x - bbox.x_lo) as usize] += v;
            }
        })?;
    } else {
        for y in bbox.y_lo..=bbox.y_hi {
            for x in bbox.x_lo..=bbox.x_hi {
                let v = surface.sample_value(x, y, now)?;
                rows[(y - bbox.y_lo) as usize] += v;
                cols[(x - bbox.x_lo) as usize] += v;
            }
        }
    }
    Ok((rows, cols))
}

/// Pool every surface over `bbox`, each queried at its own basis instant
/// for the camera event `(t, i)`. Returns `None` when there is no box.
pub fn pool_frame(
    surfaces: &[MemorySurface],
    bbox: Option<&BBox>,
    t: u64,
    i: u64,
    config: &PoolConfig,
) -> Result<Option<Vec<f64>>, PoolError> {
    let Some(bbox) = bbox else {
        return Ok(None);
    };
    let first = surfaces.first().ok_or(PoolError::NoSurfaces)?;
    if surfaces.iter().any(|s| s.dims() != first.dims()) {
        return Err(PoolError::DimsMismatch);
    }
    let mut out = Vec::with_capacity(config.frame_len(surfaces.len()));
    for s in surfaces {
        let now = s.config().basis.instant(t, i);
        let (rows, cols) = pool_surface(s, bbox, now)?;
        out.extend(resample_linear(&rows, config.resample_len));
        out.extend(resample_linear(&cols, config.resample_len));
    }
    Ok(Some(out))
}

/// Divide by the largest entry; a zero vector is left unchanged.
pub fn normalize_max(v: &mut [f64]) {
    let m = v.iter().cloned().fold(0.0f64, f64::max);
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
}

/// Frame matrix CSV: `recording_id,frame_index,label,v0..v{D-1}`.
pub fn write_frames_csv<W: Write + ?Sized>(out: &mut W, frames: &[FeatureFrame]) -> std::io::Result<()> {
    let d = frames.first().map_or(0, |f| f.vector.len());
    write!(out, "recording_id,frame_index,label")?;
    for k in 0..d {
        write!(out, ",v{k}")?;
    }
    writeln!(out)?;
    for f in frames {
        write!(out, "{},{},{}", f.recording_id, f.frame_index, f.label)?;
        for v in &f.vector {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
