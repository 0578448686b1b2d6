//! Address-event recordings in the 5-byte ATIS/N-MNIST layout.
//!
//! Each event occupies five bytes:
//!
//! ```text
//! byte 0      x address
//! byte 1      y address
//! byte 2      bit 7 polarity (1 = ON, 0 = OFF), bits 6..0 timestamp[22..16]
//! byte 3      timestamp[15..8]
//! byte 4      timestamp[7..0]
//! ```
//!
//! Timestamps are microseconds and must fit in 23 bits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes per encoded event.
pub const WORD_LEN: usize = 5;
/// Largest encodable timestamp in microseconds.
pub const MAX_TIMESTAMP: u64 = (1 << 23) - 1;

#[derive(Debug, Error)]
pub enum AerError {
    #[error("malformed file: length {len} is not a multiple of {WORD_LEN}")]
    Malformed { len: usize },
    #[error("event at byte offset {offset} has address ({x}, {y}) outside sensor {width}x{height}")]
    OutOfRange {
        offset: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("timestamp at byte offset {offset} goes backwards ({t} < {prev})")]
    NonMonotone { offset: usize, t: u64, prev: u64 },
    #[error("event {index} cannot be encoded: {reason}")]
    Encode { index: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }
}

/// One camera event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Pixel column.
    pub x: u16,
    /// Pixel row.
    pub y: u16,
    /// Timestamp in microseconds.
    pub t: u64,
    pub p: Polarity,
    /// Zero-based position within the recording.
    pub i: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorDims {
    pub width: u16,
    pub height: u16,
}

impl SensorDims {
    pub const ATIS: SensorDims = SensorDims {
        width: 304,
        height: 240,
    };

    pub fn new(width: u16, height: u16) -> Self {
        SensorDims { width, height }
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl Default for SensorDims {
    fn default() -> Self {
        SensorDims::ATIS
    }
}

/// How `decode_events` treats a timestamp smaller than its predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestampRepair {
    #[default]
    Reject,
    /// Replace the offending timestamp by the previous one.
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub events: Vec<Event>,
    pub dims: SensorDims,
    pub label: Option<usize>,
    /// Source path or synthetic seed, free-form.
    pub meta: String,
}

impl Recording {
    pub fn new(events: Vec<Event>, dims: SensorDims) -> Self {
        Recording {
            events,
            dims,
            label: None,
            meta: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Time of the first and last event, if any.
    pub fn span(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    pub fn duration_us(&self) -> u64 {
        self.span().map_or(0, |(a, b)| b - a)
    }

    /// The ON events only, re-indexed densely from zero.
    pub fn on_events(&self) -> Recording {
        let events = self
            .events
            .iter()
            .filter(|e| e.p == Polarity::On)
            .enumerate()
            .map(|(i, e)| Event { i: i as u64, ..*e })
            .collect();
        Recording {
            events,
            dims: self.dims,
            label: self.label,
            meta: self.meta.clone(),
        }
    }

    /// Checks the ordering and addressing invariants.
    pub fn validate(&self) -> Result<(), AerError> {
        let mut prev = 0;
        for (k, e) in self.events.iter().enumerate() {
            if !self.dims.contains(e.x, e.y) {
                return Err(AerError::OutOfRange {
                    offset: k * WORD_LEN,
                    x: e.x,
                    y: e.y,
                    width: self.dims.width,
                    height: self.dims.height,
                });
            }
            if e.t < prev {
                return Err(AerError::NonMonotone {
                    offset: k * WORD_LEN,
                    t: e.t,
                    prev,
                });
            }
            if e.i != k as u64 {
                return Err(AerError::Encode {
                    index: k,
                    reason: format!("index field {} does not match position", e.i),
                });
            }
            prev = e.t;
        }
        Ok(())
    }
}

pub fn decode_events(bytes: &[u8], dims: SensorDims) -> Result<Recording, AerError> {
    decode_events_with(bytes, dims, TimestampRepair::Reject)
}

pub fn decode_events_with(
    bytes: &[u8],
    dims: SensorDims,
    repair: TimestampRepair,
) -> Result<Recording, AerError> {
    if bytes.len() % WORD_LEN != 0 {
        return Err(AerError::Malformed { len: bytes.len() });
    }
    let mut events = Vec::with_capacity(bytes.len() / WORD_LEN);
    let mut prev = 0u64;
    for (k, word) in bytes.chunks_exact(WORD_LEN).enumerate() {
        let offset = k * WORD_LEN;
        let x = word[0] as u16;
        let y = word[1] as u16;
        if !dims.contains(x, y) {
            return Err(AerError::OutOfRange {
                offset,
                x,
                y,
                width: dims.width,
                height: dims.height,
            });
        }
        let p = if word[2] & 0x80 != 0 {
            Polarity::On
        } else {
            Polarity::Off
        };
        let mut t =
            ((word[2] as u64 & 0x7f) << 16) | ((word[3] as u64) << 8) | word[4] as u64;
        if t < prev {
            match repair {
                TimestampRepair::Reject => {
                    return Err(AerError::NonMonotone { offset, t, prev })
                }
                TimestampRepair::Clamp => t = prev,
            }
        }
        prev = t;
        events.push(Event {
            x,
            y,
            t,
            p,
            i: k as u64,
        });
    }
    Ok(Recording::new(events, dims))
}

pub fn encode_events(rec: &Recording) -> Result<Vec<u8>, AerError> {
    let mut out = Vec::with_capacity(rec.events.len() * WORD_LEN);
    for (index, e) in rec.events.iter().enumerate() {
        if e.t > MAX_TIMESTAMP {
            return Err(AerError::Encode {
                index,
                reason: format!("timestamp {} exceeds 23 bits", e.t),
            });
        }
        if e.x > 0xff || e.y > 0xff {
            return Err(AerError::Encode {
                index,
                reason: format!("address ({}, {}) exceeds 8 bits", e.x, e.y),
            });
        }
        let pol = if e.p == Polarity::On { 0x80 } else { 0 };
        out.extend_from_slice(&[
            e.x as u8,
            e.y as u8,
            pol | ((e.t >> 16) & 0x7f) as u8,
            (e.t >> 8) as u8,
            e.t as u8,
        ]);
    }
    Ok(out)
}

/// Mirror a recording left to right.
pub fn flip_horizontal(rec: &Recording) -> Recording {
    let w = rec.dims.width;
    let events = rec
        .events
        .iter()
        .map(|e| Event {
            x: w - 1 - e.x,
            ..*e
        })
        .collect();
    Recording {
        events,
        dims: rec.dims,
        label: rec.label,
        meta: rec.meta.clone(),
    }
}

pub fn read_recording(path: &Path, dims: SensorDims) -> Result<Recording, AerError> {
    let bytes = fs::read(path).map_err(|source| AerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rec = decode_events(&bytes, dims)?;
    rec.meta = path.display().to_string();
    Ok(rec)
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<(), AerError> {
    let bytes = encode_events(rec)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| AerError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| AerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A directory of recordings laid out as `<class_name>/<recording_id>.bin`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub recordings: Vec<Recording>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Load every `.bin` file below `root`. Class ids follow the sorted class
/// directory names; recordings within a class are sorted by file name.
pub fn load_dataset(root: &Path, dims: SensorDims) -> Result<Dataset, AerError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AerError::Io { path, source }
    };
    let mut classes: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    let mut class_names = Vec::new();
    let mut recordings = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        class_names.push(
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        for f in files {
            let mut rec = read_recording(&f, dims)?;
            rec.label = Some(label);
            let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            rec.meta = format!("{}/{stem}", class_names[label]);
            recordings.push(rec);
        }
    }
    Ok(Dataset {
        class_names,
        recordings,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn valid_bytes() -> impl Strategy<Value = Vec<u8>> {
        // Sorted 23-bit timestamps with arbitrary 8-bit addresses.
        prop::collection::vec((any::<u8>(), any::<u8>(), any::<bool>(), 0u64..=MAX_TIMESTAMP), 0..64)
            .prop_map(|mut words| {
                words.sort_by_key(|w| w.3);
                let mut out = Vec::new();
                for (x, y, p, t) in words {
                    out.push(x);
                    out.push(y);
                    out.push(((p as u8) << 7) | ((t >> 16) as u8 & 0x7f));
                    out.push((t >> 8) as u8);
                    out.push(t as u8);
                }
                out
            })
    }

    proptest! {
        #[test]
        fn encode_decode_identity(bytes in valid_bytes()) {
            let dims = SensorDims::new(256, 256);
            let rec = decode_events(&bytes, dims).unwrap();
            prop_assert_eq!(encode_events(&rec).unwrap(), bytes);
            prop_assert_eq!(decode_events(&encode_events(&rec).unwrap(), dims).unwrap(), rec);
        }

        #[test]
        fn flip_preserves_timestamps(bytes in valid_bytes()) {
            let rec = decode_events(&bytes, SensorDims::new(256, 256)).unwrap();
            let f = flip_horizontal(&rec);
            let ts: Vec<u64> = rec.events.iter().map(|e| e.t).collect();
            let fs: Vec<u64> = f.events.iter().map(|e| e.t).collect();
            prop_assert_eq!(ts, fs);
            prop_assert_eq!(flip_horizontal(&f), rec);
        }
    }
}
