//! Per-recording frame generation: event surface, tracker, optional SKAN
//! feature surfaces, pooling.

use super::PipelineError;
use crate::aer::Recording;
use crate::pool::{normalize_max, pool_frame, FeatureFrame, PoolConfig, PoolMode};
use crate::skan::{extract_feature_event, SkanNetwork, SkanScratch};
use crate::surface::{MemorySurface, SurfaceConfig};
use crate::tracker::{detect_box, frame_instants, BBox, TrackerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Position among the recording's frame instants.
    pub slot: usize,
    pub instant: u64,
    pub bbox: BBox,
    /// Pooled event surface.
    pub e: Vec<f64>,
    /// Pooled feature surfaces, when a network was supplied.
    pub f: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordingFrames {
    pub frames: Vec<Frame>,
    /// Frame instants in the recording, valid or not.
    pub instants: usize,
    pub input_events: usize,
    pub feature_events: usize,
}

impl RecordingFrames {
    pub fn skipped(&self) -> usize {
        self.instants - self.frames.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FrameSettings {
    pub surface: SurfaceConfig,
    pub tracker: TrackerConfig,
    pub resample_len: usize,
    pub normalize: bool,
    /// Drop frames whose box touches the sensor border (target partly out
    /// of view).
    pub skip_clipped: bool,
}

impl FrameSettings {
    fn pool(&self, mode: PoolMode) -> PoolConfig {
        PoolConfig {
            resample_len: self.resample_len,
            sample_interval_us: self.tracker.sample_interval_us,
            mode,
        }
    }
}

/// Stream a recording's ON events through the event surface (and the
/// feature network, whose winners are written to their own surfaces on the
/// camera clock), emitting one frame per sample instant that has a box.
pub fn build_frames(
    recording: &Recording,
    settings: &FrameSettings,
    network: Option<&SkanNetwork>,
) -> Result<RecordingFrames, PipelineError> {
    let on = recording.on_events();
    let mut events = MemorySurface::new(settings.surface)?;
    let mut features: Vec<MemorySurface> = match network {
        Some(n) => (0..n.neurons())
            .map(|_| MemorySurface::new(settings.surface))
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let mut scratch = SkanScratch::default();
    let instants = frame_instants(recording, settings.tracker.sample_interval_us);
    let mut out = RecordingFrames {
        instants: instants.len(),
        input_events: on.len(),
        ..Default::default()
    };
    let e_pool = settings.pool(PoolMode::E);
    let f_pool = settings.pool(PoolMode::F);
    let mut cursor = 0;
    for (slot, &instant) in instants.iter().enumerate() {
        while cursor < on.events.len() && on.events[cursor].t <= instant {
            let ev = &on.events[cursor];
            events.absorb(ev)?;
            if let Some(net) = network {
                if let Some(fe) = extract_feature_event(ev, &events, net, &mut scratch)? {
                    features[fe.feature_id].absorb_at(fe.x, fe.y, fe.t, fe.i, 1)?;
                    out.feature_events += 1;
                }
            }
            cursor += 1;
        }
        let Some(last) = cursor.checked_sub(1) else {
            continue;
        };
        let last_i = last as u64;
        let now = settings.surface.basis.instant(instant, last_i);
        let Some(bbox) = detect_box(&events, now, &settings.tracker)? else {
            continue;
        };
        if settings.skip_clipped && bbox.touches_border(recording.dims) {
            continue;
        }
        let mut e = pool_frame(std::slice::from_ref(&events), Some(&bbox), instant, last_i, &e_pool)?
            .expect("box present");
        let mut f = match network {
            Some(_) => Some(pool_frame(&features, Some(&bbox), instant, last_i, &f_pool)?.expect("box present")),
            None => None,
        };
        if settings.normalize {
            normalize_max(&mut e);
            if let Some(f) = f.as_mut() {
                normalize_max(f);
            }
        }
        out.frames.push(Frame { slot, instant, bbox, e, f });
    }
    Ok(out)
}

impl RecordingFrames {
    /// The pooled E or F vectors as labelled frames for CSV export.
    pub fn feature_frames(&self, recording_id: &str, label: usize, mode: PoolMode) -> Vec<FeatureFrame> {
        self.frames
            .iter()
            .filter_map(|f| {
                let v = match mode {
                    PoolMode::E => Some(&f.e),
                    PoolMode::F => f.f.as_ref(),
                }?;
                Some(FeatureFrame {
                    vector: v.clone(),
                    label,
                    recording_id: recording_id.to_string(),
                    frame_index: f.slot,
                })
            })
            .collect()
    }
}
