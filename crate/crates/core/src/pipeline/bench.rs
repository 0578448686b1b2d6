//! Wall-clock throughput of the streaming stages.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::aer::Recording;
use crate::pool::{pool_frame, PoolConfig, PoolMode};
use crate::skan::{extract_feature_event, SkanNetwork, SkanScratch};
use crate::surface::{DecayBasis, MemorySurface, SurfaceConfig};
use crate::tracker::{detect_box, TrackerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl MachineInfo {
    pub fn current() -> Self {
        MachineInfo {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub events: usize,
    pub absorb_only: f64,
    pub absorb_track: f64,
    pub full_pipeline: f64,
    pub repeats: usize,
    pub machine: MachineInfo,
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Absorb,
    Track,
    Full,
}

fn run_stage(
    recordings: &[Recording],
    surface_config: SurfaceConfig,
    tracker: &TrackerConfig,
    network: &SkanNetwork,
    stage: Stage,
) -> Result<f64, PipelineError> {
    let mut surface = MemorySurface::new(surface_config)?;
    let mut features: Vec<MemorySurface> = if stage == Stage::Full {
        (0..network.neurons())
            .map(|_| MemorySurface::new(surface_config))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let mut scratch = SkanScratch::default();
    let pool = PoolConfig { sample_interval_us: tracker.sample_interval_us, mode: PoolMode::F, ..Default::default() };
    let mut sink = 0.0;
    for rec in recordings {
        surface.reset();
        features.iter_mut().for_each(|s| s.reset());
        let Some((first, _)) = rec.span() else { continue };
        let mut next_frame = first + tracker.sample_interval_us;
        for e in &rec.events {
            if stage != Stage::Absorb && e.t > next_frame {
                let now = match surface_config.basis {
                    DecayBasis::Time => Some(next_frame),
                    DecayBasis::Index => surface.latest_instant(),
                };
                if let Some(now) = now {
                    let bbox = detect_box(&surface, now, tracker)?;
                    if stage == Stage::Full {
                        let i = surface.latest_instant().unwrap_or(0);
                        if let Some(v) = pool_frame(&features, bbox.as_ref(), next_frame, i, &pool)? {
                            sink += v[0];
                        }
                    }
                }
                while next_frame < e.t {
                    next_frame += tracker.sample_interval_us;
                }
            }
            surface.absorb(e)?;
            if stage == Stage::Full {
                if let Some(fe) = extract_feature_event(e, &surface, network, &mut scratch)? {
                    features[fe.feature_id].absorb_at(fe.x, fe.y, fe.t, fe.i, 1)?;
                }
            }
        }
    }
    Ok(sink)
}

/// Events per second for absorb-only, absorb plus tracking, and the full
/// chain with feature extraction and pooling. Only ON events are streamed;
/// one untimed warm-up pass precedes the `repeats` timed passes of each
/// stage, and the best pass is reported.
pub fn bench_throughput(
    recordings: &[Recording],
    surface_config: SurfaceConfig,
    tracker: &TrackerConfig,
    network: &SkanNetwork,
    repeats: usize,
) -> Result<Throughput, PipelineError> {
    let on: Vec<Recording> = recordings.iter().map(|r| r.on_events()).collect();
    let events: usize = on.iter().map(|r| r.len()).sum();
    if events == 0 {
        return Err(PipelineError::Data("benchmark dataset has no ON events".into()));
    }
    let rate = |stage| -> Result<f64, PipelineError> {
        run_stage(&on, surface_config, tracker, network, stage)?;
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            std::hint::black_box(run_stage(&on, surface_config, tracker, network, stage)?);
            best = best.min(start.elapsed().as_secs_f64());
        }
        Ok(events as f64 / best.max(1e-9))
    };
    Ok(Throughput {
        events,
        absorb_only: rate(Stage::Absorb)?,
        absorb_track: rate(Stage::Track)?,
        full_pipeline: rate(Stage::Full)?,
        repeats: repeats.max(1),
        machine: MachineInfo::current(),
    })
}
