//! Surface behaviour against brute-force replays of the full event history.

mod common;

use common::{replay_total, replay_value};
use memsurf::aer::{Event, Polarity, Recording, SensorDims};
use memsurf::surface::{activation_series, DecayBasis, MemorySurface, SurfaceConfig, SurfaceKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(kind: SurfaceKind, dims: SensorDims) -> SurfaceConfig {
    SurfaceConfig {
        tau_us: 3000.0,
        n_e: 40.0,
        ..SurfaceConfig::of_kind(kind, dims)
    }
}

#[test]
fn lazy_values_match_history_replay() {
    let dims = SensorDims::new(8, 6);
    for (n, kind) in SurfaceKind::ALL.into_iter().enumerate() {
        let cfg = config(kind, dims);
        let mut surface = MemorySurface::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + n as u64);
        let mut history: Vec<Event> = Vec::new();
        let mut t = 0u64;
        let mut checked = 0;
        for _ in 0..100_000 {
            if rng.random_bool(0.5) {
                t += rng.random_range(0..400);
                let e = Event {
                    x: rng.random_range(0..dims.width),
                    y: rng.random_range(0..dims.height),
                    t,
                    p: if rng.random_bool(0.8) { Polarity::On } else { Polarity::Off },
                    i: history.len() as u64,
                };
                surface.absorb(&e).unwrap();
                history.push(e);
            } else {
                let Some(latest) = surface.latest_instant() else { continue };
                // query at or after the latest absorbed instant
                let now = latest + rng.random_range(0..(3.0 * cfg.constant()) as u64);
                if rng.random_bool(0.9) {
                    let (x, y) = (rng.random_range(0..dims.width), rng.random_range(0..dims.height));
                    let got = surface.sample_value(x, y, now).unwrap();
                    let want = replay_value(&history, &cfg, x, y, now);
                    assert!((got - want).abs() <= 1e-12, "{kind:?} ({x},{y}) at {now}: {got} vs {want}");
                } else {
                    let got = surface.total_activation(now).unwrap();
                    let want = replay_total(&history, &cfg, now);
                    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{kind:?} total at {now}: {got} vs {want}");
                }
                checked += 1;
            }
        }
        assert!(checked > 40_000);
    }
}

#[test]
fn patch_matches_cellwise_samples() {
    let dims = SensorDims::new(20, 16);
    let cfg = config(SurfaceKind::Eis, dims);
    let mut surface = MemorySurface::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..300u64 {
        let e = Event {
            x: rng.random_range(0..dims.width),
            y: rng.random_range(0..dims.height),
            t: i * 10,
            p: Polarity::On,
            i,
        };
        surface.absorb(&e).unwrap();
    }
    for _ in 0..1000 {
        let (cx, cy) = (rng.random_range(0..dims.width), rng.random_range(0..dims.height));
        let side = [1usize, 3, 5, 13][rng.random_range(0..4)];
        let now = 299 + rng.random_range(0..100);
        let patch = surface.extract_patch(cx, cy, side, now).unwrap();
        let r = (side / 2) as i64;
        for row in 0..side {
            for col in 0..side {
                let (x, y) = (cx as i64 + col as i64 - r, cy as i64 + row as i64 - r);
                let want = if x < 0 || y < 0 || x >= dims.width as i64 || y >= dims.height as i64 {
                    0.0
                } else {
                    surface.sample_value(x as u16, y as u16, now).unwrap()
                };
                assert_eq!(patch.get(row, col), want);
            }
        }
    }
}

#[test]
fn constant_rate_binning_plateau() {
    // one event every 50 us cycling over distinct pixels
    let dims = SensorDims::new(40, 40);
    let events: Vec<Event> = (0..4000u64)
        .map(|i| Event {
            x: (i % 40) as u16,
            y: ((i / 40) % 40) as u16,
            t: i * 50,
            p: Polarity::On,
            i,
        })
        .collect();
    let rec = Recording::new(events, dims);
    let cfg = config(SurfaceKind::Bts, dims);
    let series = activation_series(&rec, cfg, 500).unwrap();
    let expected = 3000.0 / 50.0;
    let plateau: Vec<f64> = series.iter().filter(|(t, _)| *t > 10_000).map(|s| s.1).take(100).collect();
    assert!(!plateau.is_empty());
    for v in plateau {
        assert!((v - expected).abs() <= 0.05 * expected, "{v} vs {expected}");
    }
}

#[test]
fn fresh_pixels_are_exactly_one_for_every_kind() {
    let dims = SensorDims::new(4, 4);
    for kind in SurfaceKind::ALL {
        let mut s = MemorySurface::new(config(kind, dims)).unwrap();
        s.absorb_at(1, 2, 777, 0, 1).unwrap();
        let now = s.latest_instant().unwrap();
        assert_eq!(s.sample_value(1, 2, now).unwrap(), 1.0);
        assert_eq!(s.total_activation(now).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn values_bounded_and_non_increasing(
        kind in prop::sample::select(SurfaceKind::ALL.to_vec()),
        gaps in prop::collection::vec(0u64..2000, 1..60),
        pixels in prop::collection::vec((0u16..6, 0u16..6), 60),
        later in 0u64..20_000,
    ) {
        let dims = SensorDims::new(6, 6);
        let mut s = MemorySurface::new(config(kind, dims)).unwrap();
        let mut t = 0;
        for (i, g) in gaps.iter().enumerate() {
            t += g;
            let (x, y) = pixels[i];
            s.absorb_at(x, y, t, i as u64, 1).unwrap();
        }
        let now = s.latest_instant().unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let a = s.sample_value(x, y, now).unwrap();
                let b = s.sample_value(x, y, now + later).unwrap();
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!(b <= a);
            }
        }
        let total = s.total_activation(now).unwrap();
        prop_assert!(total <= s.populated_count() as f64 + 1e-12);
        prop_assert!(total >= 1.0 - 1e-12);
    }

    #[test]
    fn index_surfaces_ignore_time_shifts(
        gaps in prop::collection::vec(1u64..5000, 2..40),
        shift in 1u64..1_000_000,
    ) {
        let dims = SensorDims::new(5, 5);
        let cfg = config(SurfaceKind::Lis, dims);
        let mut a = MemorySurface::new(cfg).unwrap();
        let mut b = MemorySurface::new(cfg).unwrap();
        let mut t = 0;
        for (i, g) in gaps.iter().enumerate() {
            t += g;
            let (x, y) = ((i % 5) as u16, ((i / 5) % 5) as u16);
            a.absorb_at(x, y, t, i as u64, 1).unwrap();
            b.absorb_at(x, y, t * 3 + shift, i as u64, 1).unwrap();
        }
        let now = a.latest_instant().unwrap();
        prop_assert_eq!(now, b.latest_instant().unwrap());
        prop_assert_eq!(a.snapshot(now).unwrap(), b.snapshot(now).unwrap());
        prop_assert_eq!(a.config().basis, DecayBasis::Index);
    }
}
