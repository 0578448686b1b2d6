//! Brute-force references shared by the integration suites.

#![allow(dead_code)]

use memsurf::aer::Event;
use memsurf::surface::{Kernel, SurfaceConfig};

/// Kernel value written out independently of the library's dispatch.
pub fn reference_kernel(kernel: Kernel, age: f64, c: f64) -> f64 {
    match kernel {
        Kernel::Bin => f64::from(u8::from(age <= c)),
        Kernel::Lin => {
            if age >= 2.0 * c {
                0.0
            } else {
                1.0 - age / (2.0 * c)
            }
        }
        Kernel::Exp => (-age / c).exp(),
    }
}

fn decayed(e: &Event, cfg: &SurfaceConfig, now: u64) -> f64 {
    let last = cfg.basis.instant(e.t, e.i);
    f64::from(e.p.sign()) * reference_kernel(cfg.kernel, (now - last) as f64, cfg.constant())
}

/// Value of pixel (x, y) at `now` replayed from the whole history: the most
/// recent event at that pixel decides it.
pub fn replay_value(history: &[Event], cfg: &SurfaceConfig, x: u16, y: u16, now: u64) -> f64 {
    history
        .iter()
        .rev()
        .find(|e| e.x == x && e.y == y)
        .map_or(0.0, |e| decayed(e, cfg, now))
}

pub fn replay_total(history: &[Event], cfg: &SurfaceConfig, now: u64) -> f64 {
    let d = cfg.dims;
    let mut seen = vec![false; d.pixels()];
    let mut total = 0.0;
    for e in history.iter().rev() {
        let k = e.y as usize * d.width as usize + e.x as usize;
        if !seen[k] {
            seen[k] = true;
            total += decayed(e, cfg, now);
        }
    }
    total
}
