#![allow(dead_code)]

use evdeblur::{Event, EventStream, IntensityImage, Polarity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIXTURE_SIDE: usize = 64;
pub const FIXTURE_C: f64 = 0.2;
pub const FIXTURE_SPAN_US: u64 = 100_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniformly random sorted stream.
pub fn random_stream(r: &mut impl Rng, max_dim: u16, max_events: usize) -> EventStream {
    let w = r.gen_range(1..=max_dim);
    let h = r.gen_range(1..=max_dim);
    let t0 = r.gen_range(0..1_000u64);
    let tn = t0 + r.gen_range(0..10_000u64);
    let n = r.gen_range(0..=max_events);
    let events = (0..n)
        .map(|_| {
            let p = if r.gen_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(r.gen_range(t0..=tn), r.gen_range(0..w), r.gen_range(0..h), p)
        })
        .collect();
    EventStream::new(w, h, t0, tn, events).unwrap().sorted()
}

/// Events concentrated around a few random blobs.
pub fn clustered_stream(r: &mut impl Rng, width: u16, height: u16, events: usize) -> EventStream {
    let blobs: Vec<(f64, f64, f64)> = (0..r.gen_range(1..=4))
        .map(|_| {
            (
                r.gen_range(0.0..width as f64),
                r.gen_range(0.0..height as f64),
                r.gen_range(8.0..40.0),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(events);
    while out.len() < events {
        let (cx, cy, s) = blobs[r.gen_range(0..blobs.len())];
        // Box-Muller with SeedableRng draws keeps the sequence portable.
        let (u1, u2): (f64, f64) = (r.gen_range(1e-12..1.0), r.gen_range(0.0..1.0));
        let rad = (-2.0 * u1.ln()).sqrt() * s;
        let x = cx + rad * (std::f64::consts::TAU * u2).cos();
        let y = cy + rad * (std::f64::consts::TAU * u2).sin();
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            continue;
        }
        let p = if r.gen_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
        out.push(Event::new(r.gen_range(0..=50_000), x as u16, y as u16, p));
    }
    EventStream::new(width, height, 0, 50_000, out).unwrap().sorted()
}

/// A 64x64 scene whose log intensity follows a linear drift plus a few slow
/// oscillations with a per-pixel phase. Events are emitted at every crossing
/// of a multiple of `c` away from the last reference level, as an ideal
/// sensor would. Returns the sharp frame at `t0` and the events.
pub fn smooth_fixture() -> (IntensityImage, EventStream) {
    let n = FIXTURE_SIDE;
    let span = FIXTURE_SPAN_US as f64;
    let c = FIXTURE_C;
    let mut r = rng(0x5eed);
    let mut events = Vec::new();
    let mut base = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let i0: f64 = r.gen_range(0.2..0.9);
            base.push(i0);
            let drift = r.gen_range(2.0..3.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            let amp = r.gen_range(1.0..1.4);
            let cycles = r.gen_range(4.0..6.0);
            let phase = r.gen_range(0.0..std::f64::consts::TAU);
            let log_delta = |t: f64| {
                let s = t / span;
                drift * s + amp * ((std::f64::consts::TAU * cycles * s + phase).sin() - phase.sin())
            };
            let mut level = 0.0;
            let mut prev_t = 0.0;
            let steps = 4000;
            for k in 1..=steps {
                let t = span * k as f64 / steps as f64;
                // The coarse step moves the log intensity by well under c.
                loop {
                    let v = log_delta(t);
                    let dir = if v - level >= c {
                        1.0
                    } else if v - level <= -c {
                        -1.0
                    } else {
                        break;
                    };
                    let target = level + dir * c;
                    let (mut lo, mut hi) = (prev_t, t);
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        if (log_delta(mid) - target) * dir >= 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    let ts = (hi.round() as u64).clamp(1, FIXTURE_SPAN_US);
                    let p = if dir > 0.0 { Polarity::Positive } else { Polarity::Negative };
                    events.push(Event::new(ts, x as u16, y as u16, p));
                    level = target;
                    prev_t = hi;
                }
                prev_t = t;
            }
        }
    }
    let image = IntensityImage::new(n, n, base).unwrap();
    let stream = EventStream::new(n as u16, n as u16, 0, FIXTURE_SPAN_US, events).unwrap().sorted();
    (image, stream)
}
