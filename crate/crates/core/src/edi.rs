//! Blur formation and its event-based double-integral inversion.
//!
//! Per pixel the latent intensity follows `I(t) = I(t0) f(t)` with
//! `f(t) = exp(c * sum of p_j over t0 < t_j < t)`. The blurry frame averages
//! `I(t)` over the exposure; with the integral replaced by a left-endpoint
//! sum over `a` samples `t_i = t0 + i (tn - t0) / a`, `i = 0..a`, the sharp
//! frame is `B a / sum_i f(t_i)`.
//!
//! The sums are evaluated in closed form per pixel: `f` is piecewise constant
//! between events, so only the number of samples falling into each piece is
//! needed, which is exact integer arithmetic. Cost is O(events), not O(a).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Error, Result};
use crate::events::EventStream;
use crate::image::IntensityImage;

pub const DEFAULT_THRESHOLD: f64 = 0.2;

fn check_inputs(image: &IntensityImage, stream: &EventStream, c: f64) -> Result<()> {
    if (image.width(), image.height()) != (stream.width() as usize, stream.height() as usize) {
        return Err(shape(format!(
            "{}x{} image vs {}x{} sensor",
            image.width(),
            image.height(),
            stream.width(),
            stream.height()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(param(format!("contrast threshold must be positive, got {c}")));
    }
    stream.require_sorted()
}

/// Constant pieces of one pixel's `f`: `(start time, value)`, time-ordered.
/// The first piece starts at `t0` with value 1. Events at exactly `t0` lie
/// outside the open interval and never contribute.
fn pieces(stream: &EventStream, indices: &[usize], c: f64) -> Vec<(u64, f64)> {
    let events = stream.events();
    let mut out = Vec::with_capacity(indices.len() + 1);
    out.push((stream.t0(), 1.0));
    let mut log_sum = 0.0;
    for &i in indices {
        let e = events[i];
        if e.t == stream.t0() {
            continue;
        }
        log_sum += c * e.p.sign() as f64;
        let value = log_sum.exp();
        match out.last_mut() {
            Some(last) if last.0 == e.t => last.1 = value,
            _ => out.push((e.t, value)),
        }
    }
    out
}

/// `sum_{i=0}^{a-1} f(t_i)` for one pixel.
fn left_sum(pieces: &[(u64, f64)], t0: u64, tn: u64, steps: u64) -> f64 {
    let span = (tn - t0) as u128;
    // Samples with t_i > t are those with i > (t - t0) a / span.
    let first_after = |t: u64| -> u64 {
        if t == t0 {
            0
        } else {
            (((t - t0) as u128 * steps as u128 / span) as u64 + 1).min(steps)
        }
    };
    let mut total = 0.0;
    for (j, &(start, value)) in pieces.iter().enumerate() {
        let lo = first_after(start);
        let hi = pieces.get(j + 1).map_or(steps, |&(next, _)| first_after(next));
        total += value * (hi - lo) as f64;
    }
    total
}

/// `(1 / (tn - t0)) * integral of f` for one pixel, exactly.
fn mean_exact(pieces: &[(u64, f64)], t0: u64, tn: u64) -> f64 {
    let span = (tn - t0) as f64;
    let mut total = 0.0;
    for (j, &(start, value)) in pieces.iter().enumerate() {
        let end = pieces.get(j + 1).map_or(tn, |p| p.0);
        total += value * (end - start) as f64;
    }
    total / span
}

fn map_pixels(
    image: &IntensityImage,
    stream: &EventStream,
    c: f64,
    per_pixel: impl Fn(f64, &[(u64, f64)]) -> f64 + Sync,
) -> Result<IntensityImage> {
    let index = stream.pixel_index();
    let data: Vec<f64> = index
        .par_iter()
        .zip(image.data().par_iter())
        .map(|(idx, &v)| per_pixel(v, &pieces(stream, idx, c)))
        .collect();
    IntensityImage::new(image.width(), image.height(), data)
}

fn require_exposure(stream: &EventStream) -> Result<()> {
    if stream.tn() == stream.t0() {
        Err(Error::Numeric("exposure window has zero length".into()))
    } else {
        Ok(())
    }
}

/// Latent frame at time `t` (microseconds, inside the window).
pub fn latent_intensity(i0: &IntensityImage, stream: &EventStream, c: f64, t: f64) -> Result<IntensityImage> {
    check_inputs(i0, stream, c)?;
    if !(t >= stream.t0() as f64 && t <= stream.tn() as f64) {
        return Err(param(format!(
            "time {t} outside window [{}, {}]",
            stream.t0(),
            stream.tn()
        )));
    }
    map_pixels(i0, stream, c, |v, pcs| {
        // Piece starting strictly before t (pieces after the first start at t_j > t0).
        let value = pcs
            .iter()
            .take_while(|&&(start, _)| start == stream.t0() || (start as f64) < t)
            .last()
            .map_or(1.0, |p| p.1);
        v * value
    })
}

/// Blurry frame from a left-endpoint sum with `steps` samples.
pub fn synthesize_blur(i0: &IntensityImage, stream: &EventStream, c: f64, steps: u64) -> Result<IntensityImage> {
    check_inputs(i0, stream, c)?;
    if steps == 0 {
        return Err(param("integration needs at least one step"));
    }
    require_exposure(stream)?;
    let (t0, tn) = (stream.t0(), stream.tn());
    map_pixels(i0, stream, c, |v, pcs| v * left_sum(pcs, t0, tn, steps) / steps as f64)
}

/// Blurry frame from the exact continuous integral.
pub fn exact_blur(i0: &IntensityImage, stream: &EventStream, c: f64) -> Result<IntensityImage> {
    check_inputs(i0, stream, c)?;
    require_exposure(stream)?;
    let (t0, tn) = (stream.t0(), stream.tn());
    map_pixels(i0, stream, c, |v, pcs| v * mean_exact(pcs, t0, tn))
}

/// Sharp frame at `t0` recovered from a blurry frame and its events.
pub fn edi_deblur(blurry: &IntensityImage, stream: &EventStream, c: f64, steps: u64) -> Result<IntensityImage> {
    check_inputs(blurry, stream, c)?;
    if steps == 0 {
        return Err(param("integration needs at least one step"));
    }
    require_exposure(stream)?;
    let (t0, tn) = (stream.t0(), stream.tn());
    // f > 0 everywhere, so the denominator is at least `steps * min f` > 0.
    map_pixels(blurry, stream, c, |b, pcs| b * steps as f64 / left_sum(pcs, t0, tn, steps))
}

/// One row of a granularity study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GranularityRow {
    /// Number of integration steps.
    pub a: u64,
    /// Step size in seconds.
    pub dt: f64,
    /// Max over pixels of `|1/I(t0) - 1/I_hat(t0)|`.
    pub err: f64,
    /// `err` of the previous row divided by this one.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityReport {
    pub rows: Vec<GranularityRow>,
}

impl GranularityReport {
    /// Least-squares slope of `ln err` against `ln dt`, over rows with `err > 0`.
    pub fn loglog_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.err > 0.0)
            .map(|r| (r.dt.ln(), r.err.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        Some(sxy / sxx)
    }

    /// One JSON object per row.
    pub fn to_json_lines(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serialises") + "\n")
            .collect()
    }
}

/// Deblurs the exactly integrated blur of `i0` with each step count in
/// `steps` and measures the reciprocal error against `i0`.
pub fn granularity_study(i0: &IntensityImage, stream: &EventStream, c: f64, steps: &[u64]) -> Result<GranularityReport> {
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(param("step counts must be strictly ascending"));
    }
    if i0.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::Numeric("reference intensities must be strictly positive".into()));
    }
    let blurry = exact_blur(i0, stream, c)?;
    let seconds = stream.duration_us() as f64 * 1e-6;
    let mut rows: Vec<GranularityRow> = Vec::with_capacity(steps.len());
    for &a in steps {
        let est = edi_deblur(&blurry, stream, c, a)?;
        let err = i0
            .data()
            .iter()
            .zip(est.data())
            .map(|(r, e)| (1.0 / r - 1.0 / e).abs())
            .fold(0.0, f64::max);
        let ratio = rows.last().and_then(|prev| (err > 0.0).then(|| prev.err / err));
        rows.push(GranularityRow {
            a,
            dt: seconds / a as f64,
            err,
            ratio,
        });
    }
    Ok(GranularityReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, Polarity};

    fn one_pixel(t0: u64, tn: u64, ev: &[(u64, i64)]) -> EventStream {
        let events = ev
            .iter()
            .map(|&(t, p)| Event::new(t, 0, 0, Polarity::from_sign(p).unwrap()))
            .collect();
        EventStream::new(1, 1, t0, tn, events).unwrap()
    }

    fn px(v: f64) -> IntensityImage {
        IntensityImage::filled(1, 1, v).unwrap()
    }

    #[test]
    fn latent_examples() {
        let s = one_pixel(0, 100, &[]);
        assert_eq!(latent_intensity(&px(0.4), &s, 0.2, 70.0).unwrap().get(0, 0), 0.4);
        let s = one_pixel(0, 100, &[(10, 1)]);
        let v = latent_intensity(&px(1.0), &s, 0.2, 50.0).unwrap().get(0, 0);
        assert!((v - 0.2f64.exp()).abs() < 1e-15);
        assert_eq!(latent_intensity(&px(1.0), &s, 0.2, 10.0).unwrap().get(0, 0), 1.0);
        let s = one_pixel(0, 100, &[(10, 1), (20, -1)]);
        assert_eq!(latent_intensity(&px(0.7), &s, 0.2, 60.0).unwrap().get(0, 0), 0.7);
        assert!(latent_intensity(&px(0.7), &s, 0.2, 150.0).is_err());
    }

    #[test]
    fn no_events_is_identity() {
        let s = one_pixel(0, 1000, &[]);
        for a in [1, 10, 1_000_000] {
            assert_eq!(synthesize_blur(&px(0.3), &s, 0.2, a).unwrap().get(0, 0), 0.3);
            assert_eq!(edi_deblur(&px(0.3), &s, 0.2, a).unwrap().get(0, 0), 0.3);
        }
    }

    #[test]
    fn closed_form_sum_matches_explicit_loop() {
        let s = one_pixel(3, 1003, &[(3, 1), (17, 1), (17, -1), (250, 1), (251, 1), (999, -1), (1003, 1)]);
        let c = 0.3;
        let f = |t: f64| {
            let sum: i64 = s
                .events()
                .iter()
                .filter(|e| e.t as f64 > 3.0 && (e.t as f64) < t)
                .map(|e| e.p.sign() as i64)
                .sum();
            (c * sum as f64).exp()
        };
        for a in [1u64, 2, 3, 7, 64, 999, 1000, 4096] {
            let dt = 1000.0 / a as f64;
            let explicit: f64 = (0..a).map(|i| f(3.0 + i as f64 * dt)).sum();
            let fast = synthesize_blur(&px(1.0), &s, c, a).unwrap().get(0, 0) * a as f64;
            assert!((explicit - fast).abs() < 1e-9 * explicit, "a = {a}");
        }
    }

    #[test]
    fn midpoint_event_limit() {
        // One +1 event at the window midpoint with c = ln 2: f is 1 then 2.
        let s = one_pixel(0, 1_000_000, &[(500_000, 1)]);
        let est = edi_deblur(&px(1.5), &s, std::f64::consts::LN_2, 1_000_000).unwrap();
        assert!((est.get(0, 0) - 1.0).abs() < 1e-5);
        let b = exact_blur(&px(1.0), &s, std::f64::consts::LN_2).unwrap();
        assert!((b.get(0, 0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn threshold_and_shape_errors() {
        let s = one_pixel(0, 10, &[]);
        assert!(edi_deblur(&px(1.0), &s, 0.0, 10).is_err());
        assert!(edi_deblur(&px(1.0), &s, 0.2, 0).is_err());
        assert!(edi_deblur(&IntensityImage::filled(2, 1, 1.0).unwrap(), &s, 0.2, 4).is_err());
        let flat = one_pixel(5, 5, &[]);
        assert!(matches!(edi_deblur(&px(1.0), &flat, 0.2, 4), Err(Error::Numeric(_))));
    }

    #[test]
    fn study_constant_scene_has_zero_error() {
        let s = one_pixel(0, 1000, &[]);
        let r = granularity_study(&px(0.5), &s, 0.2, &[4, 8, 16]).unwrap();
        assert!(r.rows.iter().all(|row| row.err == 0.0 && row.ratio.is_none()));
        assert!((r.rows[1].dt - 1000e-6 / 8.0).abs() < 1e-18);
        assert!(r.loglog_slope().is_none());
        assert!(granularity_study(&px(0.5), &s, 0.2, &[8, 4]).is_err());
    }
}
