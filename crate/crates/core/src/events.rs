//! Event data model and the two on-disk event formats.
//!
//! Text: one event per line, `t x y p`, with an optional first line
//! `# w h t0 tn`. Binary: a 24-byte header (`EVS1`, u16 w, u16 h, u64 t0,
//! u64 tn) followed by 16-byte little-endian records (u64 t, u16 x, u16 y,
//! i8 p, three zero pad bytes).

use std::fmt::Write as _;

use crate::error::{param, Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EVS1";
pub const BINARY_HEADER_LEN: usize = 24;
pub const BINARY_RECORD_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_sign(value: i64) -> Option<Self> {
        match value {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

/// A single brightness-change event. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Text,
    Binary,
}

impl EventFormat {
    /// Binary if the buffer starts with the `EVS1` magic, text otherwise.
    pub fn detect(bytes: &[u8]) -> Self {
        if bytes.starts_with(BINARY_MAGIC) {
            EventFormat::Binary
        } else {
            EventFormat::Text
        }
    }
}

/// Events observed by a `width` x `height` sensor inside `[t0, tn]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    t0: u64,
    tn: u64,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates geometry, window and every event. The stream does not need
    /// to be sorted; call [`EventStream::sorted`] before downstream use.
    pub fn new(width: u16, height: u16, t0: u64, tn: u64, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(param("sensor width and height must be positive"));
        }
        if tn < t0 {
            return Err(param(format!("window end {tn} precedes window start {t0}")));
        }
        for (record, e) in events.iter().enumerate() {
            check_event(record, e.t, e.x as i64, e.y as i64, width, height, t0, tn, true)?;
        }
        Ok(Self {
            width,
            height,
            t0,
            tn,
            events,
        })
    }

    pub fn empty(width: u16, height: u16, t0: u64, tn: u64) -> Result<Self> {
        Self::new(width, height, t0, tn, Vec::new())
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn t0(&self) -> u64 {
        self.t0
    }

    pub fn tn(&self) -> u64 {
        self.tn
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Exposure time `tn - t0` in microseconds.
    pub fn duration_us(&self) -> u64 {
        self.tn - self.t0
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t <= w[1].t)
    }

    pub(crate) fn require_sorted(&self) -> Result<()> {
        if self.is_sorted() {
            Ok(())
        } else {
            Err(Error::Unsorted)
        }
    }

    /// Stable sort by timestamp; events with equal `t` keep their input order.
    pub fn sorted(mut self) -> Self {
        self.events.sort_by_key(|e| e.t);
        self
    }

    /// Sum of all polarities.
    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.p.sign() as i64).sum()
    }

    /// Replicates every event onto the `factor` x `factor` block of pixels it
    /// covers at the higher resolution. Time order is preserved.
    pub fn upsample_nearest(&self, factor: u16) -> Result<Self> {
        if factor == 0 {
            return Err(param("upsample factor must be positive"));
        }
        let width = self
            .width
            .checked_mul(factor)
            .ok_or_else(|| param("upsampled width overflows u16"))?;
        let height = self
            .height
            .checked_mul(factor)
            .ok_or_else(|| param("upsampled height overflows u16"))?;
        let f = factor as usize;
        let mut events = Vec::with_capacity(self.events.len() * f * f);
        for e in &self.events {
            for dy in 0..factor {
                for dx in 0..factor {
                    events.push(Event::new(e.t, e.x * factor + dx, e.y * factor + dy, e.p));
                }
            }
        }
        Ok(Self {
            width,
            height,
            t0: self.t0,
            tn: self.tn,
            events,
        })
    }

    /// For every pixel (row-major), the indices of its events in stream order.
    pub fn pixel_index(&self) -> Vec<Vec<usize>> {
        let w = self.width as usize;
        let mut per_pixel = vec![Vec::new(); w * self.height as usize];
        for (i, e) in self.events.iter().enumerate() {
            per_pixel[e.y as usize * w + e.x as usize].push(i);
        }
        per_pixel
    }
}

#[allow(clippy::too_many_arguments)]
fn check_event(
    record: usize,
    t: u64,
    x: i64,
    y: i64,
    width: u16,
    height: u16,
    t0: u64,
    tn: u64,
    check_window: bool,
) -> Result<()> {
    if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
        return Err(Error::Bounds {
            record,
            x,
            y,
            width,
            height,
        });
    }
    if check_window && (t < t0 || t > tn) {
        return Err(Error::Window { record, t, t0, tn });
    }
    Ok(())
}

fn resolve_dims(header: Option<(u16, u16)>, given: Option<(u16, u16)>) -> Result<(u16, u16)> {
    match (header, given) {
        (Some(h), Some(g)) if h != g => Err(param(format!(
            "sensor size {}x{} disagrees with file header {}x{}",
            g.0, g.1, h.0, h.1
        ))),
        (Some(d), _) | (None, Some(d)) => Ok(d),
        (None, None) => Err(param("sensor size unknown: no header and no width/height given")),
    }
}

/// Parses an event buffer. `dims` supplies the sensor size when the source
/// carries no header; when both are present they must agree.
pub fn parse_events(source: &[u8], format: EventFormat, dims: Option<(u16, u16)>) -> Result<EventStream> {
    match format {
        EventFormat::Text => parse_text(source, dims),
        EventFormat::Binary => parse_binary(source, dims),
    }
}

struct RawEvent {
    t: u64,
    x: i64,
    y: i64,
    p: i64,
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, record: usize, name: &str) -> Result<T> {
    let field = field.ok_or_else(|| Error::Parse {
        record,
        reason: format!("missing field `{name}`"),
    })?;
    field.parse().map_err(|_| Error::Parse {
        record,
        reason: format!("field `{name}` is not a valid integer: {field:?}"),
    })
}

fn parse_text(source: &[u8], dims: Option<(u16, u16)>) -> Result<EventStream> {
    let text = std::str::from_utf8(source).map_err(|e| Error::Parse {
        record: 0,
        reason: format!("input is not ASCII/UTF-8: {e}"),
    })?;
    let mut lines = text.lines().peekable();
    let mut header: Option<(u16, u16, u64, u64)> = None;
    if let Some(first) = lines.peek() {
        if let Some(rest) = first.trim_start().strip_prefix('#') {
            let mut it = rest.split_whitespace();
            let w: u16 = header_field(it.next(), "w")?;
            let h: u16 = header_field(it.next(), "h")?;
            let t0: u64 = header_field(it.next(), "t0")?;
            let tn: u64 = header_field(it.next(), "tn")?;
            if it.next().is_some() {
                return Err(Error::Format("header has more than four fields".into()));
            }
            header = Some((w, h, t0, tn));
            lines.next();
        }
    }

    let mut raw = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let record = raw.len();
        let mut it = line.split_whitespace();
        let t: u64 = parse_field(it.next(), record, "t")?;
        let x: i64 = parse_field(it.next(), record, "x")?;
        let y: i64 = parse_field(it.next(), record, "y")?;
        let p: i64 = parse_field(it.next(), record, "p")?;
        if it.next().is_some() {
            return Err(Error::Parse {
                record,
                reason: "more than four fields".into(),
            });
        }
        raw.push(RawEvent { t, x, y, p });
    }

    let (width, height) = resolve_dims(header.map(|h| (h.0, h.1)), dims)?;
    let (t0, tn) = match header {
        Some((_, _, t0, tn)) => (t0, tn),
        None if raw.is_empty() => {
            return Err(param("empty event stream without a header: window unknown"));
        }
        None => (
            raw.iter().map(|e| e.t).min().unwrap_or(0),
            raw.iter().map(|e| e.t).max().unwrap_or(0),
        ),
    };
    build_stream(width, height, t0, tn, raw)
}

fn header_field<T: std::str::FromStr>(field: Option<&str>, name: &str) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Format(format!("header field `{name}` missing or invalid")))
}

fn build_stream(width: u16, height: u16, t0: u64, tn: u64, raw: Vec<RawEvent>) -> Result<EventStream> {
    if width == 0 || height == 0 {
        return Err(param("sensor width and height must be positive"));
    }
    if tn < t0 {
        return Err(param(format!("window end {tn} precedes window start {t0}")));
    }
    let mut events = Vec::with_capacity(raw.len());
    for (record, r) in raw.into_iter().enumerate() {
        check_event(record, r.t, r.x, r.y, width, height, t0, tn, false)?;
        let p = Polarity::from_sign(r.p).ok_or(Error::Polarity { record, value: r.p })?;
        check_event(record, r.t, r.x, r.y, width, height, t0, tn, true)?;
        events.push(Event::new(r.t, r.x as u16, r.y as u16, p));
    }
    Ok(EventStream {
        width,
        height,
        t0,
        tn,
        events,
    })
}

fn parse_binary(source: &[u8], dims: Option<(u16, u16)>) -> Result<EventStream> {
    if source.len() < BINARY_HEADER_LEN {
        return Err(Error::Format(format!(
            "binary event file shorter than its {BINARY_HEADER_LEN}-byte header"
        )));
    }
    if &source[..4] != BINARY_MAGIC {
        return Err(Error::Format("missing EVS1 magic".into()));
    }
    let w = u16::from_le_bytes([source[4], source[5]]);
    let h = u16::from_le_bytes([source[6], source[7]]);
    let t0 = u64::from_le_bytes(source[8..16].try_into().unwrap());
    let tn = u64::from_le_bytes(source[16..24].try_into().unwrap());
    let (width, height) = resolve_dims(Some((w, h)), dims)?;

    let payload = &source[BINARY_HEADER_LEN..];
    let mut raw = Vec::with_capacity(payload.len() / BINARY_RECORD_LEN);
    let mut chunks = payload.chunks_exact(BINARY_RECORD_LEN);
    for (record, rec) in chunks.by_ref().enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]) as i64;
        let y = u16::from_le_bytes([rec[10], rec[11]]) as i64;
        let p = rec[12] as i8 as i64;
        if rec[13..16] != [0, 0, 0] {
            return Err(Error::Parse {
                record,
                reason: "non-zero padding bytes".into(),
            });
        }
        raw.push(RawEvent { t, x, y, p });
    }
    if !chunks.remainder().is_empty() {
        return Err(Error::Parse {
            record: raw.len(),
            reason: format!("truncated record ({} trailing bytes)", chunks.remainder().len()),
        });
    }
    build_stream(width, height, t0, tn, raw)
}

/// Stable sort by timestamp; see [`EventStream::sorted`].
pub fn sort_events(stream: EventStream) -> EventStream {
    stream.sorted()
}

/// Serializes a stream. The header is always written so the window and
/// sensor size survive a round trip.
pub fn write_events(stream: &EventStream, format: EventFormat) -> Vec<u8> {
    match format {
        EventFormat::Text => {
            let mut out = String::with_capacity(16 + stream.len() * 16);
            let _ = writeln!(out, "# {} {} {} {}", stream.width, stream.height, stream.t0, stream.tn);
            for e in &stream.events {
                let _ = writeln!(out, "{} {} {} {}", e.t, e.x, e.y, e.p.sign());
            }
            out.into_bytes()
        }
        EventFormat::Binary => {
            let mut out = Vec::with_capacity(BINARY_HEADER_LEN + stream.len() * BINARY_RECORD_LEN);
            out.extend_from_slice(BINARY_MAGIC);
            out.extend_from_slice(&stream.width.to_le_bytes());
            out.extend_from_slice(&stream.height.to_le_bytes());
            out.extend_from_slice(&stream.t0.to_le_bytes());
            out.extend_from_slice(&stream.tn.to_le_bytes());
            for e in &stream.events {
                out.extend_from_slice(&e.t.to_le_bytes());
                out.extend_from_slice(&e.x.to_le_bytes());
                out.extend_from_slice(&e.y.to_le_bytes());
                out.push(e.p.sign() as u8);
                out.extend_from_slice(&[0, 0, 0]);
            }
            out
        }
    }
}
