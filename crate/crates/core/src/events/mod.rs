//! Events: simulation from log-brightness video, temporal splitting with
//! reversal, voxelization and the binary event file.

mod io;
mod simulate;
mod voxel;

pub use io::{decode_events, encode_events, read_events, write_events};
pub use simulate::{log_intensity, simulate_events, SimulatorConfig, LOG_EPS};
pub use voxel::{voxelize, EventVoxelGrid};

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Default number of temporal bins in a voxel grid.
pub const DEFAULT_BINS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    /// +1 or -1.
    pub polarity: i8,
}

impl Event {
    fn canonical_cmp(&self, other: &Event) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.y.cmp(&other.y))
            .then(self.x.cmp(&other.x))
            .then(self.polarity.cmp(&other.polarity))
    }
}

/// Events of one sensor over a time span, sorted by time with ties broken
/// by `(y, x, polarity)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    height: usize,
    width: usize,
    t_start: f64,
    t_end: f64,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, sorting `events` into canonical order and checking
    /// every event against the sensor and the span.
    pub fn new(height: usize, width: usize, t_start: f64, t_end: f64, mut events: Vec<Event>) -> Result<Self> {
        if height > u16::MAX as usize + 1 || width > u16::MAX as usize + 1 {
            return Err(Error::InvalidInput(format!("sensor {height}x{width} too large")));
        }
        if !(t_start.is_finite() && t_end.is_finite() && t_start <= t_end) {
            return Err(Error::InvalidInput(format!("bad span [{t_start}, {t_end}]")));
        }
        for (i, e) in events.iter().enumerate() {
            check_event(e, height, width, t_start, t_end)
                .map_err(|d| Error::InvalidInput(format!("event {i}: {d}")))?;
        }
        events.sort_by(Event::canonical_cmp);
        Ok(Self {
            height,
            width,
            t_start,
            t_end,
            events,
        })
    }

    pub fn empty(height: usize, width: usize, t_start: f64, t_end: f64) -> Self {
        Self {
            height,
            width,
            t_start,
            t_end,
            events: Vec::new(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
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

    /// Sum of polarities.
    pub fn signed_count(&self) -> i64 {
        self.events.iter().map(|e| e.polarity as i64).sum()
    }

    /// Events in `[t0, t1]` (inclusive), re-based and scaled so the window
    /// maps onto `[0, 1]`.
    pub fn window_normalized(&self, t0: f64, t1: f64) -> Result<EventStream> {
        if !(t1 > t0) {
            return Err(Error::InvalidInput(format!("empty window [{t0}, {t1}]")));
        }
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t <= t1);
        let d = t1 - t0;
        let events = self.events[lo..hi]
            .iter()
            .map(|e| Event {
                t: ((e.t - t0) / d).clamp(0.0, 1.0),
                ..*e
            })
            .collect();
        EventStream::new(self.height, self.width, 0.0, 1.0, events)
    }

    /// Time reversal over the stream's own span: each event `(t, x, y, p)`
    /// becomes `(t_start + t_end - t, x, y, -p)`.
    pub fn reversed(&self) -> EventStream {
        let mut events: Vec<Event> = self
            .events
            .iter()
            .map(|e| Event {
                t: (self.t_start + self.t_end - e.t).clamp(self.t_start, self.t_end),
                x: e.x,
                y: e.y,
                polarity: -e.polarity,
            })
            .collect();
        events.sort_by(Event::canonical_cmp);
        EventStream { events, ..self.clone() }
    }

    /// Splits a `[0, 1]` stream at `tau` into the forward part over
    /// `[0, tau]` and the backward part, time-reversed with flipped
    /// polarities, over `[0, 1 - tau]`. An event at exactly `tau` goes to
    /// the forward part.
    pub fn split_and_reverse(&self, tau: f64) -> Result<(EventStream, EventStream)> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau {tau} outside (0, 1)")));
        }
        if self.t_start != 0.0 || self.t_end != 1.0 {
            return Err(Error::InvalidInput(format!(
                "split needs a [0, 1] stream, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        let cut = self.events.partition_point(|e| e.t <= tau);
        let forward = EventStream {
            height: self.height,
            width: self.width,
            t_start: 0.0,
            t_end: tau,
            events: self.events[..cut].to_vec(),
        };
        let span = 1.0 - tau;
        let mut back: Vec<Event> = self.events[cut..]
            .iter()
            .map(|e| Event {
                t: (1.0 - e.t).clamp(0.0, span),
                x: e.x,
                y: e.y,
                polarity: -e.polarity,
            })
            .collect();
        back.sort_by(Event::canonical_cmp);
        let backward = EventStream {
            height: self.height,
            width: self.width,
            t_start: 0.0,
            t_end: span,
            events: back,
        };
        Ok((forward, backward))
    }
}

pub(crate) fn check_event(
    e: &Event,
    height: usize,
    width: usize,
    t_start: f64,
    t_end: f64,
) -> std::result::Result<(), String> {
    if e.x as usize >= width || e.y as usize >= height {
        return Err(format!("pixel ({}, {}) outside {width}x{height}", e.x, e.y));
    }
    if e.polarity != 1 && e.polarity != -1 {
        return Err(format!("polarity {}", e.polarity));
    }
    if !(e.t >= t_start && e.t <= t_end) {
        return Err(format!("time {} outside [{t_start}, {t_end}]", e.t));
    }
    Ok(())
}
