//! Event file: magic `C3RE`, version `u32`, `H u16`, `W u16`, `t_start f64`,
//! `t_end f64`, `count u64`, then `(t f64, x u16, y u16, polarity i8)` per
//! event, all little-endian.

use std::fs;
use std::path::Path;

use super::{check_event, Event, EventStream};
use crate::error::{Error, Result};
use crate::io::ByteReader;

const MAGIC: &[u8; 4] = b"C3RE";
const VERSION: u32 = 1;
const EVENT_BYTES: u64 = 13;

pub fn encode_events(stream: &EventStream) -> Result<Vec<u8>> {
    if stream.height() > u16::MAX as usize || stream.width() > u16::MAX as usize {
        return Err(Error::InvalidInput("sensor too large for event file".into()));
    }
    let mut out = Vec::with_capacity(36 + stream.len() * EVENT_BYTES as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.height() as u16).to_le_bytes());
    out.extend_from_slice(&(stream.width() as u16).to_le_bytes());
    let (t0, t1) = stream.span();
    out.extend_from_slice(&t0.to_le_bytes());
    out.extend_from_slice(&t1.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity as u8);
    }
    Ok(out)
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported event file version {version}")));
    }
    let h = r.u16()? as usize;
    let w = r.u16()? as usize;
    let t0 = r.f64()?;
    let t1 = r.f64()?;
    if !(t0.is_finite() && t1.is_finite() && t0 <= t1) {
        return Err(r.error(format!("bad span [{t0}, {t1}]")));
    }
    let count = r.u64()?;
    let remaining = bytes.len() as u64 - r.offset();
    if remaining < count.saturating_mul(EVENT_BYTES) {
        return Err(r.error(format!(
            "truncated: {count} events need {} bytes, {remaining} left",
            count * EVENT_BYTES
        )));
    }
    let mut events = Vec::with_capacity(count as usize);
    for i in 0..count {
        let start = r.offset();
        let e = Event {
            t: r.f64()?,
            x: r.u16()?,
            y: r.u16()?,
            polarity: r.i8()?,
        };
        check_event(&e, h, w, t0, t1).map_err(|d| Error::Format {
            offset: start,
            detail: format!("event {i}: {d}"),
        })?;
        if let Some(prev) = events.last() {
            if e.canonical_cmp(prev).is_lt() {
                return Err(Error::Format {
                    offset: start,
                    detail: format!("event {i} out of order"),
                });
            }
        }
        events.push(e);
    }
    if !r.is_empty() {
        return Err(r.error("trailing bytes after events"));
    }
    EventStream::new(h, w, t0, t1, events)
}

pub fn write_events(path: impl AsRef<Path>, stream: &EventStream) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_events(stream)?).map_err(|e| Error::io(path, e))
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_events(&bytes)
}
