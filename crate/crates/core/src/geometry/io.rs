//! Pointmap binary file (`C3RP`), ASCII PLY export and TUM trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, Translation3, UnitQuaternion};

use super::{ConfidenceMap, Frame, Pointmap, Pose, Vec3};
use crate::error::{Error, Result};
use crate::io::ByteReader;

const MAGIC: &[u8; 4] = b"C3RP";

/// Layout: magic, `H u16`, `W u16`, frame tag `u32`, `f32` xyz triples in
/// row-major order, then one `u8` validity flag per pixel.
pub fn encode_pointmap(pm: &Pointmap) -> Result<Vec<u8>> {
    if pm.height > u16::MAX as usize || pm.width > u16::MAX as usize {
        return Err(Error::InvalidInput("pointmap too large for file".into()));
    }
    let mut out = Vec::with_capacity(12 + pm.len() * 13);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(pm.height as u16).to_le_bytes());
    out.extend_from_slice(&(pm.width as u16).to_le_bytes());
    out.extend_from_slice(&pm.frame.code().to_le_bytes());
    for p in &pm.points {
        for v in p.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out.extend(pm.valid.iter().map(|&v| v as u8));
    Ok(out)
}

pub fn decode_pointmap(bytes: &[u8]) -> Result<Pointmap> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let h = r.u16()? as usize;
    let w = r.u16()? as usize;
    let frame = Frame::from_code(r.u32()?);
    let mut points = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        points.push(Vec3::new(r.f32()? as f64, r.f32()? as f64, r.f32()? as f64));
    }
    let mut valid = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let off = r.offset();
        valid.push(match r.u8()? {
            0 => false,
            1 => true,
            b => {
                return Err(Error::Format {
                    offset: off,
                    detail: format!("mask byte {b}"),
                })
            }
        });
    }
    if !r.is_empty() {
        return Err(r.error("trailing bytes after mask"));
    }
    Pointmap::new(h, w, frame, points, valid)
}

pub fn write_pointmap(path: impl AsRef<Path>, pm: &Pointmap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pointmap(pm)?).map_err(|e| Error::io(path, e))
}

pub fn read_pointmap(path: impl AsRef<Path>) -> Result<Pointmap> {
    let path = path.as_ref();
    decode_pointmap(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// ASCII PLY of the valid points. Confidence becomes a gray level, mapped
/// from `[1, max]` onto `[0, 255]`.
pub fn write_ply(path: impl AsRef<Path>, pm: &Pointmap, confidence: Option<&ConfidenceMap>) -> Result<()> {
    let path = path.as_ref();
    let cmax = confidence
        .map(|c| c.values.iter().copied().fold(1.0, f64::max))
        .unwrap_or(1.0);
    let mut s = String::new();
    let n = pm.valid_count();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\n\
         property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
         end_header\n"
    );
    for i in 0..pm.len() {
        if !pm.valid[i] {
            continue;
        }
        let gray = match confidence {
            Some(c) if cmax > 1.0 => ((c.values[i] - 1.0) / (cmax - 1.0) * 255.0).round() as u8,
            _ => 255,
        };
        let p = pm.points[i];
        let _ = writeln!(s, "{} {} {} {gray} {gray} {gray}", p.x, p.y, p.z);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TumPose {
    pub timestamp: f64,
    pub pose: Pose,
}

/// One line per pose: `t tx ty tz qx qy qz qw`.
pub fn write_tum(path: impl AsRef<Path>, poses: &[TumPose]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = p.pose.translation.vector;
        let q = p.pose.rotation.quaternion();
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        );
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_tum(path: impl AsRef<Path>) -> Result<Vec<TumPose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tum(&text)
}

pub fn parse_tum(text: &str) -> Result<Vec<TumPose>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("trajectory line {}: {e}", ln + 1)))?;
        if vals.len() != 8 {
            return Err(Error::InvalidInput(format!(
                "trajectory line {}: {} fields, expected 8",
                ln + 1,
                vals.len()
            )));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if !(q.norm() > 0.0) {
            return Err(Error::InvalidInput(format!(
                "trajectory line {}: zero quaternion",
                ln + 1
            )));
        }
        out.push(TumPose {
            timestamp: vals[0],
            pose: Pose::from_parts(
                Translation3::new(vals[1], vals[2], vals[3]),
                UnitQuaternion::from_quaternion(q),
            ),
        });
    }
    Ok(out)
}
