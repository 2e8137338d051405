//! Sequence bundle directory:
//!
//! ```text
//! meta.json          scene config, timestamps
//! poses.txt          TUM trajectory (world-from-camera)
//! events.bin         event file
//! frames/NNNN.pgm    8-bit binary PGM
//! depth/NNNN.bin     "C3RD", H u16, W u16, f32 depth row-major
//! flow/NNNN.bin      "C3RF", H u16, W u16, f32 u[], f32 v[], u8 valid[]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowField, SceneConfig, Sequence};
use crate::error::{Error, Result};
use crate::events::{read_events, write_events};
use crate::geometry::{read_tum, write_tum, CameraState, DepthMap, TumPose};
use crate::io::ByteReader;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: SceneConfig,
    timestamps: Vec<f64>,
    degenerate: bool,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn header(magic: &[u8; 4], h: usize, w: usize) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out
}

pub(crate) fn encode_pgm(frame: &[f32], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(frame.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub(crate) fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format {
                offset: pos as u64,
                detail: "truncated PGM header".into(),
            });
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let bad = |d: &str| Error::Format {
        offset: 0,
        detail: format!("PGM: {d}"),
    };
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only 8-bit binary PGM is supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    if bytes.len() < pos + w * h {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("PGM needs {} pixel bytes", w * h),
        });
    }
    let data = bytes[pos..pos + w * h].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((h, w, data))
}

fn encode_depth(d: &DepthMap) -> Vec<u8> {
    let mut out = header(b"C3RD", d.height, d.width);
    for v in &d.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    let mut r = ByteReader::new(bytes);
    r.magic(b"C3RD")?;
    let (h, w) = (r.u16()? as usize, r.u16()? as usize);
    let values = (0..h * w).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
    DepthMap::new(h, w, values)
}

/// Writes a depth map in the bundle's `C3RD` layout.
pub fn write_depth(path: impl AsRef<Path>, d: &DepthMap) -> Result<()> {
    write(path.as_ref(), encode_depth(d))
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_depth(&read(path.as_ref())?)
}

fn encode_flow(f: &FlowField) -> Vec<u8> {
    let mut out = header(b"C3RF", f.height, f.width);
    for v in f.u.iter().chain(&f.v) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(f.valid.iter().map(|&v| v as u8));
    out
}

fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    let mut r = ByteReader::new(bytes);
    r.magic(b"C3RF")?;
    let (h, w) = (r.u16()? as usize, r.u16()? as usize);
    let n = h * w;
    let u = (0..n).map(|_| r.f32()).collect::<Result<_>>()?;
    let v = (0..n).map(|_| r.f32()).collect::<Result<_>>()?;
    let valid = (0..n).map(|_| r.u8().map(|b| b != 0)).collect::<Result<_>>()?;
    Ok(FlowField {
        height: h,
        width: w,
        u,
        v,
        valid,
    })
}

pub fn write_bundle(dir: impl AsRef<Path>, seq: &Sequence) -> Result<()> {
    let dir = dir.as_ref();
    let (h, w) = (seq.config.height, seq.config.width);
    for sub in ["frames", "depth", "flow"] {
        mkdir(&dir.join(sub))?;
    }
    let meta = Meta {
        config: seq.config.clone(),
        timestamps: seq.timestamps.clone(),
        degenerate: seq.degenerate,
    };
    let json = serde_json::to_string_pretty(&meta).expect("plain data serializes");
    write(&dir.join("meta.json"), json)?;
    let poses: Vec<TumPose> = seq
        .cameras
        .iter()
        .map(|c| TumPose {
            timestamp: c.timestamp,
            pose: c.pose,
        })
        .collect();
    write_tum(dir.join("poses.txt"), &poses)?;
    write_events(dir.join("events.bin"), &seq.events)?;
    for (i, f) in seq.frames.iter().enumerate() {
        write(&dir.join(format!("frames/{i:04}.pgm")), encode_pgm(f, h, w))?;
        write(&dir.join(format!("depth/{i:04}.bin")), encode_depth(&seq.depths[i]))?;
    }
    for (i, f) in seq.flows.iter().enumerate() {
        write(&dir.join(format!("flow/{i:04}.bin")), encode_flow(f))?;
    }
    Ok(())
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Sequence> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_slice(&read(&meta_path)?)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", meta_path.display())))?;
    let config = meta.config;
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let n = meta.timestamps.len();
    let k = config.intrinsics();
    let poses = read_tum(dir.join("poses.txt"))?;
    if poses.len() != n {
        return Err(Error::InvalidInput(format!("{} poses for {n} timestamps", poses.len())));
    }
    let mut frames = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    for i in 0..n {
        let (fh, fw, f) = decode_pgm(&read(&dir.join(format!("frames/{i:04}.pgm")))?)?;
        let d = decode_depth(&read(&dir.join(format!("depth/{i:04}.bin")))?)?;
        if (fh, fw) != (h, w) || (d.height, d.width) != (h, w) {
            return Err(Error::InvalidInput(format!("frame {i} resolution differs from config")));
        }
        frames.push(f);
        depths.push(d);
    }
    let flows = (0..n.saturating_sub(1))
        .map(|i| decode_flow(&read(&dir.join(format!("flow/{i:04}.bin")))?))
        .collect::<Result<_>>()?;
    let cameras = poses
        .iter()
        .map(|p| CameraState {
            intrinsics: k,
            pose: p.pose,
            timestamp: p.timestamp,
        })
        .collect();
    Ok(Sequence {
        events: read_events(dir.join("events.bin"))?,
        config,
        timestamps: meta.timestamps,
        frames,
        depths,
        cameras,
        flows,
        degenerate: meta.degenerate,
    })
}
