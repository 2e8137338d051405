//! Pinhole cameras, frame-tagged pointmaps, rigid/similarity transforms,
//! trajectory alignment and confidence fusion. Everything here is `f64`.

mod camera;
mod fuse;
mod io;
mod lie;
mod umeyama;

pub use camera::{project, unproject, unproject_masked, CameraState, DepthMap, Intrinsics};
pub use fuse::fuse_confidence;
pub use io::{
    decode_pointmap, encode_pointmap, parse_tum, read_pointmap, read_tum, write_ply, write_pointmap, write_tum, TumPose,
};
pub use lie::{interpolate_pose, rotation_angle, se3_exp, se3_log, so3_exp, so3_log};
pub use umeyama::{apply_sim3, umeyama_align, AlignMode};

use nalgebra::{Isometry3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Pose = Isometry3<f64>;

/// Coordinate frame a set of points is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    Camera(u32),
    World,
}

impl Frame {
    const WORLD_CODE: u32 = u32::MAX;

    pub fn code(self) -> u32 {
        match self {
            Frame::Camera(i) => i,
            Frame::World => Self::WORLD_CODE,
        }
    }

    pub fn from_code(code: u32) -> Frame {
        if code == Self::WORLD_CODE {
            Frame::World
        } else {
            Frame::Camera(code)
        }
    }
}

impl std::fmt::Display for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Frame::Camera(i) => write!(f, "camera {i}"),
            Frame::World => write!(f, "world"),
        }
    }
}

/// Rigid transform mapping points in `source` coordinates to `target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramedTransform {
    pub source: Frame,
    pub target: Frame,
    pub iso: Pose,
}

impl FramedTransform {
    pub fn new(source: Frame, target: Frame, iso: Pose) -> Self {
        Self { source, target, iso }
    }

    pub fn inverse(&self) -> Self {
        Self {
            source: self.target,
            target: self.source,
            iso: self.iso.inverse(),
        }
    }

    /// `next ∘ self`: first `self`, then `next`.
    pub fn then(&self, next: &FramedTransform) -> Result<FramedTransform> {
        if next.source != self.target {
            return Err(Error::FrameTag {
                expected: self.target.to_string(),
                found: next.source.to_string(),
            });
        }
        Ok(Self {
            source: self.source,
            target: next.target,
            iso: next.iso * self.iso,
        })
    }

    /// Relative transform from camera `a` to camera `b` given both
    /// world-from-camera poses.
    pub fn between(a: u32, pose_a: &Pose, b: u32, pose_b: &Pose) -> Self {
        Self {
            source: Frame::Camera(a),
            target: Frame::Camera(b),
            iso: pose_b.inverse() * pose_a,
        }
    }
}

/// Per-pixel 3D points with a validity mask, tagged with their frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Pointmap {
    pub height: usize,
    pub width: usize,
    pub frame: Frame,
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl Pointmap {
    pub fn new(height: usize, width: usize, frame: Frame, points: Vec<Vec3>, valid: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if points.len() != n || valid.len() != n {
            return Err(Error::InvalidInput(format!(
                "pointmap {height}x{width} with {} points and {} mask entries",
                points.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| valid[i] && !points[i].iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite {
                context: format!("pointmap pixel {i}"),
            });
        }
        Ok(Self {
            height,
            width,
            frame,
            points,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_points(&self) -> impl Iterator<Item = &Vec3> {
        self.points.iter().zip(&self.valid).filter(|(_, &v)| v).map(|(p, _)| p)
    }

    pub fn scaled(&self, s: f64) -> Pointmap {
        Pointmap {
            points: self.points.iter().map(|p| p * s).collect(),
            ..self.clone()
        }
    }

    /// Applies `t`, which must start in this pointmap's frame.
    pub fn transformed(&self, t: &FramedTransform) -> Result<Pointmap> {
        if t.source != self.frame {
            return Err(Error::FrameTag {
                expected: self.frame.to_string(),
                found: t.source.to_string(),
            });
        }
        Ok(Pointmap {
            frame: t.target,
            points: self.points.iter().map(|p| transform_point(&t.iso, p)).collect(),
            ..self.clone()
        })
    }

    /// Depth (z) per pixel; invalid pixels get 0.
    pub fn depths(&self) -> Vec<f64> {
        self.points
            .iter()
            .zip(&self.valid)
            .map(|(p, &v)| if v { p.z } else { 0.0 })
            .collect()
    }
}

/// Applies a rigid transform to a point (nalgebra's `Isometry * Vector`
/// would only rotate).
pub fn transform_point(iso: &Pose, p: &Vec3) -> Vec3 {
    (iso * nalgebra::Point3::from(*p)).coords
}

/// Free-function form of [`Pointmap::transformed`].
pub fn transform_pointmap(pm: &Pointmap, t: &FramedTransform) -> Result<Pointmap> {
    pm.transformed(t)
}

/// Per-pixel confidence, every value finite and at least 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "confidence map {height}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|c| !(c.is_finite() && *c >= 1.0)) {
            return Err(Error::InvalidInput(format!(
                "confidence {} at pixel {i} is below 1 or not finite",
                values[i]
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![1.0; height * width],
        }
    }
}

/// Mean Euclidean distance to the origin over all valid points of all
/// pointmaps. The pointmaps must share one frame.
pub fn norm_factor(pointmaps: &[&Pointmap]) -> Result<f64> {
    let Some(first) = pointmaps.first() else {
        return Err(Error::InvalidInput("norm_factor of no pointmaps".into()));
    };
    let mut sum = 0.0;
    let mut n = 0usize;
    for pm in pointmaps {
        if pm.frame != first.frame {
            return Err(Error::FrameTag {
                expected: first.frame.to_string(),
                found: pm.frame.to_string(),
            });
        }
        for p in pm.valid_points() {
            sum += p.norm();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("norm_factor: no valid points".into()));
    }
    Ok(sum / n as f64)
}
