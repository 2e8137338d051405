use super::{Frame, Pointmap, Pose, Vec3};
use crate::error::{Error, Result};

/// Pinhole intrinsics with a single focal length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Principal point at the image centre, `((W-1)/2, (H-1)/2)`.
    pub fn centered(f: f64, height: usize, width: usize) -> Self {
        Self {
            f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.f, (v - self.cy) / self.f, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraState {
    pub intrinsics: Intrinsics,
    /// World-from-camera.
    pub pose: Pose,
    pub timestamp: f64,
}

impl CameraState {
    pub fn validate(&self) -> Result<()> {
        if !(self.intrinsics.f > 0.0 && self.intrinsics.f.is_finite()) {
            return Err(Error::InvalidInput(format!("focal {}", self.intrinsics.f)));
        }
        let r = self.pose.rotation.to_rotation_matrix();
        let m = r.matrix();
        let ortho = (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max();
        if ortho > 1e-6 || (m.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput("rotation is not orthonormal".into()));
        }
        Ok(())
    }
}

/// Row-major depth in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "depth map {height}x{width} with {} values",
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }
}

/// Back-projects every pixel: `d * ((u - cx)/f, (v - cy)/f, 1)`.
pub fn unproject(depth: &DepthMap, k: &Intrinsics, frame: Frame) -> Result<Pointmap> {
    unproject_masked(depth, &vec![true; depth.values.len()], k, frame)
}

/// Like [`unproject`], leaving pixels outside `mask` invalid.
pub fn unproject_masked(depth: &DepthMap, mask: &[bool], k: &Intrinsics, frame: Frame) -> Result<Pointmap> {
    let (h, w) = (depth.height, depth.width);
    if mask.len() != h * w {
        return Err(Error::InvalidInput("mask size differs from depth map".into()));
    }
    let mut points = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let d = depth.values[i];
            if !mask[i] {
                points.push(Vec3::zeros());
                continue;
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidInput(format!("depth {d} at pixel ({u}, {v})")));
            }
            points.push(k.ray(u as f64, v as f64) * d);
        }
    }
    Pointmap::new(h, w, frame, points, mask.to_vec())
}

/// Pixel coordinates `(u, v)` of a camera-frame point, or `None` behind
/// the camera.
pub fn project(p: &Vec3, k: &Intrinsics) -> Option<(f64, f64)> {
    if p.z <= 0.0 {
        return None;
    }
    Some((k.f * p.x / p.z + k.cx, k.f * p.y / p.z + k.cy))
}
