use nalgebra::{Point3, Translation3};
use serde::{Deserialize, Serialize};

use super::texture::Texture;
use crate::geometry::{so3_exp, Intrinsics, Pose, Vec3};

/// Surface geometry in its local frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Rectangle in the local `z = 0` plane.
    Rect {
        half_w: f64,
        half_h: f64,
    },
    /// Unbounded local `z = 0` plane.
    Plane,
}

/// `pose(t) = translate(base.t + v t) * exp(w t) * base.R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    pub base: Pose,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
}

impl RigidMotion {
    pub fn fixed(base: Pose) -> Self {
        Self {
            base,
            velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
        }
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        Pose::from_parts(
            Translation3::from(self.base.translation.vector + self.velocity * t),
            so3_exp(&(self.angular_velocity * t)) * self.base.rotation,
        )
    }

    pub fn is_static(&self) -> bool {
        self.velocity == Vec3::zeros() && self.angular_velocity == Vec3::zeros()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub shape: Shape,
    pub motion: RigidMotion,
    pub texture: Texture,
}

impl Surface {
    /// Ray parameter of the nearest hit beyond `1e-9` plus the local hit
    /// point, for a ray given in local coordinates.
    fn intersect_local(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3)> {
        const MIN: f64 = 1e-9;
        match self.shape {
            Shape::Sphere { radius } => {
                let a = d.norm_squared();
                let b = o.dot(d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let s = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&s| s > MIN)?;
                Some((s, o + d * s))
            }
            Shape::Rect { .. } | Shape::Plane => {
                if d.z == 0.0 {
                    return None;
                }
                let s = -o.z / d.z;
                if s <= MIN {
                    return None;
                }
                let p = o + d * s;
                if let Shape::Rect { half_w, half_h } = self.shape {
                    if p.x.abs() > half_w || p.y.abs() > half_h {
                        return None;
                    }
                }
                Some((s, p))
            }
        }
    }
}

/// Smooth world-from-camera trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Trajectory {
    Linear(RigidMotion),
    /// Uniform Catmull-Rom spline through knots at `knot_times`, with
    /// rotations as axis-angle vectors (the curve passes through every
    /// knot and has continuous velocity).
    Spline {
        knot_times: Vec<f64>,
        positions: Vec<Vec3>,
        rotations: Vec<Vec3>,
    },
}

impl Trajectory {
    pub fn pose_at(&self, t: f64) -> Pose {
        match self {
            Trajectory::Linear(m) => m.pose_at(t),
            Trajectory::Spline {
                knot_times,
                positions,
                rotations,
            } => {
                let n = knot_times.len();
                let (t0, t1) = (knot_times[0], knot_times[n - 1]);
                let x = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) * (n - 1) as f64;
                let seg = (x.floor() as usize).min(n - 2);
                let u = x - seg as f64;
                let pick = |v: &[Vec3], i: isize| v[i.clamp(0, n as isize - 1) as usize];
                let cr = |v: &[Vec3]| {
                    let s = seg as isize;
                    catmull_rom(pick(v, s - 1), pick(v, s), pick(v, s + 1), pick(v, s + 2), u)
                };
                Pose::from_parts(Translation3::from(cr(positions)), so3_exp(&cr(rotations)))
            }
        }
    }

    pub fn is_static(&self) -> bool {
        match self {
            Trajectory::Linear(m) => m.is_static(),
            Trajectory::Spline {
                positions, rotations, ..
            } => positions.iter().all(|p| *p == positions[0]) && rotations.iter().all(|r| *r == rotations[0]),
        }
    }
}

fn catmull_rom(p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3, u: f64) -> Vec3 {
    let u2 = u * u;
    let u3 = u2 * u;
    (p1 * 2.0 + (p2 - p0) * u + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * u2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * u3) * 0.5
}

/// A scene: surfaces plus the camera path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
    pub camera: Trajectory,
}

/// What a camera ray sees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    /// Camera-frame z of the hit point.
    pub depth: f64,
    pub surface: usize,
    pub local: Vec3,
    pub albedo: f64,
}

/// Surface poses and camera pose frozen at one instant.
pub(crate) struct Snapshot<'a> {
    scene: &'a Scene,
    camera: Pose,
    inv_surface: Vec<Pose>,
    surface: Vec<Pose>,
}

impl<'a> Snapshot<'a> {
    pub(crate) fn new(scene: &'a Scene, t: f64) -> Self {
        let surface: Vec<Pose> = scene.surfaces.iter().map(|s| s.motion.pose_at(t)).collect();
        Self {
            scene,
            camera: scene.camera.pose_at(t),
            inv_surface: surface.iter().map(|p| p.inverse()).collect(),
            surface,
        }
    }

    pub(crate) fn camera(&self) -> &Pose {
        &self.camera
    }

    pub(crate) fn surface_pose(&self, i: usize) -> &Pose {
        &self.surface[i]
    }

    /// Casts the ray through pixel `(u, v)`; since the camera-frame ray
    /// has unit z, the ray parameter is the depth.
    pub(crate) fn cast(&self, k: &Intrinsics, u: f64, v: f64) -> Option<Hit> {
        let o = Point3::from(self.camera.translation.vector);
        let d = self.camera.rotation * k.ray(u, v);
        let mut best: Option<Hit> = None;
        for (i, s) in self.scene.surfaces.iter().enumerate() {
            let inv = &self.inv_surface[i];
            let ol = (inv * o).coords;
            let dl = inv.rotation * d;
            if let Some((depth, local)) = s.intersect_local(&ol, &dl) {
                if best.is_none_or(|b| depth < b.depth) {
                    best = Some(Hit {
                        depth,
                        surface: i,
                        local,
                        albedo: 0.0,
                    });
                }
            }
        }
        best.map(|mut h| {
            h.albedo = self.scene.surfaces[h.surface].texture.albedo(&h.local);
            h
        })
    }
}
