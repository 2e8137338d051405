//! Deterministic synthetic dynamic scenes: rendered intensity frames with
//! ground-truth depth, camera poses, optical flow and events, plus the
//! balanced triplet pool used for training.

mod bundle;
mod render;
mod texture;
mod triplet;
mod world;

pub use bundle::{read_bundle, read_depth, write_bundle, write_depth};
pub use render::{generate_sequence, render_sequence, FlowField};
pub use texture::Texture;
pub use triplet::{BucketKey, TripletPool, TripletRef, TripletSample};
pub use world::{RigidMotion, Scene, Shape, Surface, Trajectory};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::geometry::{
    so3_exp, unproject, CameraState, DepthMap, Frame, FramedTransform, Intrinsics, Pointmap, Pose, Vec3,
};
use crate::rng::SeedTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Focal length in pixels.
    pub focal: f64,
    /// Number of frames per sequence.
    pub frames: usize,
    /// Seconds between frames.
    pub frame_interval: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Multiplier on camera motion; 0 keeps the camera still.
    pub camera_speed: f64,
    /// Multiplier on object motion; 0 keeps objects still.
    pub object_speed: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Rendered sub-frames per frame interval for event simulation.
    pub substeps: usize,
    pub event_threshold: f64,
    pub threshold_jitter: f64,
    /// Height and width must be multiples of this.
    pub patch: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            focal: 80.0,
            frames: 32,
            frame_interval: 0.05,
            min_objects: 1,
            max_objects: 3,
            camera_speed: 1.0,
            object_speed: 1.0,
            z_min: 1.0,
            z_max: 20.0,
            substeps: 8,
            event_threshold: 0.2,
            threshold_jitter: 0.0,
            patch: 8,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return bad(format!(
                "{}x{} is not a multiple of patch {}",
                self.height, self.width, self.patch
            ));
        }
        if self.frames < 2 || self.substeps == 0 {
            return bad("need at least two frames and one substep".into());
        }
        if !(self.focal > 0.0 && self.frame_interval > 0.0) {
            return bad("focal and frame interval must be positive".into());
        }
        if !(self.z_min > 0.0 && self.z_max > self.z_min) {
            return bad(format!("depth range [{}, {}]", self.z_min, self.z_max));
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects > max_objects".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidInput(format!("bad value {value:?} for {key}"));
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let float = |v: &str| v.parse::<f64>().map_err(|_| bad());
        match key {
            "height" => self.height = int(value)?,
            "width" => self.width = int(value)?,
            "focal" => self.focal = float(value)?,
            "frames" => self.frames = int(value)?,
            "frame_interval" => self.frame_interval = float(value)?,
            "min_objects" => self.min_objects = int(value)?,
            "max_objects" => self.max_objects = int(value)?,
            "camera_speed" => self.camera_speed = float(value)?,
            "object_speed" => self.object_speed = float(value)?,
            "z_min" => self.z_min = float(value)?,
            "z_max" => self.z_max = float(value)?,
            "substeps" => self.substeps = int(value)?,
            "event_threshold" => self.event_threshold = float(value)?,
            "threshold_jitter" => self.threshold_jitter = float(value)?,
            "patch" => self.patch = int(value)?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::InvalidInput(format!("unknown scene option {key:?}"))),
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::centered(self.focal, self.height, self.width)
    }

    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.frames).map(|i| i as f64 * self.frame_interval).collect()
    }

    pub fn duration(&self) -> f64 {
        (self.frames - 1) as f64 * self.frame_interval
    }
}

/// A rendered sequence with mutually consistent ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub config: SceneConfig,
    pub timestamps: Vec<f64>,
    /// Intensities in `[0, 1]`, quantized to 8 bits.
    pub frames: Vec<Vec<f32>>,
    pub depths: Vec<DepthMap>,
    pub cameras: Vec<CameraState>,
    /// `flows[i]` maps frame `i` to frame `i + 1`.
    pub flows: Vec<FlowField>,
    pub events: EventStream,
    /// Set when neither the camera nor any object moves.
    pub degenerate: bool,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.config.intrinsics()
    }

    pub fn pose(&self, i: usize) -> &Pose {
        &self.cameras[i].pose
    }

    /// Ground-truth pointmap of frame `i` in its own camera.
    pub fn camera_pointmap(&self, i: usize) -> Result<Pointmap> {
        unproject(&self.depths[i], &self.intrinsics(), Frame::Camera(i as u32))
    }

    /// Ground-truth pointmap of frame `i` expressed in camera `j`.
    pub fn pointmap_in(&self, i: usize, j: usize) -> Result<Pointmap> {
        let pm = self.camera_pointmap(i)?;
        if i == j {
            return Ok(pm);
        }
        pm.transformed(&FramedTransform::between(
            i as u32,
            self.pose(i),
            j as u32,
            self.pose(j),
        ))
    }

    pub fn world_pointmap(&self, i: usize) -> Result<Pointmap> {
        self.camera_pointmap(i)?.transformed(&FramedTransform::new(
            Frame::Camera(i as u32),
            Frame::World,
            *self.pose(i),
        ))
    }
}

/// Random scene for `config`: a tilted, textured background plane and
/// 1-3 moving spheres or rectangles in front of a smoothly moving camera.
pub fn random_scene(config: &SceneConfig, seeds: &SeedTree) -> Scene {
    let mut rng = seeds.rng();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gauss3 =
        |rng: &mut crate::rng::Rng, s: f64| Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)) * s;
    let duration = config.duration();
    let k = config.intrinsics();

    let knots = 5;
    let cs = config.camera_speed;
    let mut positions = vec![gauss3(&mut rng, 0.1 * cs)];
    let mut rotations = vec![gauss3(&mut rng, 0.05 * cs)];
    let step = 0.6 * cs * duration / (knots - 1) as f64;
    let heading = gauss3(&mut rng, 1.0).normalize();
    for _ in 1..knots {
        let p = *positions.last().expect("seeded") + (heading * 0.7 + gauss3(&mut rng, 0.5)) * step;
        positions.push(p);
        rotations.push(rotations.last().expect("seeded") + gauss3(&mut rng, 0.04 * cs));
    }
    let camera = Trajectory::Spline {
        knot_times: (0..knots).map(|i| i as f64 * duration / (knots - 1) as f64).collect(),
        positions,
        rotations,
    };

    let texture = |rng: &mut crate::rng::Rng, depth: f64| Texture {
        seed: rng.random(),
        frequency: rng.random_range(1.2..2.0) * 3.0 / depth,
        octaves: 3,
        contrast: rng.random_range(0.8..1.0),
    };

    let bg_depth = rng.random_range(8.0..11.0);
    let tilt = so3_exp(&Vec3::new(
        rng.random_range(-0.15..0.15),
        rng.random_range(-0.15..0.15),
        0.0,
    ));
    let mut surfaces = vec![Surface {
        shape: Shape::Plane,
        motion: RigidMotion::fixed(Pose::from_parts(nalgebra::Translation3::new(0.0, 0.0, bg_depth), tilt)),
        texture: texture(&mut rng, bg_depth),
    }];

    let count = rng.random_range(config.min_objects..=config.max_objects);
    let os = config.object_speed;
    for _ in 0..count {
        let depth = rng.random_range(2.5..5.0);
        let u = rng.random_range(0.2..0.8) * config.width as f64;
        let v = rng.random_range(0.2..0.8) * config.height as f64;
        let center = k.ray(u, v) * depth;
        let size = rng.random_range(0.35..0.7) * depth / 3.5;
        let shape = if rng.random::<bool>() {
            Shape::Sphere { radius: size }
        } else {
            Shape::Rect {
                half_w: size,
                half_h: size * rng.random_range(0.6..1.0),
            }
        };
        let facing = so3_exp(&gauss3(&mut rng, 0.3));
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = rng.random_range(0.3..0.8) * os;
        let velocity = Vec3::new(dir.cos() * speed, dir.sin() * speed, rng.random_range(-0.2..0.2) * os);
        surfaces.push(Surface {
            shape,
            motion: RigidMotion {
                base: Pose::from_parts(nalgebra::Translation3::from(center), facing),
                velocity,
                angular_velocity: gauss3(&mut rng, 0.4 * os),
            },
            texture: texture(&mut rng, depth),
        });
    }
    Scene { surfaces, camera }
}
