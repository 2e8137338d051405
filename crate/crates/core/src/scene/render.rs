use super::world::{Scene, Snapshot};
use super::{random_scene, SceneConfig, Sequence};
use crate::error::{Error, Result};
use crate::events::{log_intensity, simulate_events, SimulatorConfig};
use crate::geometry::{project, CameraState, DepthMap, Intrinsics};
use crate::par;
use crate::rng::SeedTree;

/// Forward optical flow in pixels with a validity mask; pixels that leave
/// the image or become occluded are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub valid: Vec<bool>,
}

struct Render {
    intensity: Vec<f64>,
    depth: Vec<f64>,
    hits: Vec<(usize, crate::geometry::Vec3)>,
}

fn render(scene: &Scene, k: &Intrinsics, h: usize, w: usize, t: f64) -> Result<Render> {
    let snap = Snapshot::new(scene, t);
    let px = par::map_range(h * w, |i| snap.cast(k, (i % w) as f64, (i / w) as f64));
    let mut out = Render {
        intensity: Vec::with_capacity(h * w),
        depth: Vec::with_capacity(h * w),
        hits: Vec::with_capacity(h * w),
    };
    for (i, hit) in px.into_iter().enumerate() {
        let hit =
            hit.ok_or_else(|| Error::Degenerate(format!("pixel ({}, {}) sees nothing at t={t}", i % w, i / w)))?;
        out.intensity.push(hit.albedo);
        out.depth.push(hit.depth);
        out.hits.push((hit.surface, hit.local));
    }
    Ok(out)
}

fn flow_between(scene: &Scene, k: &Intrinsics, h: usize, w: usize, from: &Render, t1: f64) -> FlowField {
    let snap = Snapshot::new(scene, t1);
    let cam_inv = snap.camera().inverse();
    let res = par::map_range(h * w, |i| {
        let (surface, local) = from.hits[i];
        let world = snap.surface_pose(surface) * nalgebra::Point3::from(local);
        let cam = (cam_inv * world).coords;
        let (u1, v1) = project(&cam, k)?;
        let (u0, v0) = ((i % w) as f64, (i / w) as f64);
        let flow = ((u1 - u0) as f32, (v1 - v0) as f32);
        let inside = u1 >= 0.0 && v1 >= 0.0 && u1 <= (w - 1) as f64 && v1 <= (h - 1) as f64;
        let visible = inside
            && snap
                .cast(k, u1, v1)
                .is_some_and(|hit| hit.surface == surface && (hit.depth - cam.z).abs() <= 1e-6 * cam.z);
        Some((flow, visible))
    });
    let mut f = FlowField {
        height: h,
        width: w,
        u: vec![0.0; h * w],
        v: vec![0.0; h * w],
        valid: vec![false; h * w],
    };
    for (i, r) in res.into_iter().enumerate() {
        if let Some(((du, dv), ok)) = r {
            f.u[i] = du;
            f.v[i] = dv;
            f.valid[i] = ok;
        }
    }
    f
}

/// Renders a given scene under `config`'s camera, timing and event
/// settings.
pub fn render_sequence(scene: &Scene, config: &SceneConfig) -> Result<Sequence> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let k = config.intrinsics();
    let timestamps = config.timestamps();

    let renders: Vec<Render> = timestamps
        .iter()
        .map(|&t| render(scene, &k, h, w, t))
        .collect::<Result<_>>()?;
    for (i, r) in renders.iter().enumerate() {
        if let Some(d) = r.depth.iter().find(|d| !(**d >= config.z_min && **d <= config.z_max)) {
            return Err(Error::Degenerate(format!(
                "frame {i}: depth {d} outside [{}, {}]",
                config.z_min, config.z_max
            )));
        }
    }

    let flows = (0..renders.len() - 1)
        .map(|i| flow_between(scene, &k, h, w, &renders[i], timestamps[i + 1]))
        .collect();

    // events come from the unquantized renders at every substep
    let s = config.substeps;
    let mut fine_t = Vec::with_capacity((timestamps.len() - 1) * s + 1);
    let mut fine_log = Vec::with_capacity(fine_t.capacity());
    for i in 0..timestamps.len() - 1 {
        for j in 0..s {
            if j == 0 {
                fine_t.push(timestamps[i]);
                fine_log.push(renders[i].intensity.iter().map(|&v| log_intensity(v)).collect());
                continue;
            }
            let t = timestamps[i] + (timestamps[i + 1] - timestamps[i]) * j as f64 / s as f64;
            let r = render(scene, &k, h, w, t)?;
            fine_t.push(t);
            fine_log.push(r.intensity.iter().map(|&v| log_intensity(v)).collect());
        }
    }
    let last = renders.len() - 1;
    fine_t.push(timestamps[last]);
    fine_log.push(renders[last].intensity.iter().map(|&v| log_intensity(v)).collect());
    let events = simulate_events(
        &fine_log,
        &fine_t,
        h,
        w,
        &SimulatorConfig {
            threshold: config.event_threshold,
            threshold_jitter: config.threshold_jitter,
        },
        &SeedTree::new(config.seed).split_str("events"),
    )?;

    let cameras = timestamps
        .iter()
        .map(|&t| CameraState {
            intrinsics: k,
            pose: scene.camera.pose_at(t),
            timestamp: t,
        })
        .collect();
    let degenerate = scene.camera.is_static() && scene.surfaces.iter().all(|s| s.motion.is_static());
    if degenerate {
        log::warn!("sequence {} has no camera or object motion", config.seed);
    }
    // depth and intensity are stored at file precision so bundles round-trip
    let frames = renders
        .iter()
        .map(|r| r.intensity.iter().map(|&v| quantize(v)).collect())
        .collect();
    let depths = renders
        .into_iter()
        .map(|r| DepthMap::new(h, w, r.depth.iter().map(|&d| d as f32 as f64).collect()))
        .collect::<Result<_>>()?;
    Ok(Sequence {
        config: config.clone(),
        timestamps,
        frames,
        depths,
        cameras,
        flows,
        events,
        degenerate,
    })
}

fn quantize(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0
}

/// Draws a random scene from `config.seed` and renders it. Scenes that
/// violate the depth range are redrawn from the next split of the seed.
pub fn generate_sequence(config: &SceneConfig) -> Result<Sequence> {
    config.validate()?;
    let seeds = SeedTree::new(config.seed).split_str("scene");
    let mut last = None;
    for attempt in 0..32 {
        let scene = random_scene(config, &seeds.split(attempt));
        match render_sequence(&scene, config) {
            Ok(seq) => return Ok(seq),
            Err(e @ Error::Degenerate(_)) => {
                log::debug!("scene attempt {attempt} rejected: {e}");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Degenerate("no valid scene".into())))
}
