//! Closed-form starting points for the optimizer.

use nalgebra::{Matrix3, Similarity3};

use super::graph::{AlignmentGraph, Measurement, NodeKind};
use super::objective::State;
use crate::error::{Error, Result};
use crate::geometry::{
    apply_sim3, interpolate_pose, transform_point, umeyama_align, AlignMode, Intrinsics, Pose, Vec3,
};

const PNP_ITERATIONS: usize = 200;

fn rays(k: &Intrinsics, h: usize, w: usize) -> Vec<Vec3> {
    (0..h * w).map(|p| k.ray((p % w) as f64, (p / w) as f64)).collect()
}

/// Focal length fitted to every measurement expressed in its own camera.
fn fit_focal(g: &AlignmentGraph, cx: f64, cy: f64) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for m in g.coarse.iter().filter(|m| m.target == m.reference) {
        for (p, (y, &wt)) in m.points.iter().zip(&m.weights).enumerate() {
            if wt == 0.0 || y.z <= 0.0 {
                continue;
            }
            let (a, b) = (y.x / y.z, y.y / y.z);
            num += ((p % g.width) as f64 - cx) * a + ((p / g.width) as f64 - cy) * b;
            den += a * a + b * b;
        }
    }
    let f = num / den;
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::Degenerate("focal length is unobservable".into()));
    }
    Ok(f)
}

fn valid_pairs<'a>(m: &'a Measurement, other: &'a [Vec3], other_valid: &'a [bool]) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for p in 0..m.points.len() {
        if m.weights[p] > 0.0 && other_valid[p] {
            a.push(m.points[p]);
            b.push(other[p]);
        }
    }
    (a, b)
}

/// Camera pose relative to the frame of `pts` and per-pixel depth, by
/// alternating a rigid fit of back-projected rays with depth updates.
fn pose_from_points(pts: &[Vec3], valid: &[bool], rays: &[Vec3]) -> Result<(Pose, Vec<f64>)> {
    let idx: Vec<usize> = (0..pts.len()).filter(|&p| valid[p]).collect();
    let mut depth: Vec<f64> = idx.iter().map(|&p| pts[p].z.max(1e-9)).collect();
    let target: Vec<Vec3> = idx.iter().map(|&p| pts[p]).collect();
    let mut pose = Pose::identity();
    for _ in 0..PNP_ITERATIONS {
        let src: Vec<Vec3> = idx.iter().zip(&depth).map(|(&p, &d)| rays[p] * d).collect();
        let sim = umeyama_align(&src, &target, AlignMode::Se3)?;
        pose = sim.isometry;
        let inv = pose.inverse();
        let mut change: f64 = 0.0;
        for (k, &p) in idx.iter().enumerate() {
            let q = transform_point(&inv, &pts[p]);
            let d = q.dot(&rays[p]) / rays[p].norm_squared();
            change = change.max((d - depth[k]).abs() / depth[k].abs().max(1e-12));
            depth[k] = d;
        }
        if change < 1e-12 {
            break;
        }
    }
    let mut full = vec![f64::NAN; pts.len()];
    for (k, &p) in idx.iter().enumerate() {
        full[p] = depth[k];
    }
    Ok((pose, full))
}

struct Placed {
    pose: Pose,
    /// Camera-frame points and their validity.
    cam: Vec<Vec3>,
    valid: Vec<bool>,
}

fn log_depths(depth: &[f64], valid: &[bool]) -> Vec<f64> {
    let mut good: Vec<f64> = depth
        .iter()
        .zip(valid)
        .filter(|&(&d, &v)| v && d > 0.0 && d.is_finite())
        .map(|(&d, _)| d)
        .collect();
    let fill = if good.is_empty() {
        1.0
    } else {
        let mid = good.len() / 2;
        *good.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    depth
        .iter()
        .zip(valid)
        .map(|(&d, &v)| {
            if v && d > 0.0 && d.is_finite() {
                d.ln()
            } else {
                fill.ln()
            }
        })
        .collect()
}

fn measurement_of(g: &AlignmentGraph, edge: usize, target: usize) -> &Measurement {
    g.coarse
        .iter()
        .find(|m| m.edge == edge && m.target == target)
        .expect("every edge measures both of its nodes")
}

/// Index of the edge whose scale is held at one.
pub(crate) fn gauge_edge(g: &AlignmentGraph) -> usize {
    let n0 = g.frame_nodes().next().expect("graph has frames");
    g.edges.iter().position(|&(r, o)| r == n0 || o == n0).unwrap_or(0)
}

/// Coarse start: focal from self-measurements, relative poses per edge,
/// chained from the first frame with Sim(3) fits for the edge scales.
pub(crate) fn coarse_state(g: &AlignmentGraph) -> Result<State> {
    let (h, w) = (g.height, g.width);
    let centre = Intrinsics::centered(1.0, h, w);
    let (cx, cy) = (centre.cx, centre.cy);
    let f = fit_focal(g, cx, cy)?;
    let k = Intrinsics { f, cx, cy };
    let ray = rays(&k, h, w);
    let n = g.nodes.len();
    let nodes: Vec<usize> = g.frame_nodes().collect();
    let n0 = nodes[0];

    // per edge: pose of `other` in camera `reference`, and its depth
    let mut rel = Vec::with_capacity(g.edges.len());
    for (e, &(r, o)) in g.edges.iter().enumerate() {
        let mo = measurement_of(g, e, o);
        let valid: Vec<bool> = mo.weights.iter().map(|&c| c > 0.0).collect();
        let (pose, depth) = if r == o {
            (Pose::identity(), mo.points.iter().map(|p| p.z).collect())
        } else {
            pose_from_points(&mo.points, &valid, &ray)?
        };
        rel.push((pose, depth, valid));
    }

    let mut placed: Vec<Option<Placed>> = (0..n).map(|_| None).collect();
    let mut scale: Vec<Option<f64>> = vec![None; g.edges.len()];
    let ge = gauge_edge(g);
    let place_edge = |e: usize, sim: Similarity3<f64>, placed: &mut Vec<Option<Placed>>| {
        // `sim` maps camera `r` coordinates at unit edge scale to world
        let (r, o) = g.edges[e];
        let s = sim.scaling();
        let pose_r = sim.isometry;
        if placed[r].is_none() {
            let m = measurement_of(g, e, r);
            placed[r] = Some(Placed {
                pose: pose_r,
                cam: m.points.iter().map(|p| p * s).collect(),
                valid: m.weights.iter().map(|&c| c > 0.0).collect(),
            });
        }
        if placed[o].is_none() {
            let (rel_pose, depth, valid) = &rel[e];
            let mut scaled = *rel_pose;
            scaled.translation.vector *= s;
            placed[o] = Some(Placed {
                pose: pose_r * scaled,
                cam: depth.iter().zip(&ray).map(|(d, r)| r * (d * s)).collect(),
                valid: valid.clone(),
            });
        }
    };

    {
        let (r, o) = g.edges[ge];
        let sim = if r == n0 || o != n0 {
            Similarity3::identity()
        } else {
            let inv = rel[ge].0.inverse();
            Similarity3::from_isometry(inv, 1.0)
        };
        scale[ge] = Some(1.0);
        place_edge(ge, sim, &mut placed);
    }
    loop {
        let mut progress = false;
        for e in 0..g.edges.len() {
            if scale[e].is_some() {
                continue;
            }
            let (r, o) = g.edges[e];
            let Some(k) = [r, o].into_iter().find(|&k| placed[k].is_some()) else {
                continue;
            };
            let pk = placed[k].as_ref().expect("checked");
            let world: Vec<Vec3> = pk.cam.iter().map(|c| transform_point(&pk.pose, c)).collect();
            let m = measurement_of(g, e, k);
            let (a, b) = valid_pairs(m, &world, &pk.valid);
            let sim = umeyama_align(&a, &b, AlignMode::Sim3)?;
            scale[e] = Some(sim.scaling());
            place_edge(e, sim, &mut placed);
            progress = true;
        }
        if !progress {
            break;
        }
    }
    if let Some(e) = scale.iter().position(|s| s.is_none()) {
        return Err(Error::Degenerate(format!("pair graph is disconnected at edge {e}")));
    }
    let frames_placed = nodes.iter().all(|&i| placed[i].is_some());
    if !frames_placed {
        return Err(Error::Degenerate("a frame is not linked to the others".into()));
    }

    let scale_ref = {
        let (mut sum, mut cnt) = (0.0, 0usize);
        for m in &g.coarse {
            let s = scale[m.edge].expect("all edges scaled");
            for (p, &wt) in m.points.iter().zip(&m.weights) {
                if wt > 0.0 {
                    sum += p.norm() * s;
                    cnt += 1;
                }
            }
        }
        if cnt == 0 || !(sum > 0.0) {
            return Err(Error::Degenerate("measurements carry no valid points".into()));
        }
        sum / cnt as f64
    };

    let mut rot = vec![Matrix3::identity(); n];
    let mut trans = vec![Vec3::zeros(); n];
    let mut log_depth = vec![vec![0.0; h * w]; n];
    for &i in &nodes {
        let pl = placed[i].as_ref().expect("placed");
        rot[i] = *pl.pose.rotation.to_rotation_matrix().matrix();
        trans[i] = pl.pose.translation.vector / scale_ref;
        let d: Vec<f64> = pl.cam.iter().map(|c| c.z).collect();
        log_depth[i] = log_depths(&d, &pl.valid);
    }
    rot[n0] = Matrix3::identity();
    trans[n0] = Vec3::zeros();
    Ok(State {
        rot,
        trans,
        log_depth,
        log_focal: f.ln(),
        log_scale: scale.iter().map(|s| s.expect("scaled").ln()).collect(),
        log_offset: vec![0.0; n],
        scale_ref,
        cx,
        cy,
    })
}

/// Fine start: frame nodes keep their coarse values; interpolated nodes
/// start from the pose interpolated between their neighbours, refined
/// against the most confident measurement at each pixel.
pub(crate) fn fine_state(g: &AlignmentGraph, coarse: &State) -> State {
    let mut s = coarse.clone();
    let k = s.intrinsics();
    let ray = rays(&k, g.height, g.width);
    for (i, node) in g.nodes.iter().enumerate() {
        let NodeKind::Interp { start, end } = node.kind else {
            continue;
        };
        let (ts, te) = (g.nodes[start].timestamp, g.nodes[end].timestamp);
        let tau = if te != ts {
            (node.timestamp - ts) / (te - ts)
        } else {
            0.5
        };
        let pose = interpolate_pose(&s.pose(start), &s.pose(end), tau);
        s.log_offset[i] = 0.0;
        // the most confident measurement per pixel, carried to world
        let mut world = vec![Vec3::zeros(); g.pixels()];
        let mut best = vec![0.0; g.pixels()];
        for m in g.fine.iter().filter(|m| m.target == i) {
            let sim = Similarity3::from_isometry(coarse.pose(m.reference), coarse.log_scale[m.edge].exp());
            for p in 0..g.pixels() {
                if m.weights[p] > best[p] {
                    best[p] = m.weights[p];
                    world[p] = apply_sim3(&sim, &m.points[p]);
                }
            }
        }
        let valid: Vec<bool> = best.iter().map(|&b| b > 0.0).collect();
        let inv = pose.inverse();
        let local: Vec<Vec3> = world.iter().map(|w| transform_point(&inv, w)).collect();
        let (pose, depth) = match pose_from_points(&local, &valid, &ray) {
            Ok((rel, depth)) => (pose * rel, depth),
            Err(_) => (
                pose,
                local
                    .iter()
                    .zip(&ray)
                    .map(|(c, r)| c.dot(r) / r.norm_squared())
                    .collect(),
            ),
        };
        s.rot[i] = *pose.rotation.to_rotation_matrix().matrix();
        s.trans[i] = pose.translation.vector / s.scale_ref;
        s.log_depth[i] = log_depths(&depth, &valid);
    }
    s
}
