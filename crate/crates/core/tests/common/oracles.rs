//! Independent reference implementations and random inputs.

use ctgeo::eval::DepthFrame;
use ctgeo::events::{Event, EventStream, EventVoxelGrid};
use ctgeo::geometry::Pose;
use ctgeo::net::ModelConfig;
use ctgeo::scene::Sequence;
use nalgebra::{Matrix3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_stream(seed: u64, n: usize, h: u16, w: u16) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..n)
        .map(|_| Event {
            t: rng.random::<f64>(),
            x: rng.random_range(0..w),
            y: rng.random_range(0..h),
            polarity: if rng.random::<bool>() { 1 } else { -1 },
        })
        .collect();
    EventStream::new(h as usize, w as usize, 0.0, 1.0, events).unwrap()
}

pub fn random_video(seed: u64, t: usize, npix: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = vec![(0..npix).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>()];
    for _ in 1..t {
        let prev = frames.last().unwrap().clone();
        frames.push(prev.iter().map(|v| v + rng.random_range(-0.9..0.9)).collect());
    }
    let mut ts = vec![0.0];
    for _ in 1..t {
        let last = *ts.last().unwrap();
        ts.push(last + rng.random_range(0.05..0.3));
    }
    (frames, ts)
}

/// Straightforward accumulation in event order, without any row bucketing.
pub fn voxel_oracle(s: &EventStream, bins: usize) -> Vec<f32> {
    let (h, w) = (s.height(), s.width());
    let mut g = vec![0.0f32; bins * h * w];
    let (t0, t1) = s.span();
    for e in s.events() {
        let tb = if t1 > t0 {
            ((e.t - t0) / (t1 - t0) * (bins - 1) as f64).clamp(0.0, (bins - 1) as f64)
        } else {
            0.0
        };
        let lo = tb.floor() as usize;
        let frac = (tb - lo as f64) as f32;
        let p = e.polarity as f32;
        let (y, x) = (e.y as usize, e.x as usize);
        g[(lo * h + y) * w + x] += p * (1.0 - frac);
        if lo + 1 < bins {
            g[((lo + 1) * h + y) * w + x] += p * frac;
        }
    }
    g
}

pub fn same_up_to_rounding(a: &EventStream, b: &EventStream) -> bool {
    a.len() == b.len()
        && a.span() == b.span()
        && a.events()
            .iter()
            .zip(b.events())
            .all(|(x, y)| x.x == y.x && x.y == y.y && x.polarity == y.polarity && (x.t - y.t).abs() <= 1e-15)
}

pub struct DepthCase {
    pub pred: Vec<Vec<f64>>,
    pub gt: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub evaluated: Vec<bool>,
}

impl DepthCase {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let frames = rng.random_range(2..5);
        let n = rng.random_range(3..20);
        let mut c = DepthCase {
            pred: vec![],
            gt: vec![],
            mask: vec![],
            evaluated: vec![],
        };
        for f in 0..frames {
            c.gt.push((0..n).map(|_| rng.random_range(0.5..10.0)).collect());
            c.pred.push(
                c.gt[f]
                    .iter()
                    .map(|g| 0.7 * g + 0.2 + rng.random_range(-0.5..0.5))
                    .collect(),
            );
            c.mask.push((0..n).map(|_| rng.random_bool(0.85)).collect());
            c.evaluated.push(f == 0 || rng.random_bool(0.5));
        }
        c
    }

    pub fn frames(&self) -> Vec<DepthFrame<'_>> {
        (0..self.gt.len())
            .map(|f| DepthFrame {
                pred: &self.pred[f],
                gt: &self.gt[f],
                mask: Some(&self.mask[f]),
                evaluated: self.evaluated[f],
            })
            .collect()
    }

    /// Scalar loop over evaluated, masked pixels under a given fit.
    pub fn oracle(&self, s: f64, b: f64) -> (f64, f64) {
        let (mut rel, mut good, mut n) = (0.0, 0.0, 0.0);
        for f in 0..self.gt.len() {
            if !self.evaluated[f] {
                continue;
            }
            for i in 0..self.gt[f].len() {
                if !self.mask[f][i] {
                    continue;
                }
                let d = s * self.pred[f][i] + b;
                let g = self.gt[f][i];
                rel += (d - g).abs() / g;
                let ratio = if d / g > g / d { d / g } else { g / d };
                if d > 0.0 && ratio < 1.25 {
                    good += 1.0;
                }
                n += 1.0;
            }
        }
        (rel / n, good / n)
    }

    /// Normal equations of the scale/shift fit, solved by a 2x2 inverse.
    pub fn oracle_fit(&self) -> (f64, f64) {
        let mut a = nalgebra::Matrix2::<f64>::zeros();
        let mut r = nalgebra::Vector2::<f64>::zeros();
        for f in 0..self.gt.len() {
            for i in 0..self.gt[f].len() {
                if self.mask[f][i] {
                    let x = nalgebra::Vector2::new(self.pred[f][i], 1.0);
                    a += x * x.transpose();
                    r += x * self.gt[f][i];
                }
            }
        }
        let sol = a.try_inverse().unwrap() * r;
        (sol[0], sol[1])
    }
}

pub fn quat_angle_deg(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Umeyama with its own SVD and matrix rotations, for comparison only.
pub fn pose_oracle(pred: &[Pose], gt: &[Pose]) -> (f64, f64, f64) {
    let n = pred.len() as f64;
    let a: Vec<Vector3<f64>> = pred.iter().map(|p| p.translation.vector).collect();
    let b: Vec<Vector3<f64>> = gt.iter().map(|p| p.translation.vector).collect();
    let ma = a.iter().sum::<Vector3<f64>>() / n;
    let mb = b.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut va = 0.0;
    for (x, y) in a.iter().zip(&b) {
        cov += (y - mb) * (x - ma).transpose();
        va += (x - ma).norm_squared();
    }
    cov /= n;
    va /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        let (i, _) = svd.singular_values.argmin();
        d[(i, i)] = -1.0;
    }
    let r = u * d * vt;
    let s = (svd.singular_values.component_mul(&d.diagonal())).sum() / va;
    let t = mb - s * r * ma;
    let mut sq = 0.0;
    for (x, y) in a.iter().zip(&b) {
        sq += (s * r * x + t - y).norm_squared();
    }
    let rm: Vec<Matrix3<f64>> = pred
        .iter()
        .map(|p| r * p.rotation.to_rotation_matrix().into_inner())
        .collect();
    let tm: Vec<Vector3<f64>> = a.iter().map(|x| s * r * x + t).collect();
    let (mut te, mut re) = (0.0, 0.0);
    for i in 0..pred.len() - 1 {
        let g0 = gt[i].rotation.to_rotation_matrix().into_inner();
        let g1 = gt[i + 1].rotation.to_rotation_matrix().into_inner();
        let rel_t = rm[i].transpose() * (tm[i + 1] - tm[i]);
        let gt_t = g0.transpose() * (b[i + 1] - b[i]);
        te += (rel_t - gt_t).norm();
        let rel_r = rm[i].transpose() * rm[i + 1];
        let gt_r = g0.transpose() * g1;
        re += quat_angle_deg(&(rel_r.transpose() * gt_r));
    }
    ((sq / n).sqrt(), te / (n - 1.0), re / (n - 1.0))
}

pub fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> Pose {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Pose::from_parts(
        Translation3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        ),
        UnitQuaternion::from_scaled_axis(axis * 0.5),
    )
}

/// A copy of `seq` with the world moved by a similarity: poses become
/// `G * P` with scaled translation, depths scale by `s`.
pub fn transformed(seq: &Sequence, g: &Pose, s: f64) -> Sequence {
    let mut out = seq.clone();
    for c in &mut out.cameras {
        let mut p = c.pose;
        p.translation.vector *= s;
        c.pose = g * p;
    }
    for d in &mut out.depths {
        d.values.iter_mut().for_each(|v| *v *= s);
    }
    out
}

pub fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random::<f32>()).collect()
}

pub fn random_grid(rng: &mut ChaCha8Rng, c: &ModelConfig, empty: bool) -> EventVoxelGrid {
    let mut g = EventVoxelGrid::zeros(c.bins, c.height, c.width);
    if !empty {
        for v in &mut g.data {
            if rng.random_bool(0.2) {
                *v = rng.random_range(-3.0f32..3.0);
            }
        }
    }
    g
}
