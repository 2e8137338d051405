use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{umeyama_align, AlignMode, Pose, Vec3};

/// Depth error after a per-sequence scale and shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub delta_1_25: f64,
    /// Pixels the metrics were averaged over.
    pub pixels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoseMetrics {
    pub ate: f64,
    pub rte: f64,
    /// Degrees.
    pub rre: f64,
}

/// Predicted and ground-truth depth of one frame.
#[derive(Clone, Copy, Debug)]
pub struct DepthFrame<'a> {
    pub pred: &'a [f64],
    pub gt: &'a [f64],
    pub mask: Option<&'a [bool]>,
    /// Whether the frame counts towards the metrics; every frame
    /// contributes to the fit.
    pub evaluated: bool,
}

impl DepthFrame<'_> {
    fn valid(&self, i: usize) -> bool {
        self.mask.is_none_or(|m| m[i]) && self.gt[i] > 0.0 && self.gt[i].is_finite() && self.pred[i].is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthFit {
    /// Least-squares scale and shift over all valid pixels.
    LeastSquares,
    Fixed {
        scale: f64,
        shift: f64,
    },
}

/// Least-squares `(s, b)` minimizing `sum (s * pred + b - gt)^2`.
pub fn fit_scale_shift(frames: &[DepthFrame<'_>]) -> Result<(f64, f64)> {
    let (mut n, mut sp, mut sg, mut spp, mut spg, mut sgg) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for f in frames {
        for i in 0..f.gt.len() {
            if f.valid(i) {
                let (p, g) = (f.pred[i], f.gt[i]);
                n += 1.0;
                sp += p;
                sg += g;
                spp += p * p;
                spg += p * g;
                sgg += g * g;
            }
        }
    }
    if n < 2.0 {
        return Err(Error::Degenerate("fewer than two valid depth pixels".into()));
    }
    let var_p = spp - sp * sp / n;
    let var_g = sgg - sg * sg / n;
    let tol = 1e-12 * n;
    if var_p <= tol * (spp / n).max(1e-300) || var_g <= tol * (sgg / n).max(1e-300) {
        return Err(Error::Degenerate(
            "constant depth, scale and shift are not identifiable".into(),
        ));
    }
    let s = (spg - sp * sg / n) / var_p;
    Ok((s, (sg - s * sp) / n))
}

/// Abs Rel and max-ratio inlier fraction over the evaluated frames.
pub fn depth_metrics(frames: &[DepthFrame<'_>], fit: DepthFit) -> Result<DepthMetrics> {
    for f in frames {
        if f.pred.len() != f.gt.len() || f.mask.is_some_and(|m| m.len() != f.gt.len()) {
            return Err(Error::shape(
                "depth_metrics",
                "prediction, ground truth and mask sizes differ",
            ));
        }
    }
    let (s, b) = match fit {
        DepthFit::LeastSquares => fit_scale_shift(frames)?,
        DepthFit::Fixed { scale, shift } => (scale, shift),
    };
    let (mut rel, mut inl, mut n) = (0.0, 0usize, 0usize);
    for f in frames.iter().filter(|f| f.evaluated) {
        for i in 0..f.gt.len() {
            if !f.valid(i) {
                continue;
            }
            let d = s * f.pred[i] + b;
            let g = f.gt[i];
            rel += (d - g).abs() / g;
            if d > 0.0 && (d / g).max(g / d) < 1.25 {
                inl += 1;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("no valid pixels on evaluated frames".into()));
    }
    Ok(DepthMetrics {
        abs_rel: rel / n as f64,
        delta_1_25: inl as f64 / n as f64,
        pixels: n,
    })
}

/// ATE after a Sim(3) fit of the camera centres, and mean translation and
/// rotation errors of consecutive relative poses under the same fit.
pub fn pose_metrics(pred: &[Pose], gt: &[Pose]) -> Result<PoseMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "{} predicted and {} ground-truth poses",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "ATE needs at least 3 poses, got {}",
            pred.len()
        )));
    }
    let pc: Vec<Vec3> = pred.iter().map(|p| p.translation.vector).collect();
    let gc: Vec<Vec3> = gt.iter().map(|p| p.translation.vector).collect();
    let sim = umeyama_align(&pc, &gc, AlignMode::Sim3)?;
    let (s, r, t) = (sim.scaling(), sim.isometry.rotation, sim.isometry.translation.vector);
    let aligned: Vec<(nalgebra::UnitQuaternion<f64>, Vec3)> = pred
        .iter()
        .map(|p| (r * p.rotation, r * p.translation.vector * s + t))
        .collect();
    let mut sq = 0.0;
    for ((_, c), g) in aligned.iter().zip(&gc) {
        sq += (c - g).norm_squared();
    }
    let (mut te, mut re) = (0.0, 0.0);
    for i in 0..pred.len() - 1 {
        let (ra, ta) = aligned[i];
        let (rb, tb) = aligned[i + 1];
        let (ga, gb) = (&gt[i], &gt[i + 1]);
        let rel_t = ra.inverse() * (tb - ta);
        let gt_t = ga.rotation.inverse() * (gb.translation.vector - ga.translation.vector);
        let rel_r = ra.inverse() * rb;
        let gt_r = ga.rotation.inverse() * gb.rotation;
        te += (rel_t - gt_t).norm();
        re += (rel_r.inverse() * gt_r).angle().to_degrees();
    }
    let m = (pred.len() - 1) as f64;
    Ok(PoseMetrics {
        ate: (sq / pred.len() as f64).sqrt(),
        rte: te / m,
        rre: re / m,
    })
}
