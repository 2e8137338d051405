//! Confidence-weighted, scale-normalized pointmap regression.

use crate::error::{Error, Result};
use crate::geometry::{norm_factor, ConfidenceMap, Pointmap};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Smoothing of the point distance. A power of two, so a perfect
/// prediction gives exactly zero.
pub const SMOOTH_EPS: f64 = 1.0 / 1048576.0;

/// Target points (already divided by their scale) and validity, in the
/// same row order as the prediction.
pub struct Target<T: Scalar> {
    pub points: Tensor<T>,
    pub mask: Tensor<T>,
    pub count: usize,
}

impl<T: Scalar> Target<T> {
    /// Reorders `pm` by `order` (row `r` takes pixel `order[r]`) and
    /// divides it by `scale`.
    pub fn new(pm: &Pointmap, order: Option<&[usize]>, scale: f64) -> Result<Self> {
        let n = pm.len();
        let pick = |r: usize| order.map_or(r, |o| o[r]);
        let mut pts = Vec::with_capacity(3 * n);
        let mut mask = Vec::with_capacity(n);
        let mut count = 0;
        for r in 0..n {
            let i = pick(r);
            let p = pm.points[i];
            let ok = pm.valid[i] && p.iter().all(|v| v.is_finite());
            count += ok as usize;
            mask.push(if ok { T::one() } else { T::zero() });
            for k in 0..3 {
                pts.push(if ok { T::lit(p[k] / scale) } else { T::zero() });
            }
        }
        if count == 0 {
            return Err(Error::Degenerate("target has no valid points".into()));
        }
        Ok(Self {
            points: Tensor::new(&[n, 3], pts)?,
            mask: Tensor::new(&[n], mask)?,
            count,
        })
    }
}

/// Factor applied to predicted points before comparison.
#[derive(Clone, Copy)]
pub enum InvScale<'g, T: Scalar> {
    Const(T),
    Var(Var<'g, T>),
}

/// Mean over valid rows of `C * (sqrt(|x / z - xbar|^2 + eps^2) - eps) - alpha * log C`.
pub fn regression<'g, T: Scalar>(
    tape: &'g Graph<T>,
    points: Var<'g, T>,
    conf: Var<'g, T>,
    inv_scale: InvScale<'g, T>,
    target: &Target<T>,
    alpha: f64,
) -> Result<Var<'g, T>> {
    let n = target.mask.numel();
    let x = match inv_scale {
        InvScale::Const(k) => points.mul_const(k),
        InvScale::Var(k) => points.scale(k)?,
    };
    let eps = T::lit(SMOOTH_EPS);
    let d = x
        .sub(tape.constant(target.points.clone()))?
        .square()
        .sum_last()?
        .add_const(eps * eps)
        .sqrt()
        .add_const(-eps);
    let c = conf.reshape(&[n])?;
    let per = c.mul(d)?.sub(c.log().mul_const(T::lit(alpha)))?;
    Ok(per
        .mul(tape.constant(target.mask.clone()))?
        .sum()
        .mul_const(T::lit(1.0 / target.count as f64)))
}

/// Mean norm of the valid rows of `(n, 3)` points, kept on the tape.
pub fn mean_norm<'g, T: Scalar>(tape: &'g Graph<T>, points: &[Var<'g, T>], masks: &[&Tensor<T>]) -> Result<Var<'g, T>> {
    let mut total: Option<Var<'g, T>> = None;
    let mut count = 0.0;
    for (p, m) in points.iter().zip(masks) {
        let norms = p
            .square()
            .sum_last()?
            .add_const(T::lit(1e-12))
            .sqrt()
            .mul(tape.constant((*m).clone()))?
            .sum();
        count += m.data().iter().map(|v| v.as_f64()).sum::<f64>();
        total = Some(match total {
            Some(t) => t.add(norms)?,
            None => norms,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidInput("mean_norm of no pointmaps".into()))?;
    if count == 0.0 {
        return Err(Error::Degenerate("no valid points for the scale".into()));
    }
    Ok(total.mul_const(T::lit(1.0 / count)))
}

/// Interpolation loss on plain data: both directions' predictions of the
/// target pointmap. `source_scale` normalizes predictions, the ground
/// truth is normalized by the mean norm of `gt_sources`.
pub fn interp_loss(
    predictions: [(&Pointmap, &ConfidenceMap); 2],
    target: &Pointmap,
    source_scale: f64,
    gt_sources: [&Pointmap; 2],
    alpha: f64,
) -> Result<f64> {
    if !(source_scale > 0.0) || !source_scale.is_finite() {
        return Err(Error::Degenerate(format!("source scale {source_scale}")));
    }
    let zbar = norm_factor(&gt_sources)?;
    if !(zbar > 0.0) {
        return Err(Error::Degenerate("ground-truth scale is zero".into()));
    }
    let tape = Graph::<f64>::new();
    let tgt = Target::new(target, None, zbar)?;
    let mut total = 0.0;
    for (pm, conf) in predictions {
        if pm.frame != target.frame {
            return Err(Error::FrameTag {
                expected: target.frame.to_string(),
                found: pm.frame.to_string(),
            });
        }
        if pm.len() != target.len() || conf.values.len() != target.len() {
            return Err(Error::shape("interp_loss", "prediction and target sizes differ"));
        }
        let pts: Vec<f64> = pm.points.iter().flat_map(|p| [p[0], p[1], p[2]]).collect();
        let x = tape.constant(Tensor::new(&[pm.len(), 3], pts)?);
        let c = tape.constant(Tensor::new(&[pm.len(), 1], conf.values.clone())?);
        let l = regression(&tape, x, c, InvScale::Const(1.0 / source_scale), &tgt, alpha)?;
        total += l.value().item();
    }
    Ok(total)
}
