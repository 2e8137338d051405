//! Plain-data inference wrappers around the tape forward passes.

use super::layers::Bound;
use super::model::{BaseVars, DirectionInputs, Model, Variant};
use crate::error::{Error, Result};
use crate::events::EventVoxelGrid;
use crate::geometry::{norm_factor, ConfidenceMap, Frame, Pointmap, Vec3};
use crate::tensor::{Graph, Scalar, Var};

/// Source pointmaps and confidences of a frame pair, both in the
/// coordinates of the first frame's camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Sources {
    pub points: [Pointmap; 2],
    pub conf: [ConfidenceMap; 2],
}

impl Sources {
    /// Mean distance of all valid source points from the origin.
    pub fn scale(&self) -> Result<f64> {
        norm_factor(&[&self.points[0], &self.points[1]])
    }
}

/// Target-time predictions from the start (index 0) and end (index 1)
/// frames, both in the start camera.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpOutput {
    pub points: [Pointmap; 2],
    pub conf: [ConfidenceMap; 2],
}

fn read_head<T: Scalar>(
    points: Var<'_, T>,
    conf: Var<'_, T>,
    order: &[usize],
    h: usize,
    w: usize,
    frame: Frame,
    factor: f64,
) -> Result<(Pointmap, ConfidenceMap)> {
    let (pv, cv) = (points.value(), conf.value());
    let (pd, cd) = (pv.data(), cv.data());
    let mut pts = vec![Vec3::zeros(); h * w];
    let mut cs = vec![0.0; h * w];
    for (r, &i) in order.iter().enumerate() {
        pts[i] = Vec3::new(pd[3 * r].as_f64(), pd[3 * r + 1].as_f64(), pd[3 * r + 2].as_f64()) * factor;
        cs[i] = cd[r].as_f64();
    }
    let pm = Pointmap::new(h, w, frame, pts, vec![true; h * w])?;
    if let Some(i) = pm.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite {
            context: format!("predicted point at pixel {i}"),
        });
    }
    Ok((pm, ConfidenceMap::new(h, w, cs)?))
}

/// Channel-major encoder inputs of one source: points divided by `scale`
/// (invalid pixels zero) and log confidence.
pub fn source_channels<T: Scalar>(pm: &Pointmap, conf: &ConfidenceMap, scale: f64) -> (Vec<T>, Vec<T>) {
    let n = pm.len();
    let mut pts = vec![T::zero(); 3 * n];
    for (i, p) in pm.points.iter().enumerate() {
        if pm.valid[i] {
            for k in 0..3 {
                pts[k * n + i] = T::lit(p[k] / scale);
            }
        }
    }
    let logc = conf.values.iter().map(|c| T::lit(c.ln())).collect();
    (pts, logc)
}

impl<T: Scalar> Model<T> {
    fn check_frames(&self, frames: [&[f32]; 2]) -> Result<()> {
        let n = self.config.pixels();
        for f in frames {
            if f.len() != n {
                return Err(Error::shape(
                    "forward",
                    format!(
                        "frame with {} pixels, model expects {}x{}",
                        f.len(),
                        self.config.height,
                        self.config.width
                    ),
                ));
            }
        }
        Ok(())
    }

    fn base_sources(&self, base: &BaseVars<'_, T>, reference: Frame) -> Result<Sources> {
        let (h, w) = (self.config.height, self.config.width);
        let order = self.pixel_order();
        let (p0, c0) = read_head(base.points[0], base.conf[0], &order, h, w, reference, 1.0)?;
        let (p1, c1) = read_head(base.points[1], base.conf[1], &order, h, w, reference, 1.0)?;
        Ok(Sources {
            points: [p0, p1],
            conf: [c0, c1],
        })
    }

    /// Base (pairwise) prediction for a frame pair.
    pub fn predict_sources(&self, frames: [&[f32]; 2], reference: Frame) -> Result<Sources> {
        self.check_frames(frames)?;
        let tape = Graph::new();
        let p = Bound::new(&tape, &self.params, |_| false);
        let base = self.base_graph(&p, frames)?;
        self.base_sources(&base, reference)
    }

    /// Interpolates the pointmap at `tau` from both directions. Without
    /// explicit `sources` the base prediction is used; otherwise outputs are
    /// rescaled from the base scale to the scale of the given sources.
    /// Returns the base prediction alongside.
    pub fn interpolate(
        &self,
        frames: [&[f32]; 2],
        sources: Option<&Sources>,
        events: [&EventVoxelGrid; 2],
        tau: f64,
        variant: Variant,
        reference: Frame,
    ) -> Result<(Sources, InterpOutput)> {
        self.check_frames(frames)?;
        let (h, w) = (self.config.height, self.config.width);
        let tape = Graph::new();
        let p = Bound::new(&tape, &self.params, |_| false);
        let base = self.base_graph(&p, frames)?;
        let predicted = self.base_sources(&base, reference)?;
        let src = sources.unwrap_or(&predicted);
        for pm in &src.points {
            if (pm.height, pm.width) != (h, w) {
                return Err(Error::shape("interpolate", "source resolution differs from the model"));
            }
            if pm.frame != reference {
                return Err(Error::FrameTag {
                    expected: reference.to_string(),
                    found: pm.frame.to_string(),
                });
            }
        }
        let z_src = src.scale()?;
        let z_base = predicted.scale()?;
        let factor = if sources.is_some() { z_src / z_base } else { 1.0 };
        let c0 = source_channels::<T>(&src.points[0], &src.conf[0], z_src);
        let c1 = source_channels::<T>(&src.points[1], &src.conf[1], z_src);
        let d0 = DirectionInputs {
            points: &c0.0,
            log_conf: &c0.1,
            events: events[0],
        };
        let d1 = DirectionInputs {
            points: &c1.0,
            log_conf: &c1.1,
            events: events[1],
        };
        let out = self.interp_graph(&p, &base, [&d0, &d1], tau, variant)?;
        let order = self.pixel_order();
        let (x0, k0) = read_head(out[0].0, out[0].1, &order, h, w, reference, factor)?;
        let (x1, k1) = read_head(out[1].0, out[1].1, &order, h, w, reference, factor)?;
        Ok((
            predicted,
            InterpOutput {
                points: [x0, x1],
                conf: [k0, k1],
            },
        ))
    }
}
