use super::{ConfidenceMap, Pointmap, Vec3};
use crate::error::{Error, Result};

/// Per-pixel confidence-weighted mean of several pointmaps in one frame.
/// The fused confidence is the sum over measurements valid at that pixel;
/// pixels valid in none stay invalid with confidence 1.
pub fn fuse_confidence(measurements: &[(&Pointmap, &ConfidenceMap)]) -> Result<(Pointmap, ConfidenceMap)> {
    let Some((first, _)) = measurements.first() else {
        return Err(Error::InvalidInput("nothing to fuse".into()));
    };
    let (h, w, frame) = (first.height, first.width, first.frame);
    for (pm, c) in measurements {
        if pm.frame != frame {
            return Err(Error::FrameTag {
                expected: frame.to_string(),
                found: pm.frame.to_string(),
            });
        }
        if (pm.height, pm.width) != (h, w) || (c.height, c.width) != (h, w) {
            return Err(Error::InvalidInput("fused maps differ in resolution".into()));
        }
    }
    let n = h * w;
    let mut points = vec![Vec3::zeros(); n];
    let mut valid = vec![false; n];
    let mut conf = vec![1.0; n];
    for i in 0..n {
        let mut acc = Vec3::zeros();
        let mut wsum = 0.0;
        for (pm, c) in measurements {
            if pm.valid[i] {
                acc += pm.points[i] * c.values[i];
                wsum += c.values[i];
            }
        }
        if wsum > 0.0 {
            points[i] = acc / wsum;
            valid[i] = true;
            conf[i] = wsum;
        }
    }
    Ok((
        Pointmap::new(h, w, frame, points, valid)?,
        ConfidenceMap::new(h, w, conf)?,
    ))
}
