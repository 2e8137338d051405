use crate::scene::FlowField;

fn bilinear(f: &FlowField, x: f64, y: f64) -> Option<(f64, f64)> {
    let (w, h) = (f.width, f.height);
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = (0.0, 0.0);
    for (xx, yy, wt) in [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ] {
        let i = yy * w + xx;
        if wt > 0.0 && !f.valid[i] {
            return None;
        }
        out.0 += wt * f.u[i] as f64;
        out.1 += wt * f.v[i] as f64;
    }
    Some(out)
}

/// Composes consecutive flows `f[0]`, `f[1]`, ... into one flow from the
/// first frame to the last. A pixel stays valid only while every hop lands
/// among valid neighbours.
pub fn chain_flow(flows: &[&FlowField]) -> Option<FlowField> {
    let first = flows.first()?;
    let mut out = (*first).clone();
    for next in &flows[1..] {
        for i in 0..out.valid.len() {
            if !out.valid[i] {
                continue;
            }
            let x = (i % out.width) as f64 + out.u[i] as f64;
            let y = (i / out.width) as f64 + out.v[i] as f64;
            match bilinear(next, x, y) {
                Some((du, dv)) => {
                    out.u[i] = (out.u[i] as f64 + du) as f32;
                    out.v[i] = (out.v[i] as f64 + dv) as f32;
                }
                None => out.valid[i] = false,
            }
        }
    }
    Some(out)
}
