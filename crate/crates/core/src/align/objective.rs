//! The alignment objective and its gradient.
//!
//! Rotations are parameterized by a left increment `w` on a base rotation,
//! `R = (I + [w]x) R0`, always evaluated at `w = 0` and folded into `R0`
//! after each step, so values use `R0` and the gradient with respect to
//! `w` follows from `d(R v) = w x (R v)`.

use nalgebra::{Matrix3, Rotation3};

use super::graph::{AlignmentGraph, FlowObs, Measurement, NodeKind};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose, Vec3};
use crate::par;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

/// Objective value broken into its terms (`total` includes the weights).
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct Terms {
    pub align: f64,
    pub smooth: f64,
    pub flow: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Weights {
    pub smooth: f64,
    pub flow: f64,
    /// Residual smoothing, relative to the scale reference.
    pub eps_rel: f64,
    /// Flow residual smoothing in pixels.
    pub flow_eps: f64,
    /// Flow residuals above `max(this, 3 * median)` are treated as moving.
    pub flow_dynamic_px: f64,
}

/// Optimization variables.
#[derive(Clone, Debug)]
pub(crate) struct State {
    pub rot: Vec<Matrix3<f64>>,
    /// Translation divided by `scale_ref`.
    pub trans: Vec<Vec3>,
    pub log_depth: Vec<Vec<f64>>,
    pub log_focal: f64,
    pub log_scale: Vec<f64>,
    pub log_offset: Vec<f64>,
    /// Mean measurement distance, fixing the unit of translations.
    pub scale_ref: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct Grad {
    pub omega: Vec<Vec3>,
    pub trans: Vec<Vec3>,
    pub log_depth: Vec<Vec<f64>>,
    pub log_focal: f64,
    pub log_scale: Vec<f64>,
    pub log_offset: Vec<f64>,
}

impl Grad {
    fn zeros(s: &State) -> Self {
        Self {
            omega: vec![Vec3::zeros(); s.rot.len()],
            trans: vec![Vec3::zeros(); s.rot.len()],
            log_depth: s.log_depth.iter().map(|d| vec![0.0; d.len()]).collect(),
            log_focal: 0.0,
            log_scale: vec![0.0; s.log_scale.len()],
            log_offset: vec![0.0; s.log_offset.len()],
        }
    }
}

impl State {
    pub fn pose(&self, n: usize) -> Pose {
        let r = Rotation3::from_matrix_unchecked(self.rot[n]);
        Pose::from_parts(
            (self.trans[n] * self.scale_ref).into(),
            nalgebra::UnitQuaternion::from_rotation_matrix(&r),
        )
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            f: self.log_focal.exp(),
            cx: self.cx,
            cy: self.cy,
        }
    }

    fn scale_of(&self, m: &Measurement) -> f64 {
        let lo = if m.interp { self.log_offset[m.target] } else { 0.0 };
        (self.log_scale[m.edge] + lo).exp()
    }
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    a.cross(b)
}

struct MeasOut {
    value: f64,
    g_depth: Vec<f64>,
    g_focal: f64,
    g_omega_t: Vec3,
    g_trans_t: Vec3,
    g_omega_r: Vec3,
    g_trans_r: Vec3,
    g_scale: f64,
}

fn measurement_term(s: &State, width: usize, m: &Measurement, eps_rel: f64, grad: bool) -> MeasOut {
    let (a, n) = (m.target, m.reference);
    let f = s.log_focal.exp();
    let sigma = s.scale_of(m);
    let eps = eps_rel * s.scale_ref;
    let norm = 1.0 / (m.valid_count.max(1) as f64 * s.scale_ref);
    let (ra, rn) = (&s.rot[a], &s.rot[n]);
    let (ta, tn) = (s.trans[a] * s.scale_ref, s.trans[n] * s.scale_ref);
    let ld = &s.log_depth[a];
    let mut out = MeasOut {
        value: 0.0,
        g_depth: if grad { vec![0.0; ld.len()] } else { Vec::new() },
        g_focal: 0.0,
        g_omega_t: Vec3::zeros(),
        g_trans_t: Vec3::zeros(),
        g_omega_r: Vec3::zeros(),
        g_trans_r: Vec3::zeros(),
        g_scale: 0.0,
    };
    let mut sum = 0.0;
    for (p, (&wp, y)) in m.weights.iter().zip(&m.points).enumerate() {
        if wp == 0.0 {
            continue;
        }
        let d = ld[p].exp();
        let x = Vec3::new(
            d * ((p % width) as f64 - s.cx) / f,
            d * ((p / width) as f64 - s.cy) / f,
            d,
        );
        let rx = ra * x;
        let ry = rn * (y * sigma);
        let delta = (rx + ta) - (ry + tn);
        let q = (delta.norm_squared() + eps * eps).sqrt();
        sum += wp * (q - eps);
        if grad {
            let g = delta * (wp / q * norm);
            out.g_depth[p] = g.dot(&rx);
            out.g_focal -= g.dot(&(ra * Vec3::new(x.x, x.y, 0.0)));
            out.g_omega_t += cross(&rx, &g);
            out.g_trans_t += g;
            out.g_omega_r -= cross(&ry, &g);
            out.g_trans_r -= g;
            out.g_scale -= g.dot(&ry);
        }
    }
    out.value = sum * norm;
    out.g_trans_t *= s.scale_ref;
    out.g_trans_r *= s.scale_ref;
    out
}

struct FlowOut {
    value: f64,
    g_depth: Vec<f64>,
    g_focal: f64,
    g_omega_i: Vec3,
    g_trans_i: Vec3,
    g_omega_j: Vec3,
    g_trans_j: Vec3,
}

/// Per-pixel induced-flow error for a frame pair, `None` where the flow is
/// invalid or the point lands behind camera `j`.
fn induced_flow_errors(s: &State, width: usize, fo: &FlowObs) -> Vec<Option<(f64, f64)>> {
    let f = s.log_focal.exp();
    let (ri, rj) = (&s.rot[fo.from], &s.rot[fo.to]);
    let (ti, tj) = (s.trans[fo.from] * s.scale_ref, s.trans[fo.to] * s.scale_ref);
    let ld = &s.log_depth[fo.from];
    (0..ld.len())
        .map(|p| {
            if !fo.flow.valid[p] {
                return None;
            }
            let (u, v) = ((p % width) as f64, (p / width) as f64);
            let d = ld[p].exp();
            let x = Vec3::new(d * (u - s.cx) / f, d * (v - s.cy) / f, d);
            let z = rj.transpose() * (ri * x + ti - tj);
            if z.z <= 0.0 {
                return None;
            }
            let uh = f * z.x / z.z + s.cx;
            let vh = f * z.y / z.z + s.cy;
            Some((uh - (u + fo.flow.u[p] as f64), vh - (v + fo.flow.v[p] as f64)))
        })
        .collect()
}

/// Pixels kept by the moving-pixel rejection for the current state.
pub(crate) fn flow_support(errs: &[Option<(f64, f64)>], min_px: f64) -> Vec<bool> {
    let mut mags: Vec<f64> = errs.iter().flatten().map(|e| e.0.hypot(e.1)).collect();
    if mags.is_empty() {
        return vec![false; errs.len()];
    }
    let mid = mags.len() / 2;
    let median = *mags.select_nth_unstable_by(mid, f64::total_cmp).1;
    let thresh = min_px.max(3.0 * median);
    errs.iter()
        .map(|e| e.is_some_and(|e| e.0.hypot(e.1) <= thresh))
        .collect()
}

fn flow_term(s: &State, width: usize, fo: &FlowObs, w: &Weights, grad: bool) -> FlowOut {
    let errs = induced_flow_errors(s, width, fo);
    let keep = flow_support(&errs, w.flow_dynamic_px);
    let count = keep.iter().filter(|&&k| k).count();
    let mut out = FlowOut {
        value: 0.0,
        g_depth: if grad { vec![0.0; errs.len()] } else { Vec::new() },
        g_focal: 0.0,
        g_omega_i: Vec3::zeros(),
        g_trans_i: Vec3::zeros(),
        g_omega_j: Vec3::zeros(),
        g_trans_j: Vec3::zeros(),
    };
    if count == 0 {
        return out;
    }
    let inv = 1.0 / count as f64;
    let eps = w.flow_eps;
    let f = s.log_focal.exp();
    let (ri, rj) = (&s.rot[fo.from], &s.rot[fo.to]);
    let (ti, tj) = (s.trans[fo.from] * s.scale_ref, s.trans[fo.to] * s.scale_ref);
    let ld = &s.log_depth[fo.from];
    let mut sum = 0.0;
    for p in 0..errs.len() {
        if !keep[p] {
            continue;
        }
        let e = errs[p].expect("kept pixels have errors");
        let q = (e.0 * e.0 + e.1 * e.1 + eps * eps).sqrt();
        sum += q - eps;
        if !grad {
            continue;
        }
        let (u, v) = ((p % width) as f64, (p / width) as f64);
        let d = ld[p].exp();
        let x = Vec3::new(d * (u - s.cx) / f, d * (v - s.cy) / f, d);
        let rx = ri * x;
        let dd = rx + ti - tj;
        let z = rj.transpose() * dd;
        let (gu, gv) = (e.0 / q * inv, e.1 / q * inv);
        let gz = Vec3::new(gu, gv, -(gu * z.x + gv * z.y) / z.z) * (f / z.z);
        let gw = rj * gz;
        out.g_depth[p] = gw.dot(&rx);
        out.g_focal += -gw.dot(&(ri * Vec3::new(x.x, x.y, 0.0))) + gu * (f * z.x / z.z) + gv * (f * z.y / z.z);
        out.g_omega_i += cross(&rx, &gw);
        out.g_trans_i += gw;
        out.g_omega_j += cross(&gw, &dd);
        out.g_trans_j -= gw;
    }
    out.value = sum * inv;
    out.g_trans_i *= s.scale_ref;
    out.g_trans_j *= s.scale_ref;
    out
}

/// Nodes taking part in a stage, in time order.
pub(crate) fn active_nodes(g: &AlignmentGraph, stage: Stage) -> Vec<usize> {
    (0..g.nodes.len())
        .filter(|&i| stage == Stage::Fine || g.nodes[i].kind == NodeKind::Frame)
        .collect()
}

/// Smoothness: squared change of translational and rotational velocity
/// over consecutive node triples, with time measured in units of the
/// median node spacing and translation in units of `scale_ref`.
fn smooth_term(g: &AlignmentGraph, s: &State, stage: Stage, grad: Option<&mut Grad>) -> Result<f64> {
    let nodes = active_nodes(g, stage);
    if nodes.len() < 3 {
        return Ok(0.0);
    }
    let mut gaps: Vec<f64> = nodes
        .windows(2)
        .map(|w| g.nodes[w[1]].timestamp - g.nodes[w[0]].timestamp)
        .collect();
    gaps.sort_by(f64::total_cmp);
    let unit = gaps[gaps.len() / 2];
    if !(unit > 0.0) {
        return Err(Error::Degenerate("alignment nodes share a timestamp".into()));
    }
    let tape: Graph<f64> = Graph::new();
    // maps w (1x3) to the row-major skew matrix (1x9)
    let gen = tape.constant(
        Tensor::new(
            &[3, 9],
            vec![
                0., 0., 0., 0., 0., -1., 0., 1., 0., //
                0., 0., 1., 0., 0., 0., -1., 0., 0., //
                0., -1., 0., 1., 0., 0., 0., 0., 0.,
            ],
        )
        .expect("static shape"),
    );
    let eye = tape.constant(Tensor::new(&[3, 3], Matrix3::<f64>::identity().as_slice().to_vec()).expect("3x3"));
    let mut omegas = Vec::new();
    let mut transl = Vec::new();
    let mut rots = Vec::new();
    for &n in &nodes {
        let w = tape.param(Tensor::zeros(&[1, 3]));
        let t = tape.param(Tensor::new(&[1, 3], s.trans[n].as_slice().to_vec()).expect("1x3"));
        let r0: Vec<f64> = (0..9).map(|k| s.rot[n][(k / 3, k % 3)]).collect();
        let r0 = tape.constant(Tensor::new(&[3, 3], r0).expect("3x3"));
        let r = w.matmul(gen)?.reshape(&[3, 3])?.add(eye)?.matmul(r0)?;
        omegas.push(w);
        transl.push(t);
        rots.push(r);
    }
    let time = |k: usize| g.nodes[nodes[k]].timestamp / unit;
    let vel = |a: usize, b: usize| -> Result<_> {
        let inv = 1.0 / (time(b) - time(a));
        let v = transl[b].sub(transl[a])?.mul_const(inv);
        let rel = rots[a].transpose()?.matmul(rots[b])?.reshape(&[1, 9])?;
        let w = rel.so3_log()?.mul_const(inv);
        Ok((v, w))
    };
    let mut total = None;
    for k in 0..nodes.len() - 2 {
        let (v1, w1) = vel(k, k + 1)?;
        let (v2, w2) = vel(k + 1, k + 2)?;
        let term = v2.sub(v1)?.square().sum().add(w2.sub(w1)?.square().sum())?;
        total = Some(match total {
            None => term,
            Some(acc) => term.add(acc)?,
        });
    }
    let total = total.expect("at least one triple");
    let value = total.value().item();
    if let Some(gr) = grad {
        let grads = total.backward()?;
        for (k, &n) in nodes.iter().enumerate() {
            let gw = grads.get_or_zeros(omegas[k]);
            let gt = grads.get_or_zeros(transl[k]);
            gr.omega[n] += Vec3::from_column_slice(gw.data());
            gr.trans[n] += Vec3::from_column_slice(gt.data());
        }
    }
    Ok(value)
}

fn scale_grad(g: &mut Grad, k: f64) {
    g.omega.iter_mut().for_each(|v| *v *= k);
    g.trans.iter_mut().for_each(|v| *v *= k);
    g.log_depth.iter_mut().flatten().for_each(|v| *v *= k);
    g.log_focal *= k;
    g.log_scale.iter_mut().for_each(|v| *v *= k);
    g.log_offset.iter_mut().for_each(|v| *v *= k);
}

fn add_grad(acc: &mut Grad, other: &Grad) {
    for (a, b) in acc.omega.iter_mut().zip(&other.omega) {
        *a += b;
    }
    for (a, b) in acc.trans.iter_mut().zip(&other.trans) {
        *a += b;
    }
    for (a, b) in acc.log_depth.iter_mut().flatten().zip(other.log_depth.iter().flatten()) {
        *a += b;
    }
    acc.log_focal += other.log_focal;
    for (a, b) in acc.log_scale.iter_mut().zip(&other.log_scale) {
        *a += b;
    }
    for (a, b) in acc.log_offset.iter_mut().zip(&other.log_offset) {
        *a += b;
    }
}

pub(crate) fn measurements(g: &AlignmentGraph, stage: Stage) -> Vec<&Measurement> {
    match stage {
        Stage::Coarse => g.coarse.iter().collect(),
        Stage::Fine => g.coarse.iter().chain(&g.fine).collect(),
    }
}

/// Objective and, optionally, its gradient. Per-measurement work runs in
/// parallel and is reduced in measurement order.
pub(crate) fn evaluate(
    g: &AlignmentGraph,
    s: &State,
    stage: Stage,
    w: &Weights,
    want_grad: bool,
) -> Result<(Terms, Option<Grad>)> {
    let width = g.width;
    let meas = measurements(g, stage);
    let outs = par::map(&meas, |m| measurement_term(s, width, m, w.eps_rel, want_grad));
    let mut align_grad = want_grad.then(|| Grad::zeros(s));
    let mut align = 0.0;
    for (m, o) in meas.iter().zip(&outs) {
        align += o.value;
        if let Some(gr) = align_grad.as_mut() {
            for (a, b) in gr.log_depth[m.target].iter_mut().zip(&o.g_depth) {
                *a += b;
            }
            gr.log_focal += o.g_focal;
            gr.omega[m.target] += o.g_omega_t;
            gr.trans[m.target] += o.g_trans_t;
            gr.omega[m.reference] += o.g_omega_r;
            gr.trans[m.reference] += o.g_trans_r;
            gr.log_scale[m.edge] += o.g_scale;
            if m.interp {
                gr.log_offset[m.target] += o.g_scale;
            }
        }
    }

    let mut flow = 0.0;
    let mut flow_grad = want_grad.then(|| Grad::zeros(s));
    if stage == Stage::Coarse && w.flow > 0.0 {
        let flows: Vec<&FlowObs> = g.flows.iter().collect();
        let outs = par::map(&flows, |fo| flow_term(s, width, fo, w, want_grad));
        for (fo, o) in flows.iter().zip(&outs) {
            flow += o.value;
            if let Some(gr) = flow_grad.as_mut() {
                for (a, b) in gr.log_depth[fo.from].iter_mut().zip(&o.g_depth) {
                    *a += b;
                }
                gr.log_focal += o.g_focal;
                gr.omega[fo.from] += o.g_omega_i;
                gr.trans[fo.from] += o.g_trans_i;
                gr.omega[fo.to] += o.g_omega_j;
                gr.trans[fo.to] += o.g_trans_j;
            }
        }
    }

    let mut smooth_grad = want_grad.then(|| Grad::zeros(s));
    let smooth = if w.smooth > 0.0 {
        smooth_term(g, s, stage, smooth_grad.as_mut())?
    } else {
        0.0
    };

    let total = align + w.smooth * smooth + w.flow * flow;
    let terms = Terms {
        align,
        smooth,
        flow,
        total,
    };
    let grad = match (align_grad, flow_grad, smooth_grad) {
        (Some(mut a), Some(mut f), Some(mut sm)) => {
            scale_grad(&mut f, w.flow);
            scale_grad(&mut sm, w.smooth);
            add_grad(&mut a, &f);
            add_grad(&mut a, &sm);
            Some(a)
        }
        _ => None,
    };
    Ok((terms, grad))
}

/// Objective terms of a solved state, as reported in alignment logs.
pub fn evaluate_terms(
    graph: &AlignmentGraph,
    solution: &super::Solution,
    stage: Stage,
    config: &super::AlignConfig,
) -> Result<Terms> {
    let s = super::solve::state_from_solution(graph, solution)?;
    Ok(evaluate(graph, &s, stage, &config.weights(), false)?.0)
}
