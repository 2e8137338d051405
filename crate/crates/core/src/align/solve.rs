use std::io::Write;

use serde::{Deserialize, Serialize};

use super::graph::{AlignmentGraph, NodeKind};
use super::init::{coarse_state, fine_state, gauge_edge};
pub use super::objective::Stage;
use super::objective::{active_nodes, evaluate, Grad, State, Terms, Weights};
use crate::error::{Error, Result};
use crate::geometry::{so3_exp, unproject, DepthMap, Frame, Intrinsics, Pointmap, Pose};
use crate::tensor::{AdamW, AdamWConfig, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub iterations: usize,
    /// Initial learning rate, decayed linearly to zero.
    pub lr: f64,
    pub w_smooth: f64,
    pub w_flow: f64,
    pub eps_rel: f64,
    pub flow_eps: f64,
    pub flow_dynamic_px: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            lr: 0.01,
            w_smooth: 0.01,
            w_flow: 0.01,
            eps_rel: 1e-4,
            flow_eps: 0.01,
            flow_dynamic_px: 0.1,
        }
    }
}

impl AlignConfig {
    pub(crate) fn weights(&self) -> Weights {
        Weights {
            smooth: self.w_smooth,
            flow: self.w_flow,
            eps_rel: self.eps_rel,
            flow_eps: self.flow_eps,
            flow_dynamic_px: self.flow_dynamic_px,
        }
    }

    /// Sets one option from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidInput(format!("bad value {value:?} for {key}"));
        let float = |v: &str| v.parse::<f64>().map_err(|_| bad());
        match key {
            "iterations" => self.iterations = value.parse().map_err(|_| bad())?,
            "lr" => self.lr = float(value)?,
            "w_smooth" => self.w_smooth = float(value)?,
            "w_flow" => self.w_flow = float(value)?,
            "eps_rel" => self.eps_rel = float(value)?,
            "flow_eps" => self.flow_eps = float(value)?,
            "flow_dynamic_px" => self.flow_dynamic_px = float(value)?,
            _ => return Err(Error::InvalidInput(format!("unknown alignment option {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.w_smooth >= 0.0
            && self.w_flow >= 0.0
            && self.eps_rel > 0.0
            && self.flow_eps > 0.0
            && self.flow_dynamic_px > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid alignment options {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogEntry {
    pub stage: Stage,
    pub iteration: usize,
    pub lr: f64,
    pub terms: Terms,
}

/// Objective terms before every update, plus the final value.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AlignLog {
    pub entries: Vec<LogEntry>,
}

impl AlignLog {
    pub fn last(&self, stage: Stage) -> Option<&LogEntry> {
        self.entries.iter().rev().find(|e| e.stage == stage)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidInput(format!("writing alignment log: {e}"));
        w.write_record(["stage", "iteration", "lr", "align", "smooth", "flow", "total"])
            .map_err(io)?;
        for e in &self.entries {
            let stage = match e.stage {
                Stage::Coarse => "coarse",
                Stage::Fine => "fine",
            };
            w.write_record([
                stage.to_string(),
                e.iteration.to_string(),
                e.lr.to_string(),
                e.terms.align.to_string(),
                e.terms.smooth.to_string(),
                e.terms.flow.to_string(),
                e.terms.total.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidInput(format!("writing alignment log: {e}")))
    }
}

#[derive(Clone, Debug)]
pub struct SolvedNode {
    pub id: u32,
    pub timestamp: f64,
    pub interpolated: bool,
    /// Camera to world.
    pub pose: Pose,
    pub depth: DepthMap,
    /// Log scale offset of an interpolated node relative to its pair.
    pub log_offset: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub stage: Stage,
    pub intrinsics: Intrinsics,
    /// Nodes in time order.
    pub nodes: Vec<SolvedNode>,
    pub edge_scales: Vec<f64>,
    pub scale_ref: f64,
    pub log: AlignLog,
}

impl Solution {
    pub fn node(&self, id: u32) -> Option<&SolvedNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// World-frame points of a node.
    pub fn world_pointmap(&self, id: u32) -> Result<Pointmap> {
        let n = self
            .node(id)
            .ok_or_else(|| Error::Missing(format!("node {id} in solution")))?;
        let cam = unproject(&n.depth, &self.intrinsics, Frame::Camera(id))?;
        let t = crate::geometry::FramedTransform::new(Frame::Camera(id), Frame::World, n.pose);
        cam.transformed(&t)
    }
}

fn solution_from_state(g: &AlignmentGraph, s: &State, stage: Stage, log: AlignLog) -> Result<Solution> {
    let mut nodes = Vec::new();
    for i in active_nodes(g, stage) {
        let n = &g.nodes[i];
        nodes.push(SolvedNode {
            id: n.id,
            timestamp: n.timestamp,
            interpolated: n.kind != NodeKind::Frame,
            pose: s.pose(i),
            depth: DepthMap::new(g.height, g.width, s.log_depth[i].iter().map(|d| d.exp()).collect())?,
            log_offset: s.log_offset[i],
        });
    }
    Ok(Solution {
        stage,
        intrinsics: s.intrinsics(),
        nodes,
        edge_scales: s.log_scale.iter().map(|l| l.exp()).collect(),
        scale_ref: s.scale_ref,
        log,
    })
}

/// Optimizer state for `graph` from a solution; nodes the solution lacks
/// start at the identity with unit depth.
pub(crate) fn state_from_solution(g: &AlignmentGraph, sol: &Solution) -> Result<State> {
    if sol.edge_scales.len() != g.edges.len()
        || sol
            .nodes
            .first()
            .is_some_and(|n| (n.depth.height, n.depth.width) != (g.height, g.width))
    {
        return Err(Error::InvalidInput("solution does not belong to this graph".into()));
    }
    let n = g.nodes.len();
    let mut s = State {
        rot: vec![nalgebra::Matrix3::identity(); n],
        trans: vec![crate::geometry::Vec3::zeros(); n],
        log_depth: vec![vec![0.0; g.pixels()]; n],
        log_focal: sol.intrinsics.f.ln(),
        log_scale: sol.edge_scales.iter().map(|x| x.ln()).collect(),
        log_offset: vec![0.0; n],
        scale_ref: sol.scale_ref,
        cx: sol.intrinsics.cx,
        cy: sol.intrinsics.cy,
    };
    for sn in &sol.nodes {
        let i = g.node_index(sn.id)?;
        s.rot[i] = *sn.pose.rotation.to_rotation_matrix().matrix();
        s.trans[i] = sn.pose.translation.vector / sol.scale_ref;
        s.log_depth[i] = sn.depth.values.iter().map(|d| d.ln()).collect();
        s.log_offset[i] = sn.log_offset;
    }
    Ok(s)
}

fn pack(s: &State) -> Vec<Tensor<f64>> {
    let n = s.rot.len();
    let px = s.log_depth.first().map_or(0, Vec::len);
    vec![
        Tensor::zeros(&[n, 3]),
        Tensor::from_fn(&[n, 3], |i| s.trans[i / 3][i % 3]),
        Tensor::from_fn(&[n, px], |i| s.log_depth[i / px][i % px]),
        Tensor::scalar(s.log_focal),
        Tensor::from_fn(&[s.log_scale.len()], |i| s.log_scale[i]),
        Tensor::from_fn(&[n], |i| s.log_offset[i]),
    ]
}

fn pack_grad(g: &Grad) -> Vec<Tensor<f64>> {
    let n = g.omega.len();
    let px = g.log_depth.first().map_or(0, Vec::len);
    vec![
        Tensor::from_fn(&[n, 3], |i| g.omega[i / 3][i % 3]),
        Tensor::from_fn(&[n, 3], |i| g.trans[i / 3][i % 3]),
        Tensor::from_fn(&[n, px], |i| g.log_depth[i / px][i % px]),
        Tensor::scalar(g.log_focal),
        Tensor::from_fn(&[g.log_scale.len()], |i| g.log_scale[i]),
        Tensor::from_fn(&[n], |i| g.log_offset[i]),
    ]
}

fn unpack(s: &mut State, p: &[Tensor<f64>]) {
    let px = s.log_depth.first().map_or(0, Vec::len);
    let (w, t, ld) = (p[0].data(), p[1].data(), p[2].data());
    for i in 0..s.rot.len() {
        let inc = crate::geometry::Vec3::new(w[3 * i], w[3 * i + 1], w[3 * i + 2]);
        if inc != crate::geometry::Vec3::zeros() {
            s.rot[i] = *so3_exp(&inc).to_rotation_matrix().matrix() * s.rot[i];
        }
        s.trans[i] = crate::geometry::Vec3::new(t[3 * i], t[3 * i + 1], t[3 * i + 2]);
        s.log_depth[i].copy_from_slice(&ld[i * px..(i + 1) * px]);
    }
    s.log_focal = p[3].data()[0];
    s.log_scale.copy_from_slice(p[4].data());
    s.log_offset.copy_from_slice(p[5].data());
}

fn optimize(
    g: &AlignmentGraph,
    mut s: State,
    stage: Stage,
    config: &AlignConfig,
    mut log: AlignLog,
) -> Result<(State, AlignLog)> {
    config.validate()?;
    let weights = config.weights();
    let anchor = g.frame_nodes().next().expect("graph has frames");
    let ge = gauge_edge(g);
    let mut adam = AdamW::new(AdamWConfig {
        lr: config.lr,
        ..AdamWConfig::default()
    });
    let numerical = |iteration: usize, detail: String| Error::Numerical { iteration, detail };
    let check = |it: usize, terms: &Terms| {
        if terms.total.is_finite() {
            Ok(())
        } else {
            Err(numerical(it, format!("objective is {}", terms.total)))
        }
    };
    let (mut terms, grad) = evaluate(g, &s, stage, &weights, true)?;
    check(0, &terms)?;
    let mut grad = grad.expect("gradient requested");
    // steps that raise the objective are rejected and the step multiplier
    // halved; accepted steps let it recover towards one
    let mut mult = 1.0;
    for it in 0..config.iterations {
        let lr = config.lr * (1.0 - it as f64 / config.iterations as f64);
        log.entries.push(LogEntry {
            stage,
            iteration: it,
            lr: lr * mult,
            terms,
        });
        grad.omega[anchor] = crate::geometry::Vec3::zeros();
        grad.trans[anchor] = crate::geometry::Vec3::zeros();
        grad.log_scale[ge] = 0.0;
        let mut params = pack(&s);
        adam.step_with_lr(&mut params, &pack_grad(&grad), lr * mult)
            .map_err(|e| numerical(it, e.to_string()))?;
        let mut cand = s.clone();
        unpack(&mut cand, &params);
        if cand.log_depth.iter().flatten().any(|v| !v.is_finite()) {
            return Err(numerical(it, "depth diverged".into()));
        }
        let (t, gr) = evaluate(g, &cand, stage, &weights, true)?;
        check(it + 1, &t)?;
        if t.total <= terms.total {
            s = cand;
            terms = t;
            grad = gr.expect("gradient requested");
            mult = (mult * 2.0).min(1.0);
        } else {
            mult *= 0.5;
        }
    }
    log.entries.push(LogEntry {
        stage,
        iteration: config.iterations,
        lr: 0.0,
        terms,
    });
    Ok((s, log))
}

/// Frame poses, shared focal, depth and pair scales from pairwise
/// measurements (and flow, when present).
pub fn coarse_align(graph: &AlignmentGraph, config: &AlignConfig) -> Result<Solution> {
    let s = coarse_state(graph)?;
    let (s, log) = optimize(graph, s, Stage::Coarse, config, AlignLog::default())?;
    solution_from_state(graph, &s, Stage::Coarse, log)
}

/// Adds interpolated nodes to a coarse solution and refines everything
/// jointly.
pub fn fine_align(graph: &AlignmentGraph, coarse: &Solution, config: &AlignConfig) -> Result<Solution> {
    let s = state_from_solution(graph, coarse)?;
    let s = fine_state(graph, &s);
    let (s, log) = optimize(graph, s, Stage::Fine, config, coarse.log.clone())?;
    solution_from_state(graph, &s, Stage::Fine, log)
}

/// Coarse then fine alignment. Without interpolated nodes the fine stage
/// still refines with the smoothness prior.
pub fn align(graph: &AlignmentGraph, config: &AlignConfig) -> Result<Solution> {
    let coarse = coarse_align(graph, config)?;
    fine_align(graph, &coarse, config)
}
