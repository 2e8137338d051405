use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{depth_metrics, fit_scale_shift, pose_metrics, DepthFit, DepthFrame};
use crate::align::{
    align, ground_truth_inputs, sequence_flow, AlignConfig, FlowPair, GraphInputs, InterpPrediction, PairPrediction,
    Solution,
};
use crate::error::{Error, Result};
use crate::events::{voxelize, EventVoxelGrid};
use crate::geometry::{ConfidenceMap, Frame, Pose};
use crate::net::{oracle_sources, Model, Sources, Variant};
use crate::rng::SeedTree;
use crate::scene::Sequence;

/// Frames kept as inputs and frames evaluated under skip `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipPlan {
    pub k: usize,
    /// `0, k + 1, 2 (k + 1), ...`
    pub kept: Vec<usize>,
    /// Frames strictly between two kept frames.
    pub skipped: Vec<usize>,
    /// Frames after the last kept one, which no gap covers.
    pub excluded: Vec<usize>,
}

impl SkipPlan {
    pub fn new(frames: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("skip k must be at least 1".into()));
        }
        let kept: Vec<usize> = (0..frames).step_by(k + 1).collect();
        if kept.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "{frames} frames leave fewer than two kept at k = {k}"
            )));
        }
        let last = *kept.last().expect("two kept frames");
        let skipped = (0..last).filter(|i| i % (k + 1) != 0).collect();
        let excluded = (last + 1..frames).collect();
        Ok(Self {
            k,
            kept,
            skipped,
            excluded,
        })
    }

    /// Consecutive kept frames `(a, b)` around each skipped frame.
    pub fn gap_of(&self, frame: usize) -> Option<(usize, usize)> {
        let i = self.kept.partition_point(|&a| a < frame);
        (i > 0 && i < self.kept.len() && self.kept[i] != frame).then(|| (self.kept[i - 1], self.kept[i]))
    }
}

/// Source of pairwise and interpolated pointmaps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    NoEvents,
    NoTimeEncoding,
    /// Full model fed with noisy ground-truth sources.
    OracleSource,
    /// Baseline: the source pointmap of the temporally nearest kept frame.
    CopyNearest,
    /// Exact ground truth everywhere.
    GroundTruth,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Full,
        Method::NoEvents,
        Method::NoTimeEncoding,
        Method::OracleSource,
        Method::CopyNearest,
        Method::GroundTruth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::NoEvents => "no_events",
            Method::NoTimeEncoding => "no_time_encoding",
            Method::OracleSource => "oracle_source",
            Method::CopyNearest => "copy_nearest",
            Method::GroundTruth => "ground_truth",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method {s:?}")))
    }

    pub fn needs_model(self) -> bool {
        !matches!(self, Method::GroundTruth)
    }

    pub fn variant(self) -> Variant {
        Variant {
            events: self != Method::NoEvents,
            time: self != Method::NoTimeEncoding,
        }
    }
}

/// A method with what it needs to produce pointmaps.
#[derive(Clone, Copy)]
pub struct Predictor<'a> {
    pub method: Method,
    pub model: Option<&'a Model<f32>>,
    /// Relative noise of oracle sources.
    pub oracle_sigma: f64,
    pub seed: u64,
}

impl<'a> Predictor<'a> {
    pub fn ground_truth() -> Self {
        Self {
            method: Method::GroundTruth,
            model: None,
            oracle_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn model(method: Method, model: &'a Model<f32>) -> Self {
        Self {
            method,
            model: Some(model),
            oracle_sigma: 0.0,
            seed: 0,
        }
    }

    fn net(&self) -> Result<&'a Model<f32>> {
        self.model
            .ok_or_else(|| Error::Missing(format!("model checkpoint for method {}", self.method.name())))
    }
}

fn gap_grids(seq: &Sequence, a: usize, b: usize, tau: f64, bins: usize) -> Result<[EventVoxelGrid; 2]> {
    let (t0, t1) = (seq.timestamps[a], seq.timestamps[b]);
    let (s0, s1) = seq.events.span();
    if t0 < s0 || t1 > s1 {
        return Err(Error::Missing(format!(
            "events for frames {a}-{b} ([{t0}, {t1}] outside the recorded [{s0}, {s1}])"
        )));
    }
    let (fwd, bwd) = seq.events.window_normalized(t0, t1)?.split_and_reverse(tau)?;
    Ok([voxelize(&fwd, bins)?, voxelize(&bwd, bins)?])
}

fn sources(seq: &Sequence, r: usize, o: usize, p: &Predictor<'_>) -> Result<Sources> {
    let gt = [seq.pointmap_in(r, r)?, seq.pointmap_in(o, r)?];
    match p.method {
        Method::GroundTruth => {
            let ones = |i: usize| ConfidenceMap::ones(gt[i].height, gt[i].width);
            Ok(Sources {
                conf: [ones(0), ones(1)],
                points: gt,
            })
        }
        Method::OracleSource => {
            let mut rng = SeedTree::new(p.seed)
                .split_str("oracle")
                .split((r * seq.len() + o) as u64)
                .rng();
            oracle_sources([&gt[0], &gt[1]], p.oracle_sigma, &mut rng)
        }
        _ => p
            .net()?
            .predict_sources([&seq.frames[r], &seq.frames[o]], Frame::Camera(r as u32)),
    }
}

/// Alignment inputs for `plan`: source pairs and twins between consecutive
/// kept frames, four interpolated measurements per skipped frame, and
/// reference flow.
pub fn protocol_inputs(seq: &Sequence, plan: &SkipPlan, p: &Predictor<'_>) -> Result<GraphInputs> {
    if p.method == Method::GroundTruth {
        return ground_truth_inputs(seq, &plan.kept, true);
    }
    let model = p.net()?;
    let c = &model.config;
    if (c.height, c.width) != (seq.config.height, seq.config.width) {
        return Err(Error::InvalidInput(format!(
            "model resolution {}x{} does not match the sequence's {}x{}",
            c.height, c.width, seq.config.height, seq.config.width
        )));
    }
    let mut out = GraphInputs {
        frames: plan.kept.iter().map(|&i| (i as u32, seq.timestamps[i])).collect(),
        ..GraphInputs::default()
    };
    for w in plan.kept.windows(2) {
        let (a, b) = (w[0], w[1]);
        let fwd = sources(seq, a, b, p)?;
        let bwd = sources(seq, b, a, p)?;
        for (r, o, s) in [(a, b, &fwd), (b, a, &bwd)] {
            out.pairs.push(PairPrediction {
                view0: r as u32,
                view1: o as u32,
                x0: s.points[0].clone(),
                c0: s.conf[0].clone(),
                x1: s.points[1].clone(),
                c1: s.conf[1].clone(),
            });
        }
        for m in a + 1..b {
            let tau = (seq.timestamps[m] - seq.timestamps[a]) / (seq.timestamps[b] - seq.timestamps[a]);
            let measurements = if p.method == Method::CopyNearest {
                let v = if tau <= 0.5 { 0 } else { 1 };
                vec![
                    (fwd.points[v].clone(), fwd.conf[v].clone()),
                    (bwd.points[1 - v].clone(), bwd.conf[1 - v].clone()),
                ]
            } else {
                let [gf, gb] = gap_grids(seq, a, b, tau, c.bins)?;
                let variant = p.method.variant();
                let given = |s: &'_ Sources| (p.method == Method::OracleSource).then_some(s.clone());
                let (_, o) = model.interpolate(
                    [&seq.frames[a], &seq.frames[b]],
                    given(&fwd).as_ref(),
                    [&gf, &gb],
                    tau,
                    variant,
                    Frame::Camera(a as u32),
                )?;
                let (_, t) = model.interpolate(
                    [&seq.frames[b], &seq.frames[a]],
                    given(&bwd).as_ref(),
                    [&gb, &gf],
                    1.0 - tau,
                    variant,
                    Frame::Camera(b as u32),
                )?;
                let [o0, o1] = o.points;
                let [oc0, oc1] = o.conf;
                let [t0, t1] = t.points;
                let [tc0, tc1] = t.conf;
                vec![(o0, oc0), (o1, oc1), (t0, tc0), (t1, tc1)]
            };
            out.interps.push(InterpPrediction {
                start: a as u32,
                end: b as u32,
                target: m as u32,
                timestamp: seq.timestamps[m],
                measurements,
            });
        }
        if let Some(flow) = sequence_flow(seq, a, b) {
            out.flows.push(FlowPair {
                from: a as u32,
                to: b as u32,
                flow,
            });
        }
    }
    Ok(out)
}

/// One reconstructed node, as read back from an alignment.
#[derive(Clone, Debug)]
pub struct NodeEstimate {
    pub id: usize,
    pub interpolated: bool,
    pub pose: Pose,
    pub depth: Vec<f64>,
}

pub fn node_estimates(solution: &Solution) -> Vec<NodeEstimate> {
    solution
        .nodes
        .iter()
        .map(|n| NodeEstimate {
            id: n.id as usize,
            interpolated: n.interpolated,
            pose: n.pose,
            depth: n.depth.values.clone(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauError {
    pub tau: f64,
    pub abs_rel: f64,
}

/// Metrics of one sequence under one method and skip value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceReport {
    pub sequence: String,
    pub method: String,
    pub k: usize,
    pub kept: usize,
    /// Frames the metrics were computed on.
    pub evaluated: Vec<usize>,
    pub abs_rel: f64,
    pub delta_1_25: f64,
    pub ate: f64,
    pub rte: f64,
    pub rre: f64,
    /// Abs Rel per target time within the gap, under the sequence fit.
    pub per_tau: Vec<TauError>,
}

/// Metrics on the skipped frames of `plan`. Every node enters the depth fit.
pub fn evaluate_nodes(
    seq: &Sequence,
    plan: &SkipPlan,
    nodes: &[NodeEstimate],
    sequence: &str,
    method: &str,
) -> Result<SequenceReport> {
    let mut by_id = BTreeMap::new();
    for n in nodes {
        if n.id >= seq.len() {
            return Err(Error::InvalidInput(format!(
                "node {} beyond the sequence's {} frames",
                n.id,
                seq.len()
            )));
        }
        by_id.insert(n.id, n);
    }
    for &m in &plan.skipped {
        if !by_id.get(&m).is_some_and(|n| n.interpolated) {
            return Err(Error::Missing(format!("interpolated estimate of skipped frame {m}")));
        }
    }
    let frames: Vec<DepthFrame<'_>> = by_id
        .values()
        .map(|n| DepthFrame {
            pred: &n.depth,
            gt: &seq.depths[n.id].values,
            mask: None,
            evaluated: plan.skipped.contains(&n.id),
        })
        .collect();
    let (s, b) = fit_scale_shift(&frames)?;
    let depth = depth_metrics(&frames, DepthFit::Fixed { scale: s, shift: b })?;

    let mut taus: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for &m in &plan.skipped {
        let (a, e) = plan.gap_of(m).expect("skipped frames lie in a gap");
        let tau = (seq.timestamps[m] - seq.timestamps[a]) / (seq.timestamps[e] - seq.timestamps[a]);
        taus.entry((tau * 1e6).round() as i64).or_default().push(m);
    }
    let mut per_tau = Vec::new();
    for (key, ids) in taus {
        let sub: Vec<DepthFrame<'_>> = ids
            .iter()
            .map(|&m| DepthFrame {
                pred: &by_id[&m].depth,
                gt: &seq.depths[m].values,
                mask: None,
                evaluated: true,
            })
            .collect();
        per_tau.push(TauError {
            tau: key as f64 / 1e6,
            abs_rel: depth_metrics(&sub, DepthFit::Fixed { scale: s, shift: b })?.abs_rel,
        });
    }

    let pred: Vec<Pose> = plan.skipped.iter().map(|m| by_id[m].pose).collect();
    let gt: Vec<Pose> = plan.skipped.iter().map(|&m| *seq.pose(m)).collect();
    let pose = pose_metrics(&pred, &gt)?;
    Ok(SequenceReport {
        sequence: sequence.to_string(),
        method: method.to_string(),
        k: plan.k,
        kept: plan.kept.len(),
        evaluated: plan.skipped.clone(),
        abs_rel: depth.abs_rel,
        delta_1_25: depth.delta_1_25,
        ate: pose.ate,
        rte: pose.rte,
        rre: pose.rre,
        per_tau,
    })
}

/// Predict, align and evaluate one sequence at skip `k`.
pub fn run_skip_protocol(
    seq: &Sequence,
    sequence: &str,
    k: usize,
    predictor: &Predictor<'_>,
    config: &AlignConfig,
) -> Result<(SequenceReport, Solution)> {
    let plan = SkipPlan::new(seq.len(), k)?;
    let inputs = protocol_inputs(seq, &plan, predictor)?;
    let graph = inputs.build()?;
    let solution = align(&graph, config)?;
    let report = evaluate_nodes(
        seq,
        &plan,
        &node_estimates(&solution),
        sequence,
        predictor.method.name(),
    )?;
    Ok((report, solution))
}
