use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{ConfidenceMap, Frame, Pointmap, Vec3};
use crate::scene::FlowField;

/// Pairwise prediction for the ordered pair `(view0, view1)`: both
/// pointmaps are expressed in camera `view0`.
#[derive(Clone, Debug)]
pub struct PairPrediction {
    pub view0: u32,
    pub view1: u32,
    pub x0: Pointmap,
    pub c0: ConfidenceMap,
    pub x1: Pointmap,
    pub c1: ConfidenceMap,
}

/// Geometry at `target`, between frames `start` and `end`: one to four
/// pointmaps, each expressed in camera `start` or camera `end`.
#[derive(Clone, Debug)]
pub struct InterpPrediction {
    pub start: u32,
    pub end: u32,
    pub target: u32,
    pub timestamp: f64,
    pub measurements: Vec<(Pointmap, ConfidenceMap)>,
}

/// Reference optical flow from frame `from` to frame `to`.
#[derive(Clone, Debug)]
pub struct FlowPair {
    pub from: u32,
    pub to: u32,
    pub flow: FlowField,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Frame,
    Interp { start: usize, end: usize },
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: u32,
    pub timestamp: f64,
    pub kind: NodeKind,
}

/// One pointmap constraint: points of node `target` expressed in camera
/// `reference`, scaled by the edge's scale (times the target's offset for
/// interpolation measurements).
#[derive(Clone, Debug)]
pub struct Measurement {
    pub target: usize,
    pub reference: usize,
    pub edge: usize,
    pub interp: bool,
    pub points: Vec<Vec3>,
    /// Confidence on valid pixels, 0 elsewhere.
    pub weights: Vec<f64>,
    pub valid_count: usize,
}

impl Measurement {
    fn new(target: usize, reference: usize, edge: usize, interp: bool, pm: &Pointmap, conf: &ConfidenceMap) -> Self {
        let weights: Vec<f64> = pm
            .valid
            .iter()
            .zip(&conf.values)
            .map(|(&v, &c)| if v { c } else { 0.0 })
            .collect();
        let points = pm
            .points
            .iter()
            .zip(&pm.valid)
            .map(|(p, &v)| if v { *p } else { Vec3::zeros() })
            .collect();
        Self {
            target,
            reference,
            edge,
            interp,
            points,
            valid_count: pm.valid_count(),
            weights,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct FlowObs {
    pub from: usize,
    pub to: usize,
    pub flow: FlowField,
}

/// Nodes in time order, edges as `(reference, other)` node pairs.
#[derive(Clone, Debug)]
pub struct AlignmentGraph {
    pub height: usize,
    pub width: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<(usize, usize)>,
    pub coarse: Vec<Measurement>,
    pub fine: Vec<Measurement>,
    pub(crate) flows: Vec<FlowObs>,
}

fn check_shape(pm: &Pointmap, c: &ConfidenceMap, h: usize, w: usize) -> Result<()> {
    if (pm.height, pm.width, c.height, c.width) != (h, w, h, w) {
        return Err(Error::InvalidInput(format!(
            "measurement is {}x{}, graph is {h}x{w}",
            pm.height, pm.width
        )));
    }
    Ok(())
}

impl AlignmentGraph {
    /// Builds the graph. `frames` lists frame ids with timestamps; every
    /// consecutive frame pair must have a pairwise prediction in at least
    /// one direction.
    pub fn build(
        frames: &[(u32, f64)],
        pairs: &[PairPrediction],
        interps: &[InterpPrediction],
        flows: &[FlowPair],
    ) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidInput("no pairwise predictions".into()))?;
        let (h, w) = (first.x0.height, first.x0.width);

        let mut entries: Vec<(f64, u32, Option<(u32, u32)>)> = frames.iter().map(|&(id, t)| (t, id, None)).collect();
        let mut seen = BTreeMap::new();
        for ip in interps {
            if let Some(&t) = seen.get(&ip.target) {
                if t != ip.timestamp {
                    return Err(Error::InvalidInput(format!("node {} given two timestamps", ip.target)));
                }
                continue;
            }
            seen.insert(ip.target, ip.timestamp);
            let (a, b) = if ip.start < ip.end {
                (ip.start, ip.end)
            } else {
                (ip.end, ip.start)
            };
            entries.push((ip.timestamp, ip.target, Some((a, b))));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut index = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.1, i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate node id {}", e.1)));
            }
        }
        let node_of = |id: u32| -> Result<usize> {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("measurement names unknown node {id}")))
        };
        let mut nodes = Vec::with_capacity(entries.len());
        for &(timestamp, id, gap) in &entries {
            let kind = match gap {
                None => NodeKind::Frame,
                Some((a, b)) => NodeKind::Interp {
                    start: node_of(a)?,
                    end: node_of(b)?,
                },
            };
            nodes.push(Node { id, timestamp, kind });
        }

        let tag_node = |pm: &Pointmap| -> Result<usize> {
            match pm.frame {
                Frame::Camera(id) => node_of(id),
                Frame::World => Err(Error::InvalidInput("measurement tagged with world".into())),
            }
        };

        let mut edges = Vec::new();
        let mut coarse = Vec::new();
        for p in pairs {
            let (a, b) = (node_of(p.view0)?, node_of(p.view1)?);
            if nodes[a].kind != NodeKind::Frame || nodes[b].kind != NodeKind::Frame {
                return Err(Error::InvalidInput("pairs must join frame nodes".into()));
            }
            for (pm, c) in [(&p.x0, &p.c0), (&p.x1, &p.c1)] {
                check_shape(pm, c, h, w)?;
                if tag_node(pm)? != a {
                    return Err(Error::FrameTag {
                        expected: Frame::Camera(p.view0).to_string(),
                        found: pm.frame.to_string(),
                    });
                }
            }
            if edges.contains(&(a, b)) {
                return Err(Error::InvalidInput(format!(
                    "pair ({}, {}) given twice",
                    p.view0, p.view1
                )));
            }
            let e = edges.len();
            edges.push((a, b));
            coarse.push(Measurement::new(a, a, e, false, &p.x0, &p.c0));
            coarse.push(Measurement::new(b, a, e, false, &p.x1, &p.c1));
        }

        let frame_nodes: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].kind == NodeKind::Frame).collect();
        for win in frame_nodes.windows(2) {
            let (a, b) = (win[0], win[1]);
            if !edges.contains(&(a, b)) && !edges.contains(&(b, a)) {
                return Err(Error::InvalidInput(format!(
                    "missing pair between frames {} and {}",
                    nodes[a].id, nodes[b].id
                )));
            }
        }

        let mut fine = Vec::new();
        for ip in interps {
            let (s, e, t) = (node_of(ip.start)?, node_of(ip.end)?, node_of(ip.target)?);
            if !(1..=4).contains(&ip.measurements.len()) {
                return Err(Error::InvalidInput(format!(
                    "interpolation node {} has {} measurements, expected 1 to 4",
                    ip.target,
                    ip.measurements.len()
                )));
            }
            for (pm, c) in &ip.measurements {
                check_shape(pm, c, h, w)?;
                let tag = tag_node(pm)?;
                if tag != s && tag != e {
                    return Err(Error::FrameTag {
                        expected: format!("{} or {}", Frame::Camera(ip.start), Frame::Camera(ip.end)),
                        found: pm.frame.to_string(),
                    });
                }
                let other = if tag == s { e } else { s };
                let edge = edges
                    .iter()
                    .position(|&x| x == (tag, other))
                    .or_else(|| edges.iter().position(|&x| x == (other, tag)))
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "interpolation between {} and {} has no matching pair",
                            ip.start, ip.end
                        ))
                    })?;
                let m = Measurement::new(t, tag, edge, true, pm, c);
                if m.valid_count > 0 {
                    fine.push(m);
                }
            }
        }
        let mut keep = vec![true; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if matches!(n.kind, NodeKind::Interp { .. }) && !fine.iter().any(|m| m.target == i) {
                log::warn!("interpolation node {} has no valid measurements; dropped", n.id);
                keep[i] = false;
            }
        }
        let mut graph = Self {
            height: h,
            width: w,
            nodes,
            edges,
            coarse,
            fine,
            flows: Vec::new(),
        };
        if keep.iter().any(|k| !k) {
            graph = graph.without_nodes(&keep);
        }

        for f in flows {
            let (a, b) = (graph.node_index(f.from)?, graph.node_index(f.to)?);
            if (f.flow.height, f.flow.width) != (h, w) {
                return Err(Error::InvalidInput("flow resolution differs".into()));
            }
            graph.flows.push(FlowObs {
                from: a,
                to: b,
                flow: f.flow.clone(),
            });
        }
        Ok(graph)
    }

    pub fn node_index(&self, id: u32) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown node {id}")))
    }

    pub fn frame_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == NodeKind::Frame)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Measurements per node among `coarse` and `fine`.
    pub fn measurement_count(&self, node: usize) -> usize {
        self.coarse
            .iter()
            .chain(&self.fine)
            .filter(|m| m.target == node)
            .count()
    }

    fn without_nodes(self, keep: &[bool]) -> Self {
        let mut remap = vec![usize::MAX; keep.len()];
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.into_iter().enumerate() {
            if keep[i] {
                remap[i] = nodes.len();
                nodes.push(n);
            }
        }
        for n in &mut nodes {
            if let NodeKind::Interp { start, end } = &mut n.kind {
                *start = remap[*start];
                *end = remap[*end];
            }
        }
        let fix = |mut m: Measurement| {
            m.target = remap[m.target];
            m.reference = remap[m.reference];
            m
        };
        Self {
            nodes,
            edges: self.edges.iter().map(|&(a, b)| (remap[a], remap[b])).collect(),
            coarse: self.coarse.into_iter().map(fix).collect(),
            fine: self.fine.into_iter().map(fix).collect(),
            ..self
        }
    }
}
