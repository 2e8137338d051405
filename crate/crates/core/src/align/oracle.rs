use super::flow::chain_flow;
use super::graph::{AlignmentGraph, FlowPair, InterpPrediction, PairPrediction};
use crate::error::{Error, Result};
use crate::geometry::{ConfidenceMap, Pointmap};
use crate::scene::{FlowField, Sequence};

/// Graph inputs in the shape `AlignmentGraph::build` takes.
#[derive(Clone, Debug, Default)]
pub struct GraphInputs {
    pub frames: Vec<(u32, f64)>,
    pub pairs: Vec<PairPrediction>,
    pub interps: Vec<InterpPrediction>,
    pub flows: Vec<FlowPair>,
}

impl GraphInputs {
    pub fn build(&self) -> Result<AlignmentGraph> {
        AlignmentGraph::build(&self.frames, &self.pairs, &self.interps, &self.flows)
    }
}

fn ones(pm: &Pointmap) -> ConfidenceMap {
    ConfidenceMap::ones(pm.height, pm.width)
}

/// Composed reference flow from kept frame `a` to kept frame `b > a`.
pub fn sequence_flow(seq: &Sequence, a: usize, b: usize) -> Option<FlowField> {
    let hops: Vec<&FlowField> = seq.flows[a..b].iter().collect();
    chain_flow(&hops)
}

/// Exact measurements taken from a sequence's ground truth, unit
/// confidence: pairs and their twins between consecutive `kept` frames,
/// four measurements for every skipped frame, and chained flow.
pub fn ground_truth_inputs(seq: &Sequence, kept: &[usize], with_flow: bool) -> Result<GraphInputs> {
    if kept.len() < 2 || kept.windows(2).any(|w| w[0] >= w[1]) || kept[kept.len() - 1] >= seq.len() {
        return Err(Error::InvalidInput(format!("bad kept frames {kept:?}")));
    }
    let mut out = GraphInputs {
        frames: kept.iter().map(|&i| (i as u32, seq.timestamps[i])).collect(),
        ..GraphInputs::default()
    };
    for w in kept.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (r, o) in [(a, b), (b, a)] {
            let (x0, x1) = (seq.pointmap_in(r, r)?, seq.pointmap_in(o, r)?);
            out.pairs.push(PairPrediction {
                view0: r as u32,
                view1: o as u32,
                c0: ones(&x0),
                c1: ones(&x1),
                x0,
                x1,
            });
        }
        for m in a + 1..b {
            let mut measurements = Vec::new();
            for r in [a, a, b, b] {
                let pm = seq.pointmap_in(m, r)?;
                let c = ones(&pm);
                measurements.push((pm, c));
            }
            out.interps.push(InterpPrediction {
                start: a as u32,
                end: b as u32,
                target: m as u32,
                timestamp: seq.timestamps[m],
                measurements,
            });
        }
        if with_flow {
            if let Some(flow) = sequence_flow(seq, a, b) {
                out.flows.push(FlowPair {
                    from: a as u32,
                    to: b as u32,
                    flow,
                });
            }
        }
    }
    Ok(out)
}
