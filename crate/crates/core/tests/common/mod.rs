//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use ctgeo::tensor::{Graph, Scalar, Tensor, Var};
use ctgeo::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prim {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Reshape,
    Transpose,
    Concat,
    Slice,
    LayerNorm,
    Gelu,
    Softmax,
    Mean,
    Sum,
    SumLast,
    AddBias,
    MulChannels,
    ScaleRows,
    Scale,
    MulConst,
    AddConst,
    Exp,
    Log,
    Sqrt,
    Square,
    So3Log,
}

pub const ALL_PRIMS: [Prim; 26] = [
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::Div,
    Prim::MatMul,
    Prim::Reshape,
    Prim::Transpose,
    Prim::Concat,
    Prim::Slice,
    Prim::LayerNorm,
    Prim::Gelu,
    Prim::Softmax,
    Prim::Mean,
    Prim::Sum,
    Prim::SumLast,
    Prim::AddBias,
    Prim::MulChannels,
    Prim::ScaleRows,
    Prim::Scale,
    Prim::MulConst,
    Prim::AddConst,
    Prim::Exp,
    Prim::Log,
    Prim::Sqrt,
    Prim::Square,
    Prim::So3Log,
];

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn rotation(axis: [f64; 3], angle: f64) -> [f64; 9] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    ]
}

/// Random inputs for one probe of `prim`.
pub fn inputs(prim: Prim, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let m = rng.random_range(1..5);
    let n = rng.random_range(2..6);
    let k = rng.random_range(1..5);
    match prim {
        Prim::Add | Prim::Sub | Prim::Mul => vec![
            rand_tensor(rng, &[m, n], -2.0, 2.0),
            rand_tensor(rng, &[m, n], -2.0, 2.0),
        ],
        Prim::Div => vec![
            rand_tensor(rng, &[m, n], -2.0, 2.0),
            rand_tensor(rng, &[m, n], 0.5, 2.0),
        ],
        Prim::MatMul => vec![
            rand_tensor(rng, &[m, k], -1.0, 1.0),
            rand_tensor(rng, &[k, n], -1.0, 1.0),
        ],
        Prim::Concat => vec![
            rand_tensor(rng, &[m, n], -1.0, 1.0),
            rand_tensor(rng, &[m, k], -1.0, 1.0),
        ],
        Prim::AddBias | Prim::MulChannels => vec![
            rand_tensor(rng, &[m, k, n], -1.0, 1.0),
            rand_tensor(rng, &[n], -1.0, 1.0),
        ],
        Prim::ScaleRows => vec![rand_tensor(rng, &[m, n], -1.0, 1.0), rand_tensor(rng, &[m], -1.0, 1.0)],
        Prim::Scale => vec![rand_tensor(rng, &[m, n], -1.0, 1.0), rand_tensor(rng, &[], -2.0, 2.0)],
        Prim::Log | Prim::Sqrt => vec![rand_tensor(rng, &[m, n], 0.3, 3.0)],
        Prim::LayerNorm => vec![rand_tensor(rng, &[m, n + 2], -2.0, 2.0)],
        Prim::So3Log => {
            let mut data = Vec::new();
            for _ in 0..m {
                let axis = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.2..1.0),
                ];
                let r = rotation(axis, rng.random_range(0.2..2.0));
                data.extend(r.iter().map(|v| v + rng.random_range(-0.01..0.01)));
            }
            vec![Tensor::new(&[m, 9], data).unwrap()]
        }
        _ => vec![rand_tensor(rng, &[m, n], -2.0, 2.0)],
    }
}

pub fn apply<'g, T: Scalar>(prim: Prim, g: &'g Graph<T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    let a = xs[0];
    match prim {
        Prim::Add => a.add(xs[1]),
        Prim::Sub => a.sub(xs[1]),
        Prim::Mul => a.mul(xs[1]),
        Prim::Div => a.div(xs[1]),
        Prim::MatMul => a.matmul(xs[1]),
        Prim::Reshape => {
            let n = a.value().numel();
            a.reshape(&[n])
        }
        Prim::Transpose => a.transpose(),
        Prim::Concat => g.concat(&[a, xs[1]], 1),
        Prim::Slice => {
            let n = a.shape()[1];
            a.slice(1, 1, n)
        }
        Prim::LayerNorm => a.layer_norm(T::lit(1e-5)),
        Prim::Gelu => Ok(a.gelu()),
        Prim::Softmax => a.softmax(),
        Prim::Mean => Ok(a.mean()),
        Prim::Sum => Ok(a.sum()),
        Prim::SumLast => a.sum_last(),
        Prim::AddBias => a.add_bias(xs[1]),
        Prim::MulChannels => a.mul_channels(xs[1]),
        Prim::ScaleRows => a.scale_rows(xs[1]),
        Prim::Scale => a.scale(xs[1]),
        Prim::MulConst => Ok(a.mul_const(T::lit(-1.7))),
        Prim::AddConst => Ok(a.add_const(T::lit(0.3))),
        Prim::Exp => Ok(a.exp()),
        Prim::Log => Ok(a.log()),
        Prim::Sqrt => Ok(a.sqrt()),
        Prim::Square => Ok(a.square()),
        Prim::So3Log => a.so3_log(),
    }
}

/// Scalar probe `sum(prim(xs) * w)` for fixed random `w`.
fn probe<T: Scalar>(prim: Prim, xs: &[Tensor<f64>], w_seed: u64) -> Result<(T, Vec<Tensor<T>>)> {
    let g = Graph::<T>::new();
    let vars: Vec<_> = xs.iter().map(|x| g.param(x.cast())).collect();
    let out = apply(prim, &g, &vars)?;
    let shape = out.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(w_seed);
    let w = g.constant(Tensor::from_fn(&shape, |_| T::lit(rng.random_range(-1.0..1.0))));
    let root = out.mul(w)?.sum();
    let grads = root.backward()?;
    let gs = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();
    Ok((root.value().item(), gs))
}

/// Max relative error between the `f32` analytic gradient and central
/// differences (step `h`) evaluated in `f64`.
pub fn gradient_rel_error(prim: Prim, seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = inputs(prim, &mut rng);
    let (_, analytic) = probe::<f32>(prim, &xs, seed ^ 0xabcd).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let mut numeric = vec![0.0; x.numel()];
        for j in 0..x.numel() {
            let mut plus = xs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = xs.clone();
            minus[i].data_mut()[j] -= h;
            let fp = probe::<f64>(prim, &plus, seed ^ 0xabcd).unwrap().0;
            let fm = probe::<f64>(prim, &minus, seed ^ 0xabcd).unwrap().0;
            numeric[j] = (fp - fm) / (2.0 * h);
        }
        let scale = numeric.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic[i].data().iter().zip(&numeric) {
            worst = worst.max((*a as f64 - n).abs() / scale);
        }
    }
    worst
}

pub mod oracles;

pub mod scenes {
    use ctgeo::align::{GraphInputs, Solution, SolvedNode, Stage};
    use ctgeo::geometry::{apply_sim3, umeyama_align, AlignMode, Vec3};
    use ctgeo::scene::{generate_sequence, SceneConfig, Sequence};

    /// Default desk scene, 64x64 and 32 frames.
    pub fn desk(seed: u64) -> Sequence {
        generate_sequence(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    /// A reduced scene for fast tests.
    pub fn small(seed: u64, frames: usize) -> Sequence {
        generate_sequence(&SceneConfig {
            height: 24,
            width: 32,
            focal: 30.0,
            frames,
            seed,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    /// RMSE of camera centres after the best similarity fit.
    pub fn ate(est: &[Vec3], gt: &[Vec3]) -> f64 {
        let s = umeyama_align(est, gt, AlignMode::Sim3).unwrap();
        let sse: f64 = est
            .iter()
            .zip(gt)
            .map(|(e, g)| (apply_sim3(&s, e) - g).norm_squared())
            .sum();
        (sse / est.len() as f64).sqrt()
    }

    pub fn centres(sol: &Solution) -> Vec<Vec3> {
        sol.nodes.iter().map(|n| n.pose.translation.vector).collect()
    }

    pub fn gt_centres(seq: &Sequence, sol: &Solution) -> Vec<Vec3> {
        sol.nodes
            .iter()
            .map(|n| seq.pose(n.id as usize).translation.vector)
            .collect()
    }

    /// Mean of |s*d - d_gt| / d_gt over every pixel of `nodes`, with the
    /// scale `s` from the trajectory fit.
    pub fn depth_abs_rel(seq: &Sequence, sol: &Solution, interpolated: Option<bool>) -> f64 {
        let s = umeyama_align(&centres(sol), &gt_centres(seq, sol), AlignMode::Sim3)
            .unwrap()
            .scaling();
        let mut worst: f64 = 0.0;
        for n in &sol.nodes {
            if interpolated.is_some_and(|i| i != n.interpolated) {
                continue;
            }
            let gt = &seq.depths[n.id as usize].values;
            let e: f64 = n
                .depth
                .values
                .iter()
                .zip(gt)
                .map(|(d, g)| (d * s - g).abs() / g)
                .sum::<f64>()
                / gt.len() as f64;
            worst = worst.max(e);
        }
        worst
    }

    /// The ground truth as a solution over the nodes of `inputs`, with the
    /// given edge scales and unit translation reference.
    pub fn gt_solution(seq: &Sequence, inputs: &GraphInputs, edges: usize, scale_ref: f64) -> Solution {
        let mut ids: Vec<(f64, u32, bool)> = inputs.frames.iter().map(|&(id, t)| (t, id, false)).collect();
        for ip in &inputs.interps {
            ids.push((ip.timestamp, ip.target, true));
        }
        ids.sort_by(|a, b| a.0.total_cmp(&b.0));
        Solution {
            stage: if inputs.interps.is_empty() {
                Stage::Coarse
            } else {
                Stage::Fine
            },
            intrinsics: seq.intrinsics(),
            nodes: ids
                .iter()
                .map(|&(t, id, interpolated)| SolvedNode {
                    id,
                    timestamp: t,
                    interpolated,
                    pose: *seq.pose(id as usize),
                    depth: seq.depths[id as usize].clone(),
                    log_offset: 0.0,
                })
                .collect(),
            edge_scales: vec![1.0; edges],
            scale_ref,
            log: Default::default(),
        }
    }

    /// ATE between alignments of `seq` and of a copy moved by a random
    /// similarity, relative to the translation reference.
    pub fn gauge_error(seq: &Sequence, seed: u64) -> f64 {
        use super::oracles::transformed;
        use ctgeo::align::{align, ground_truth_inputs, AlignConfig};
        use ctgeo::geometry::se3_exp;
        use rand::{Rng, SeedableRng};

        let kept: Vec<usize> = (0..seq.len()).step_by(2).collect();
        let config = AlignConfig::default();
        let base = align(
            &ground_truth_inputs(seq, &kept, true).unwrap().build().unwrap(),
            &config,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut xi = [0.0; 6];
        xi.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        let moved = transformed(seq, &se3_exp(&xi), rng.random_range(0.1..10.0));
        let other = align(
            &ground_truth_inputs(&moved, &kept, true).unwrap().build().unwrap(),
            &config,
        )
        .unwrap();
        ate(&centres(&other), &centres(&base)) / base.scale_ref
    }

    /// Perturbs every interpolated measurement differently, gives measurement
    /// `boosted` a confidence of 1e6 and returns the largest mean distance
    /// between a solved node and that measurement's implied geometry,
    /// relative to the translation reference.
    pub fn boosted_fusion_error(seq: &Sequence, kept: &[usize], boosted: usize) -> f64 {
        use ctgeo::align::{align, ground_truth_inputs, AlignConfig};
        use ctgeo::geometry::{ConfidenceMap, Frame};

        let mut inputs = ground_truth_inputs(seq, kept, false).unwrap();
        for ip in &mut inputs.interps {
            for (k, (pm, c)) in ip.measurements.iter_mut().enumerate() {
                let f = 1.0 + 0.02 * (k as f64 - 1.5);
                let shift = Vec3::new(0.01 * k as f64, -0.02, 0.015 * (k % 2) as f64);
                for p in &mut pm.points {
                    *p = *p * f + shift;
                }
                if k == boosted {
                    *c = ConfidenceMap::new(c.height, c.width, vec![1e6; c.values.len()]).unwrap();
                }
            }
        }
        let g = inputs.build().unwrap();
        let sol = align(&g, &AlignConfig::default()).unwrap();
        let mut worst: f64 = 0.0;
        for ip in &inputs.interps {
            let (pm, _) = &ip.measurements[boosted];
            let Frame::Camera(r) = pm.frame else { unreachable!() };
            let node = sol.node(ip.target).unwrap();
            let reference = sol.node(r).unwrap();
            let gi = g.node_index(ip.target).unwrap();
            let m = g.fine.iter().filter(|m| m.target == gi).nth(boosted).unwrap();
            let sigma = sol.edge_scales[m.edge] * node.log_offset.exp();
            let world = sol.world_pointmap(ip.target).unwrap();
            let mut err = 0.0;
            for (w, x) in world.points.iter().zip(&pm.points) {
                let implied = reference.pose * nalgebra::Point3::from(x * sigma);
                err += (w - implied.coords).norm();
            }
            worst = worst.max(err / world.len() as f64 / sol.scale_ref);
        }
        worst
    }
}
