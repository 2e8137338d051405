use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, split_axis};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddBias(usize, usize),
    MulChannels(usize, usize),
    ScaleRows(usize, usize),
    Scale(usize, usize),
    MulConst(usize, T),
    AddConst(usize),
    MatMul(usize, usize),
    Reshape(usize),
    Transpose(usize),
    Concat {
        parents: Vec<usize>,
        axis: usize,
        extents: Vec<usize>,
    },
    Slice {
        parent: usize,
        axis: usize,
        start: usize,
    },
    LayerNorm {
        parent: usize,
        inv_std: Vec<T>,
    },
    Gelu(usize),
    Softmax(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumLast(usize),
    So3Log(usize),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording tape. Nodes are appended in evaluation order, which is a
/// topological order, so the backward pass is a single reverse sweep.
pub struct Graph<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar = f32> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

/// Gradients produced by [`Var::backward`], keyed by node.
pub struct Gradients<T> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(&v.id)
    }

    /// Gradient of `v`, or zeros of its shape when `v` did not influence
    /// the root.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.grads
            .get(&v.id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(v))
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Concatenates `parts` along `axis`. All other extents must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?
            .value();
        if axis >= first.rank() {
            return Err(Error::shape("concat", format!("axis {axis} of {:?}", first.shape())));
        }
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        for v in &values {
            let ok = v.rank() == first.rank()
                && v.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", first.shape(), v.shape()),
                ));
            }
        }
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                parents: parts.iter().map(|p| p.id).collect(),
                axis,
                extents,
            },
            rg,
        ))
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor {
        shape: a.shape().to_vec(),
        data: a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        self.graph.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: &Var<'g, T>, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(value, op, rg)
    }

    pub fn add(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        Ok(self.binary(&other, zip_map(&a, &b, |x, y| x + y), Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        Ok(self.binary(&other, zip_map(&a, &b, |x, y| x - y), Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        Ok(self.binary(&other, zip_map(&a, &b, |x, y| x * y), Op::Mul(self.id, other.id)))
    }

    /// Elementwise quotient.
    pub fn div(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("div", &a, &b)?;
        Ok(self.binary(&other, zip_map(&a, &b, |x, y| x / y), Op::Div(self.id, other.id)))
    }

    /// `self[..., j] + bias[j]`: the only broadcast the engine supports.
    pub fn add_bias(&self, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), bias.value());
        let n = a.last_dim();
        if b.rank() != 1 || b.numel() != n {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", a.shape(), b.shape())));
        }
        let mut out = (*a).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.binary(&bias, out, Op::AddBias(self.id, bias.id)))
    }

    /// `self[..., j] * scale[j]`.
    pub fn mul_channels(&self, scale: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), scale.value());
        let n = a.last_dim();
        if b.rank() != 1 || b.numel() != n {
            return Err(Error::shape(
                "mul_channels",
                format!("{:?} * {:?}", a.shape(), b.shape()),
            ));
        }
        let mut out = (*a).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o *= bv;
            }
        }
        Ok(self.binary(&scale, out, Op::MulChannels(self.id, scale.id)))
    }

    /// `self[r, j] * scale[r]` where `scale` has the shape of `self`
    /// without its last axis.
    pub fn scale_rows(&self, scale: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, s) = (self.value(), scale.value());
        let n = a.last_dim();
        if a.rank() == 0 || s.shape() != &a.shape()[..a.rank() - 1] {
            return Err(Error::shape(
                "scale_rows",
                format!("{:?} by {:?}", a.shape(), s.shape()),
            ));
        }
        let mut out = (*a).clone();
        for (row, &sv) in out.data_mut().chunks_mut(n).zip(s.data()) {
            row.iter_mut().for_each(|o| *o *= sv);
        }
        Ok(self.binary(&scale, out, Op::ScaleRows(self.id, scale.id)))
    }

    /// Multiplies every element by the single value held in `s`.
    pub fn scale(&self, s: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, sv) = (self.value(), s.value());
        if sv.numel() != 1 {
            return Err(Error::shape("scale", format!("factor shape {:?}", sv.shape())));
        }
        let k = sv.item();
        Ok(self.binary(&s, a.map(|x| x * k), Op::Scale(self.id, s.id)))
    }

    pub fn mul_const(&self, c: T) -> Var<'g, T> {
        self.unary(self.value().map(|x| x * c), Op::MulConst(self.id, c))
    }

    pub fn add_const(&self, c: T) -> Var<'g, T> {
        self.unary(self.value().map(|x| x + c), Op::AddConst(self.id))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let data = kernels::matmul(a.data(), b.data(), m, k, n);
        Ok(self.binary(
            &other,
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul(self.id, other.id),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let v = (*self.value()).clone().reshaped(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Var<'g, T>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(Error::shape("transpose", format!("rank {} input", a.rank())));
        }
        let (m, n) = (a.shape()[0], a.shape()[1]);
        Ok(self.unary(
            Tensor {
                shape: vec![n, m],
                data: kernels::transpose(a.data(), m, n),
            },
            Op::Transpose(self.id),
        ))
    }

    /// `self[.., start..end, ..]` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'g, T>> {
        let a = self.value();
        if axis >= a.rank() || start > end || end > a.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}..{end} on axis {axis} of {:?}", a.shape()),
            ));
        }
        let (outer, ext, inner) = split_axis(a.shape(), axis);
        let w = end - start;
        let mut data = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let base = o * ext * inner;
            data.extend_from_slice(&a.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = w;
        Ok(self.unary(
            Tensor { shape, data },
            Op::Slice {
                parent: self.id,
                axis,
                start,
            },
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance.
    pub fn layer_norm(&self, eps: T) -> Result<Var<'g, T>> {
        let a = self.value();
        let n = a.last_dim();
        if a.rank() == 0 || n == 0 {
            return Err(Error::shape("layer_norm", format!("{:?}", a.shape())));
        }
        let nf = T::lit(n as f64);
        let mut out = Vec::with_capacity(a.numel());
        let mut inv_std = Vec::with_capacity(a.numel() / n);
        for row in a.data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            out.extend(row.iter().map(|&x| (x - mean) * is));
        }
        Ok(self.unary(
            Tensor {
                shape: a.shape().to_vec(),
                data: out,
            },
            Op::LayerNorm {
                parent: self.id,
                inv_std,
            },
        ))
    }

    pub fn gelu(&self) -> Var<'g, T> {
        self.unary(self.value().map(kernels::gelu), Op::Gelu(self.id))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'g, T>> {
        let a = self.value();
        if a.rank() == 0 {
            return Err(Error::shape("softmax", "scalar input"));
        }
        let data = kernels::softmax_rows(a.data(), a.last_dim());
        Ok(self.unary(
            Tensor {
                shape: a.shape().to_vec(),
                data,
            },
            Op::Softmax(self.id),
        ))
    }

    pub fn exp(&self) -> Var<'g, T> {
        self.unary(self.value().map(|x| x.exp()), Op::Exp(self.id))
    }

    pub fn log(&self) -> Var<'g, T> {
        self.unary(self.value().map(|x| x.ln()), Op::Log(self.id))
    }

    pub fn sqrt(&self) -> Var<'g, T> {
        self.unary(self.value().map(|x| x.sqrt()), Op::Sqrt(self.id))
    }

    pub fn square(&self) -> Var<'g, T> {
        self.unary(self.value().map(|x| x * x), Op::Square(self.id))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Var<'g, T> {
        self.unary(Tensor::scalar(self.value().sum_all()), Op::Sum(self.id))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self) -> Var<'g, T> {
        let a = self.value();
        let n = T::lit(a.numel().max(1) as f64);
        self.unary(Tensor::scalar(a.sum_all() / n), Op::Mean(self.id))
    }

    /// Sum over the last axis.
    pub fn sum_last(&self) -> Result<Var<'g, T>> {
        let a = self.value();
        if a.rank() == 0 {
            return Err(Error::shape("sum_last", "scalar input"));
        }
        let n = a.last_dim();
        let data = a.data().chunks(n).map(|r| r.iter().copied().sum()).collect();
        Ok(self.unary(
            Tensor {
                shape: a.shape()[..a.rank() - 1].to_vec(),
                data,
            },
            Op::SumLast(self.id),
        ))
    }

    /// Rotation log map of each row of an `(n, 9)` tensor of row-major
    /// rotation matrices, giving `(n, 3)` axis-angle vectors.
    pub fn so3_log(&self) -> Result<Var<'g, T>> {
        let a = self.value();
        if a.rank() != 2 || a.shape()[1] != 9 {
            return Err(Error::shape("so3_log", format!("{:?}", a.shape())));
        }
        let mut data = Vec::with_capacity(a.shape()[0] * 3);
        for row in a.data().chunks(9) {
            let q: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            let (w, ..) = kernels::so3_log_parts(&q);
            data.extend(w.iter().map(|&v| T::lit(v)));
        }
        Ok(self.unary(
            Tensor {
                shape: vec![a.shape()[0], 3],
                data,
            },
            Op::So3Log(self.id),
        ))
    }

    /// Reverse sweep from this scalar root.
    pub fn backward(&self) -> Result<Gradients<T>> {
        let root = self.value();
        if root.numel() != 1 {
            return Err(Error::NonScalarRoot(root.shape().to_vec()));
        }
        let nodes = self.graph.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.id + 1];
        grads[self.id] = Some(Tensor::full(root.shape(), T::one()));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], id: usize, g: Tensor<T>) {
            if !nodes[id].requires_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *a, g.clone());
                    acc(&mut grads, &nodes, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, *a, g.clone());
                    acc(&mut grads, &nodes, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    acc(&mut grads, &nodes, *a, zip_map(&g, bv, |x, y| x * y));
                    acc(&mut grads, &nodes, *b, zip_map(&g, av, |x, y| x * y));
                }
                Op::Div(a, b) => {
                    let bv = &nodes[*b].value;
                    acc(&mut grads, &nodes, *a, zip_map(&g, bv, |x, y| x / y));
                    let ga = zip_map(&g, out, |x, o| x * o);
                    acc(&mut grads, &nodes, *b, zip_map(&ga, bv, |x, y| -x / y));
                }
                Op::AddBias(a, b) => {
                    let n = g.last_dim();
                    let mut gb = Tensor::zeros(&[n]);
                    for row in g.data().chunks(n) {
                        for (o, &v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, &nodes, *a, g);
                    acc(&mut grads, &nodes, *b, gb);
                    continue;
                }
                Op::MulChannels(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let n = g.last_dim();
                    let mut gb = Tensor::zeros(&[n]);
                    let mut ga = g.clone();
                    for ((grow, arow), garow) in g
                        .data()
                        .chunks(n)
                        .zip(av.data().chunks(n))
                        .zip(ga.data_mut().chunks_mut(n))
                    {
                        for j in 0..n {
                            gb.data_mut()[j] += grow[j] * arow[j];
                            garow[j] = grow[j] * bv.data()[j];
                        }
                    }
                    acc(&mut grads, &nodes, *a, ga);
                    acc(&mut grads, &nodes, *b, gb);
                }
                Op::ScaleRows(a, s) => {
                    let (av, sv) = (&nodes[*a].value, &nodes[*s].value);
                    let n = g.last_dim();
                    let mut gs = Tensor::zeros(sv.shape());
                    let mut ga = g.clone();
                    for (r, ((grow, arow), garow)) in g
                        .data()
                        .chunks(n)
                        .zip(av.data().chunks(n))
                        .zip(ga.data_mut().chunks_mut(n))
                        .enumerate()
                    {
                        let mut dot = T::zero();
                        for j in 0..n {
                            dot += grow[j] * arow[j];
                            garow[j] = grow[j] * sv.data()[r];
                        }
                        gs.data_mut()[r] = dot;
                    }
                    acc(&mut grads, &nodes, *a, ga);
                    acc(&mut grads, &nodes, *s, gs);
                }
                Op::Scale(a, s) => {
                    let (av, sv) = (&nodes[*a].value, &nodes[*s].value);
                    let k = sv.item();
                    let dot: T = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).sum();
                    acc(&mut grads, &nodes, *a, g.map(|x| x * k));
                    acc(&mut grads, &nodes, *s, Tensor::full(sv.shape(), dot));
                }
                Op::MulConst(a, c) => {
                    let c = *c;
                    acc(&mut grads, &nodes, *a, g.map(|x| x * c));
                }
                Op::AddConst(a) => acc(&mut grads, &nodes, *a, g.clone()),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if nodes[*a].requires_grad {
                        let bt = kernels::transpose(bv.data(), k, n);
                        let da = kernels::matmul(g.data(), &bt, m, n, k);
                        acc(
                            &mut grads,
                            &nodes,
                            *a,
                            Tensor {
                                shape: vec![m, k],
                                data: da,
                            },
                        );
                    }
                    if nodes[*b].requires_grad {
                        let at = kernels::transpose(av.data(), m, k);
                        let db = kernels::matmul(&at, g.data(), k, m, n);
                        acc(
                            &mut grads,
                            &nodes,
                            *b,
                            Tensor {
                                shape: vec![k, n],
                                data: db,
                            },
                        );
                    }
                }
                Op::Reshape(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    acc(&mut grads, &nodes, *a, g.reshaped(&shape)?);
                    continue;
                }
                Op::Transpose(a) => {
                    let (m, n) = (g.shape()[0], g.shape()[1]);
                    let data = kernels::transpose(g.data(), m, n);
                    acc(
                        &mut grads,
                        &nodes,
                        *a,
                        Tensor {
                            shape: vec![n, m],
                            data,
                        },
                    );
                }
                Op::Concat { parents, axis, extents } => {
                    let total: usize = extents.iter().sum();
                    let (outer, _, inner) = split_axis(g.shape(), *axis);
                    let mut offset = 0;
                    for (&p, &e) in parents.iter().zip(extents) {
                        if nodes[p].requires_grad {
                            let mut data = Vec::with_capacity(outer * e * inner);
                            for o in 0..outer {
                                let base = o * total * inner + offset * inner;
                                data.extend_from_slice(&g.data()[base..base + e * inner]);
                            }
                            let shape = nodes[p].value.shape().to_vec();
                            acc(&mut grads, &nodes, p, Tensor { shape, data });
                        }
                        offset += e;
                    }
                }
                Op::Slice { parent, axis, start } => {
                    let pv = &nodes[*parent].value;
                    let (outer, ext, inner) = split_axis(pv.shape(), *axis);
                    let w = g.shape()[*axis];
                    let mut gp = Tensor::zeros(pv.shape());
                    for o in 0..outer {
                        let dst = o * ext * inner + start * inner;
                        let src = o * w * inner;
                        gp.data_mut()[dst..dst + w * inner].copy_from_slice(&g.data()[src..src + w * inner]);
                    }
                    acc(&mut grads, &nodes, *parent, gp);
                }
                Op::LayerNorm { parent, inv_std } => {
                    let n = g.last_dim();
                    let nf = T::lit(n as f64);
                    let mut gp = g.clone();
                    for (((grow, yrow), gprow), &is) in g
                        .data()
                        .chunks(n)
                        .zip(out.data().chunks(n))
                        .zip(gp.data_mut().chunks_mut(n))
                        .zip(inv_std)
                    {
                        let mg = grow.iter().copied().sum::<T>() / nf;
                        let mgy = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>() / nf;
                        for j in 0..n {
                            gprow[j] = is * (grow[j] - mg - yrow[j] * mgy);
                        }
                    }
                    acc(&mut grads, &nodes, *parent, gp);
                }
                Op::Gelu(a) => {
                    let av = &nodes[*a].value;
                    acc(
                        &mut grads,
                        &nodes,
                        *a,
                        zip_map(&g, av, |x, y| x * kernels::gelu_grad(y)),
                    );
                }
                Op::Softmax(a) => {
                    let n = g.last_dim();
                    let mut gp = g.clone();
                    for ((grow, yrow), gprow) in g
                        .data()
                        .chunks(n)
                        .zip(out.data().chunks(n))
                        .zip(gp.data_mut().chunks_mut(n))
                    {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gprow[j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    acc(&mut grads, &nodes, *a, gp);
                }
                Op::Exp(a) => acc(&mut grads, &nodes, *a, zip_map(&g, out, |x, y| x * y)),
                Op::Log(a) => {
                    let av = &nodes[*a].value;
                    acc(&mut grads, &nodes, *a, zip_map(&g, av, |x, y| x / y));
                }
                Op::Sqrt(a) => {
                    let half = T::lit(0.5);
                    acc(&mut grads, &nodes, *a, zip_map(&g, out, |x, y| x * half / y));
                }
                Op::Square(a) => {
                    let av = &nodes[*a].value;
                    let two = T::lit(2.0);
                    acc(&mut grads, &nodes, *a, zip_map(&g, av, |x, y| x * two * y));
                }
                Op::Sum(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    acc(&mut grads, &nodes, *a, Tensor::full(&shape, g.item()));
                }
                Op::Mean(a) => {
                    let pv = &nodes[*a].value;
                    let n = T::lit(pv.numel().max(1) as f64);
                    acc(&mut grads, &nodes, *a, Tensor::full(pv.shape(), g.item() / n));
                }
                Op::SumLast(a) => {
                    let pv = &nodes[*a].value;
                    let n = pv.last_dim();
                    let mut gp = Tensor::zeros(pv.shape());
                    for (row, &gv) in gp.data_mut().chunks_mut(n).zip(g.data()) {
                        row.iter_mut().for_each(|x| *x = gv);
                    }
                    acc(&mut grads, &nodes, *a, gp);
                }
                Op::So3Log(a) => {
                    let pv = &nodes[*a].value;
                    let mut gp = Tensor::zeros(pv.shape());
                    for ((qrow, grow), gprow) in pv
                        .data()
                        .chunks(9)
                        .zip(g.data().chunks(3))
                        .zip(gp.data_mut().chunks_mut(9))
                    {
                        let q: Vec<f64> = qrow.iter().map(|v| v.as_f64()).collect();
                        let gw: Vec<f64> = grow.iter().map(|v| v.as_f64()).collect();
                        let (_, _, f, gder) = kernels::so3_log_parts(&q);
                        let vee = [q[7] - q[5], q[2] - q[6], q[3] - q[1]];
                        let dtr = gder * (gw[0] * vee[0] + gw[1] * vee[1] + gw[2] * vee[2]);
                        let mut d = [0.0f64; 9];
                        d[0] = dtr;
                        d[4] = dtr;
                        d[8] = dtr;
                        d[7] += gw[0] * f;
                        d[5] -= gw[0] * f;
                        d[2] += gw[1] * f;
                        d[6] -= gw[1] * f;
                        d[3] += gw[2] * f;
                        d[1] -= gw[2] * f;
                        for (o, v) in gprow.iter_mut().zip(d) {
                            *o = T::lit(v);
                        }
                    }
                    acc(&mut grads, &nodes, *a, gp);
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let g = g?;
                matches!(nodes[i].op, Op::Leaf).then_some((i, g))
            })
            .collect();
        Ok(Gradients { grads })
    }
}
