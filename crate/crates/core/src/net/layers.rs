//! Transformer building blocks on the autodiff tape.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamSet, Scalar, Tensor, Var};

/// Parameters placed on a tape, trainable or frozen by name prefix.
pub struct Bound<'g, T: Scalar> {
    pub tape: &'g Graph<T>,
    vars: HashMap<String, Var<'g, T>>,
}

impl<'g, T: Scalar> Bound<'g, T> {
    pub fn new(tape: &'g Graph<T>, params: &ParamSet<T>, trainable: impl Fn(&str) -> bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.to_string(), v)
            })
            .collect();
        Self { tape, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var<'g, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Missing(format!("parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'g, T>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

pub fn linear<'g, T: Scalar>(p: &Bound<'g, T>, x: Var<'g, T>, name: &str) -> Result<Var<'g, T>> {
    x.matmul(p.get(&format!("{name}.w"))?)?
        .add_bias(p.get(&format!("{name}.b"))?)
}

pub fn layer_norm<'g, T: Scalar>(p: &Bound<'g, T>, x: Var<'g, T>, name: &str) -> Result<Var<'g, T>> {
    x.layer_norm(T::lit(1e-5))?
        .mul_channels(p.get(&format!("{name}.g"))?)?
        .add_bias(p.get(&format!("{name}.b"))?)
}

/// Multi-head attention of queries `xq` over keys/values `xkv`.
pub fn attention<'g, T: Scalar>(
    p: &Bound<'g, T>,
    xq: Var<'g, T>,
    xkv: Var<'g, T>,
    name: &str,
    heads: usize,
) -> Result<Var<'g, T>> {
    let q = linear(p, xq, &format!("{name}.q"))?;
    let k = linear(p, xkv, &format!("{name}.k"))?;
    let v = linear(p, xkv, &format!("{name}.v"))?;
    let dim = q.shape()[1];
    let dh = dim / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let qh = q.slice(1, a, b)?;
        let kh = k.slice(1, a, b)?;
        let vh = v.slice(1, a, b)?;
        let att = qh.matmul(kh.transpose()?)?.mul_const(scale).softmax()?;
        outs.push(att.matmul(vh)?);
    }
    let o = if heads == 1 { outs[0] } else { p.tape.concat(&outs, 1)? };
    linear(p, o, &format!("{name}.o"))
}

pub fn mlp<'g, T: Scalar>(p: &Bound<'g, T>, x: Var<'g, T>, name: &str) -> Result<Var<'g, T>> {
    let h = linear(p, x, &format!("{name}.fc1"))?.gelu();
    linear(p, h, &format!("{name}.fc2"))
}

/// Pre-norm self-attention block.
pub fn encoder_block<'g, T: Scalar>(p: &Bound<'g, T>, x: Var<'g, T>, name: &str, heads: usize) -> Result<Var<'g, T>> {
    let n1 = layer_norm(p, x, &format!("{name}.ln1"))?;
    let x = x.add(attention(p, n1, n1, &format!("{name}.attn"), heads)?)?;
    let n2 = layer_norm(p, x, &format!("{name}.ln2"))?;
    x.add(mlp(p, n2, &format!("{name}.mlp"))?)
}

/// Self-attention, cross-attention to `other`, then MLP.
pub fn decoder_block<'g, T: Scalar>(
    p: &Bound<'g, T>,
    x: Var<'g, T>,
    other: Var<'g, T>,
    name: &str,
    heads: usize,
) -> Result<Var<'g, T>> {
    let n1 = layer_norm(p, x, &format!("{name}.ln1"))?;
    let x = x.add(attention(p, n1, n1, &format!("{name}.self"), heads)?)?;
    let n2 = layer_norm(p, x, &format!("{name}.ln2"))?;
    let ny = layer_norm(p, other, &format!("{name}.lny"))?;
    let x = x.add(attention(p, n2, ny, &format!("{name}.cross"), heads)?)?;
    let n3 = layer_norm(p, x, &format!("{name}.ln3"))?;
    x.add(mlp(p, n3, &format!("{name}.mlp"))?)
}

/// `(C, H, W)` channel-major data to `(tokens, C * p * p)` patch rows,
/// each row ordered channel, patch row, patch column.
pub fn patchify<T: Scalar>(data: &[T], channels: usize, h: usize, w: usize, p: usize) -> Tensor<T> {
    let (th, tw) = (h / p, w / p);
    let row = channels * p * p;
    let mut out = Vec::with_capacity(th * tw * row);
    for ty in 0..th {
        for tx in 0..tw {
            for c in 0..channels {
                for py in 0..p {
                    let y = ty * p + py;
                    let base = c * h * w + y * w + tx * p;
                    out.extend_from_slice(&data[base..base + p]);
                }
            }
        }
    }
    Tensor::new(&[th * tw, row], out).expect("patch layout")
}

/// Image pixel index of each row of a `(tokens * p * p, _)` head output.
pub fn token_pixel_order(h: usize, w: usize, p: usize) -> Vec<usize> {
    let tw = w / p;
    let mut order = Vec::with_capacity(h * w);
    for t in 0..(h / p) * tw {
        let (ty, tx) = (t / tw, t % tw);
        for py in 0..p {
            for px in 0..p {
                order.push((ty * p + py) * w + tx * p + px);
            }
        }
    }
    order
}

/// Sinusoidal features `[sin(k pi tau), cos(k pi tau)]`, `k = 1..=freqs`.
pub fn sinusoid<T: Scalar>(tau: f64, freqs: usize) -> Tensor<T> {
    let mut v = Vec::with_capacity(2 * freqs);
    for k in 1..=freqs {
        let a = k as f64 * std::f64::consts::PI * tau;
        v.push(T::lit(a.sin()));
        v.push(T::lit(a.cos()));
    }
    Tensor::new(&[1, 2 * freqs], v).expect("row vector")
}
