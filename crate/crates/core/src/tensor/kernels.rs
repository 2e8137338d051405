use super::Scalar;
use crate::par;

/// Rows above this many multiply-adds are split across threads.
const PAR_THRESHOLD: usize = 1 << 15;

/// `c[m,n] = a[m,k] · b[k,n]`, all row-major.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if n == 0 {
        return c;
    }
    let row = |i: usize, out: &mut [T]| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        par::for_each_chunk_mut(&mut c, n, row);
    } else {
        c.chunks_mut(n).enumerate().for_each(|(i, out)| row(i, out));
    }
    c
}

pub(crate) fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

pub(crate) fn softmax_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (xr, or) in x.chunks(n).zip(out.chunks_mut(n)) {
        let mx = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - mx).exp();
            s += *o;
        }
        for o in or.iter_mut() {
            *o = *o / s;
        }
    }
    out
}

/// Rotation log for a row-major 3x3 matrix, returned with the data needed
/// for its derivative: `(omega, theta, f, g)` where
/// `omega = f(theta) * vee(Q - Q^T)` and `g = f'(theta) * dtheta/dtrace`.
pub(crate) fn so3_log_parts(q: &[f64]) -> ([f64; 3], f64, f64, f64) {
    let tr = q[0] + q[4] + q[8];
    let c = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = c.acos();
    let vee = [q[7] - q[5], q[2] - q[6], q[3] - q[1]];
    let (f, g) = if theta < 1e-4 {
        let t2 = theta * theta;
        // series of theta/(2 sin theta) and of -(sin - theta cos)/(4 sin^3)
        (0.5 + t2 / 12.0, -1.0 / 12.0 - t2 / 30.0)
    } else {
        let s = theta.sin();
        (theta / (2.0 * s), -(s - theta * theta.cos()) / (4.0 * s * s * s))
    };
    ([f * vee[0], f * vee[1], f * vee[2]], theta, f, g)
}
