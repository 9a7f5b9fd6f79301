use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// `x · weight + bias` over the last axis of `x`.
///
/// `x` may be a single row `[R]` or carry leading axes `[.., R]`; `weight` is
/// `[R, M]` and `bias` is `[M]`.
pub fn affine(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weight.rank() != 2 || x.rank() == 0 || x.channels() != weight.shape()[0] {
        return Err(Error::dim("affine", x.shape(), weight.shape()));
    }
    let (r, m) = (weight.shape()[0], weight.shape()[1]);
    if bias.shape() != [m] {
        return Err(Error::dim("affine(bias)", weight.shape(), bias.shape()));
    }
    let rows = x.len() / r;
    let mut out = Vec::with_capacity(rows * m);
    for row in x.data().chunks_exact(r) {
        let start = out.len();
        out.extend_from_slice(bias.data());
        let acc = &mut out[start..];
        for (&xv, wrow) in row.iter().zip(weight.data().chunks_exact(m)) {
            if xv == 0.0 {
                continue;
            }
            for (a, &w) in acc.iter_mut().zip(wrow) {
                *a += xv * w;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = m;
    Tensor::new(shape, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn elementwise(op: Activation, z: &Tensor) -> Tensor {
    z.map(|v| op.apply(v))
}

/// Max-subtracted softmax over one slice, in place.
pub fn softmax_in_place(slice: &mut [f64]) {
    let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in slice.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in slice.iter_mut() {
        *v /= total;
    }
}

pub fn softmax_last_axis(z: &Tensor) -> Tensor {
    let mut out = z.clone();
    let c = z.channels();
    if c > 0 {
        for slice in out.data_mut().chunks_exact_mut(c) {
            softmax_in_place(slice);
        }
    }
    out
}
