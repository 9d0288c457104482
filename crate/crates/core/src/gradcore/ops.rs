//! Forward kernels shared by eager evaluation and the tape.
//!
//! Both execution modes call the same kernel functions, so evaluating a
//! graph with or without recording produces bit-identical values.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// The closed set of differentiable primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    /// Elementwise add of equal shapes, or a `[n]` vector added to every row of `[b,n]`.
    AddBroadcast,
    /// Concatenation along the last axis.
    ConcatLastDim,
    Scale(f64),
    /// `x * sigmoid(x)`
    Silu,
    MeanAll,
    /// `mean((a - b)^2)` over all elements.
    SqDiffMean,
    /// `mean(|a - b|)` over all elements.
    AbsDiffMean,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::AddBroadcast => "add_broadcast",
            Primitive::ConcatLastDim => "concat_lastdim",
            Primitive::Scale(_) => "scale",
            Primitive::Silu => "silu",
            Primitive::MeanAll => "mean_all",
            Primitive::SqDiffMean => "sq_diff_mean",
            Primitive::AbsDiffMean => "abs_diff_mean",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Primitive::Scale(_) | Primitive::Silu | Primitive::MeanAll => 1,
            _ => 2,
        }
    }
}

/// Something that can evaluate primitives: [`Eager`] or a recording [`Tape`](super::Tape).
pub trait Ops {
    fn apply(&mut self, prim: Primitive, inputs: &[&Tensor]) -> Result<Tensor>;

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::AddBroadcast, &[a, b])
    }

    fn concat(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::ConcatLastDim, &[a, b])
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.apply(Primitive::Scale(c), &[a])
    }

    fn silu(&mut self, a: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Silu, &[a])
    }

    fn mean_all(&mut self, a: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::MeanAll, &[a])
    }

    fn sq_diff_mean(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::SqDiffMean, &[a, b])
    }

    fn abs_diff_mean(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::AbsDiffMean, &[a, b])
    }
}

/// Evaluation without recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Ops for Eager {
    fn apply(&mut self, prim: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
        let (shape, data) = forward(prim, inputs)?;
        Ok(Tensor::from_parts(shape, data, None))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(prim: Primitive, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op: prim.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// Validates the inputs of `prim` and computes its output.
pub(crate) fn forward(prim: Primitive, inputs: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>)> {
    if inputs.len() != prim.arity() {
        return Err(Error::invalid(format!(
            "{} takes {} inputs, got {}",
            prim.name(),
            prim.arity(),
            inputs.len()
        )));
    }
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite { op: prim.name() });
    }
    match prim {
        Primitive::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(prim, a, b));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Ok((vec![m, n], matmul(a.data(), b.data(), m, k, n)))
        }
        Primitive::AddBroadcast => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                Ok((a.shape().to_vec(), out))
            } else if a.shape().len() == 2 && b.shape() == [a.shape()[1]] {
                let n = b.numel();
                let mut out = a.data().to_vec();
                for row in out.chunks_exact_mut(n) {
                    for (o, v) in row.iter_mut().zip(b.data()) {
                        *o += v;
                    }
                }
                Ok((a.shape().to_vec(), out))
            } else {
                Err(shape_err(prim, a, b))
            }
        }
        Primitive::ConcatLastDim => {
            let (a, b) = (inputs[0], inputs[1]);
            let ra = a.shape().len();
            if ra != b.shape().len() || a.shape()[..ra - 1] != b.shape()[..ra - 1] {
                return Err(shape_err(prim, a, b));
            }
            let (ka, kb) = (a.cols(), b.cols());
            let mut out = Vec::with_capacity(a.numel() + b.numel());
            for (ra, rb) in a.data().chunks_exact(ka).zip(b.data().chunks_exact(kb)) {
                out.extend_from_slice(ra);
                out.extend_from_slice(rb);
            }
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = ka + kb;
            Ok((shape, out))
        }
        Primitive::Scale(c) => {
            if !c.is_finite() {
                return Err(Error::NonFinite { op: prim.name() });
            }
            let a = inputs[0];
            Ok((a.shape().to_vec(), a.data().iter().map(|x| c * x).collect()))
        }
        Primitive::Silu => {
            let a = inputs[0];
            Ok((a.shape().to_vec(), a.data().iter().map(|&x| x * sigmoid(x)).collect()))
        }
        Primitive::MeanAll => {
            let a = inputs[0];
            Ok((vec![1], vec![a.data().iter().sum::<f64>() / a.numel() as f64]))
        }
        Primitive::SqDiffMean | Primitive::AbsDiffMean => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(prim, a, b));
            }
            let sum: f64 = if prim == Primitive::SqDiffMean {
                a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
            } else {
                a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum()
            };
            Ok((vec![1], vec![sum / a.numel() as f64]))
        }
    }
}

/// Row-major `[m,k] x [k,n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&a_ip, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

/// `[m,n] x [k,n]^T -> [m,k]`
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * k);
    for a_row in a.chunks_exact(n).take(m) {
        for b_row in b.chunks_exact(n).take(k) {
            out.push(a_row.iter().zip(b_row).map(|(x, y)| x * y).sum());
        }
    }
    out
}

/// `[m,k]^T x [m,n] -> [k,n]`
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for (a_row, b_row) in a.chunks_exact(k).zip(b.chunks_exact(n)).take(m) {
        for (&a_ip, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
    out
}
