use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{self, forward, sigmoid, Ops, Primitive};
use super::tensor::{NodeId, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
enum Op {
    Leaf,
    Prim(Primitive),
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for constant inputs (tensors not on this tape).
    inputs: Vec<Option<usize>>,
    /// Input values needed by the backward rule.
    saved: Vec<Tensor>,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// Append-only record of primitive applications for reverse-mode
/// differentiation. A tape is single-use: [`Tape::backward`] consumes it.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every leaf of a tape.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, param: &Tensor) -> Option<&Tensor> {
        let node = param.node()?;
        if node.tape != self.tape {
            return None;
        }
        self.grads.get(&node.index)
    }

    /// Like [`get`](Self::get) but reports a missing gradient as an error.
    pub fn wrt(&self, param: &Tensor) -> Result<&Tensor> {
        self.get(param)
            .ok_or_else(|| Error::Tape("tensor is not a leaf of the differentiated tape".into()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers `value` as a differentiable leaf and returns the bound copy.
    pub fn param(&mut self, value: &Tensor) -> Tensor {
        let index = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            saved: Vec::new(),
            shape: value.shape().to_vec(),
            requires_grad: true,
        });
        Tensor::from_parts(
            value.shape().to_vec(),
            value.data().to_vec(),
            Some(NodeId { tape: self.id, index }),
        )
    }

    fn resolve(&self, t: &Tensor) -> Result<Option<usize>> {
        match t.node() {
            None => Ok(None),
            Some(n) if n.tape == self.id => Ok(Some(n.index)),
            Some(_) => Err(Error::Tape("input belongs to a different tape".into())),
        }
    }

    /// Propagates gradients from `loss` back to every leaf.
    pub fn backward(self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a single-element tensor, got shape {:?}",
                loss.shape()
            )));
        }
        let root = match loss.node() {
            Some(n) if n.tape == self.id => n.index,
            _ => return Err(Error::Tape("loss was not recorded on this tape".into())),
        };

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);

        for idx in (0..=root).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Op::Prim(prim) = node.op else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let wants: Vec<bool> = node
                .inputs
                .iter()
                .map(|i| i.is_some_and(|i| self.nodes[i].requires_grad))
                .collect();
            let input_grads = vjp(prim, &node.saved, &node.shape, &g, &wants);
            for ((input, want), ig) in node.inputs.iter().zip(&wants).zip(input_grads) {
                if let (Some(i), true, Some(ig)) = (input, want, ig) {
                    accumulate(&mut grads[*i], ig);
                }
            }
        }

        let mut out = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let data = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.shape.iter().product()]);
                out.insert(idx, Tensor::from_parts(node.shape.clone(), data, None));
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

/// Vector-Jacobian product for one primitive.
fn vjp(prim: Primitive, saved: &[Tensor], out_shape: &[usize], g: &[f64], wants: &[bool]) -> Vec<Option<Vec<f64>>> {
    let want = |i: usize| wants.get(i).copied().unwrap_or(false);
    match prim {
        Primitive::MatMul => {
            let (a, b) = (&saved[0], &saved[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            debug_assert_eq!(out_shape, [m, n]);
            let ga = want(0).then(|| ops::matmul_nt(g, b.data(), m, n, k));
            let gb = want(1).then(|| ops::matmul_tn(a.data(), g, m, k, n));
            vec![ga, gb]
        }
        Primitive::AddBroadcast => {
            let b = &saved[1];
            let ga = want(0).then(|| g.to_vec());
            let gb = want(1).then(|| {
                if b.shape() == out_shape {
                    g.to_vec()
                } else {
                    let n = b.numel();
                    let mut acc = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    acc
                }
            });
            vec![ga, gb]
        }
        Primitive::ConcatLastDim => {
            let (ka, kb) = (saved[0].cols(), saved[1].cols());
            let rows = g.chunks_exact(ka + kb);
            let ga = want(0).then(|| rows.clone().flat_map(|r| r[..ka].iter().copied()).collect());
            let gb = want(1).then(|| rows.flat_map(|r| r[ka..].iter().copied()).collect());
            vec![ga, gb]
        }
        Primitive::Scale(c) => vec![want(0).then(|| g.iter().map(|v| c * v).collect())],
        Primitive::Silu => {
            let x = saved[0].data();
            vec![want(0).then(|| {
                x.iter()
                    .zip(g)
                    .map(|(&x, &gv)| {
                        let s = sigmoid(x);
                        gv * (s + x * s * (1.0 - s))
                    })
                    .collect()
            })]
        }
        Primitive::MeanAll => {
            let n = saved[0].numel();
            vec![want(0).then(|| vec![g[0] / n as f64; n])]
        }
        Primitive::SqDiffMean | Primitive::AbsDiffMean => {
            let (a, b) = (saved[0].data(), saved[1].data());
            let scale = g[0] / a.len() as f64;
            let d: Vec<f64> = if prim == Primitive::SqDiffMean {
                a.iter().zip(b).map(|(x, y)| 2.0 * scale * (x - y)).collect()
            } else {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| {
                        let diff: f64 = x - y;
                        if diff == 0.0 {
                            0.0
                        } else {
                            scale * diff.signum()
                        }
                    })
                    .collect()
            };
            let gb = want(1).then(|| d.iter().map(|v| -v).collect());
            let ga = want(0).then_some(d);
            vec![ga, gb]
        }
    }
}

impl Ops for Tape {
    fn apply(&mut self, prim: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
        let (shape, data) = forward(prim, inputs)?;
        let resolved = inputs.iter().map(|t| self.resolve(t)).collect::<Result<Vec<_>>>()?;
        let requires_grad = resolved.iter().any(|i| i.is_some_and(|i| self.nodes[i].requires_grad));
        let saved = if requires_grad {
            inputs.iter().map(|t| t.detach()).collect()
        } else {
            Vec::new()
        };
        let index = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Prim(prim),
            inputs: resolved,
            saved,
            shape: shape.clone(),
            requires_grad,
        });
        Ok(Tensor::from_parts(shape, data, Some(NodeId { tape: self.id, index })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::Eager;

    #[test]
    fn mean_of_scaled_input() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(vec![2, 3], vec![0.1, -0.4, 2.0, 1.0, 0.0, 3.5]).unwrap());
        let s = tape.scale(&x, 3.0).unwrap();
        let loss = tape.mean_all(&s).unwrap();
        let g = tape.backward(&loss).unwrap();
        for v in g.wrt(&x).unwrap().data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn sq_diff_with_itself_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::vector(vec![1.0, -2.0, 0.7]).unwrap());
        let loss = tape.sq_diff_mean(&x, &x).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert!(g.wrt(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_loss() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = tape.scale(&x, 2.0).unwrap();
        assert!(matches!(tape.backward(&y), Err(Error::Tape(_))));

        let tape = Tape::new();
        let other = Eager.mean_all(&Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert!(tape.backward(&other).is_err());

        let mut a = Tape::new();
        let mut b = Tape::new();
        let xa = a.param(&Tensor::scalar(1.0));
        let lb = b.scale(&Tensor::scalar(1.0), 1.0).unwrap();
        assert!(a.scale(&xa, 1.0).is_ok());
        assert!(b.add(&lb, &xa).is_err());
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::vector(vec![1.0, 2.0]).unwrap());
        let unused = tape.param(&Tensor::vector(vec![5.0]).unwrap());
        let loss = tape.mean_all(&x).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.wrt(&unused).unwrap().data(), &[0.0]);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn recording_does_not_change_values() {
        let a = Tensor::new(vec![2, 2], vec![0.3, -1.1, 2.2, 0.9]).unwrap();
        let b = Tensor::vector(vec![0.5, -0.25]).unwrap();
        let mut tape = Tape::new();
        let pa = tape.param(&a);
        let sum = tape.add(&pa, &b).unwrap();
        let taped = tape.silu(&sum).unwrap();
        let eager = Eager.silu(&Eager.add(&a, &b).unwrap()).unwrap();
        assert_eq!(taped.data(), eager.data());
    }
}
