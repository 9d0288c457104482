use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embed::sinusoid;
use crate::error::{Error, Result};
use crate::gradcore::{Eager, Ops, Tape, Tensor};
use crate::rng::{stream, Domain};

/// Architecture of the MLP: `depth` linear layers mapping
/// `data_dim + embed_dim -> hidden -> ... -> data_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetDims {
    pub data_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub embed_dim: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        Self {
            data_dim: 2,
            hidden: 128,
            depth: 4,
            embed_dim: 32,
        }
    }
}

impl NetDims {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.hidden == 0 || self.depth == 0 || self.embed_dim == 0 {
            return Err(Error::invalid(format!("network dims must be >= 1: {self:?}")));
        }
        if !self.embed_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "time embedding dim must be even, got {}",
                self.embed_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|i| {
                let fan_in = if i == 0 {
                    self.data_dim + self.embed_dim
                } else {
                    self.hidden
                };
                let fan_out = if i + 1 == self.depth {
                    self.data_dim
                } else {
                    self.hidden
                };
                (fan_in, fan_out)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

/// Parameters of the noise predictor `eps(x_t, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsNetParams {
    dims: NetDims,
    layers: Vec<Linear>,
}

impl EpsNetParams {
    /// Seeded Glorot-uniform weights and zero biases.
    pub fn init(seed: u64, dims: NetDims) -> Result<Self> {
        dims.validate()?;
        let mut rng = stream(seed, Domain::Init, 0);
        let layers = dims
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                Linear {
                    weight: Tensor::from_parts(vec![fan_in, fan_out], w, None),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Ok(Self { dims, layers })
    }

    /// All-zero parameters; the network then predicts zero noise everywhere.
    pub fn zeros(dims: NetDims) -> Result<Self> {
        dims.validate()?;
        let layers = dims
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Linear {
                weight: Tensor::zeros(&[i, o]),
                bias: Tensor::zeros(&[o]),
            })
            .collect();
        Ok(Self { dims, layers })
    }

    pub fn from_layers(dims: NetDims, layers: Vec<Linear>) -> Result<Self> {
        dims.validate()?;
        let shapes = dims.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for ((i, o), l) in shapes.into_iter().zip(&layers) {
            if l.weight.shape() != [i, o] || l.bias.shape() != [o] {
                return Err(Error::Shape {
                    op: "EpsNetParams::from_layers",
                    lhs: l.weight.shape().to_vec(),
                    rhs: vec![i, o],
                });
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::NonFinite {
                    op: "EpsNetParams::from_layers",
                });
            }
        }
        Ok(Self { dims, layers })
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    /// Parameter tensors in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    /// Hash of the dims and the exact weight bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        let d = self.dims;
        for v in [d.data_dim, d.hidden, d.depth, d.embed_dim] {
            h.update((v as u64).to_le_bytes());
        }
        for t in self.tensors() {
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    pub fn same_shape(&self, other: &EpsNetParams) -> bool {
        self.dims == other.dims
    }

    /// Copy whose tensors are registered as leaves of `tape`.
    pub fn bind(&self, tape: &mut Tape) -> EpsNetParams {
        let layers = self
            .layers
            .iter()
            .map(|l| Linear {
                weight: tape.param(&l.weight),
                bias: tape.param(&l.bias),
            })
            .collect();
        Self {
            dims: self.dims,
            layers,
        }
    }

    /// `eps(x, t)` for a batch `x` of shape `[batch, data_dim]` at a single timestep.
    pub fn forward(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        self.forward_ops(&mut Eager, x, &[t])
    }

    /// Forward pass through any executor. `times` holds one timestep per
    /// row, or a single timestep shared by the whole batch.
    pub fn forward_ops<O: Ops>(&self, ops: &mut O, x: &Tensor, times: &[usize]) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.dims.data_dim {
            return Err(Error::Shape {
                op: "epsnet forward",
                lhs: x.shape().to_vec(),
                rhs: vec![x.shape()[0], self.dims.data_dim],
            });
        }
        let batch = x.rows();
        let e = self.dims.embed_dim;
        let emb = match times {
            [t] => {
                let row = sinusoid(*t as f64, e)?;
                let mut data = Vec::with_capacity(batch * e);
                for _ in 0..batch {
                    data.extend_from_slice(&row);
                }
                data
            }
            ts if ts.len() == batch => {
                let mut data = Vec::with_capacity(batch * e);
                for &t in ts {
                    data.extend(sinusoid(t as f64, e)?);
                }
                data
            }
            ts => {
                return Err(Error::invalid(format!(
                    "{} timesteps supplied for a batch of {batch}",
                    ts.len()
                )))
            }
        };
        let emb = Tensor::from_parts(vec![batch, e], emb, None);
        let mut h = ops.concat(x, &emb)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = ops.matmul(&h, &layer.weight)?;
            h = ops.add(&h, &layer.bias)?;
            if i < last {
                h = ops.silu(&h)?;
            }
        }
        Ok(h)
    }
}
