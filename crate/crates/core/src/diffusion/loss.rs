use rand::Rng;

use super::schedule::NoiseSchedule;
use crate::epsnet::EpsNetParams;
use crate::error::{Error, Result};
use crate::gradcore::{Ops, Tensor};
use crate::rng::normal;

/// A batch of clean points pushed through the forward process.
#[derive(Debug, Clone)]
pub struct NoisedBatch {
    pub x_t: Tensor,
    pub eps: Tensor,
    /// Timestep of each row, uniform on `[1, T]`.
    pub t: Vec<usize>,
}

/// Draws `t ~ U{1..T}` and `eps ~ N(0, I)` per row of `x0` (in that order)
/// and applies the forward marginal row by row.
pub fn noise_batch<R: Rng + ?Sized>(x0: &Tensor, sched: &NoiseSchedule, rng: &mut R) -> Result<NoisedBatch> {
    if x0.shape().len() != 2 {
        return Err(Error::invalid("noise_batch expects a [batch, dim] tensor"));
    }
    let (n, d) = (x0.rows(), x0.cols());
    let mut x_t = Vec::with_capacity(n * d);
    let mut eps = Vec::with_capacity(n * d);
    let mut ts = Vec::with_capacity(n);
    for r in 0..n {
        let t = rng.random_range(1..=sched.steps());
        let (a, s) = (sched.sqrt_alpha(t), sched.sqrt_one_minus_alpha(t));
        for &x in x0.row(r) {
            let e = normal(rng);
            x_t.push(a * x + s * e);
            eps.push(e);
        }
        ts.push(t);
    }
    Ok(NoisedBatch {
        x_t: Tensor::new(vec![n, d], x_t)?,
        eps: Tensor::new(vec![n, d], eps)?,
        t: ts,
    })
}

/// Batch mean of `||eps - eps_hat||^2`.
pub fn eps_mse<O: Ops>(ops: &mut O, eps_hat: &Tensor, eps: &Tensor) -> Result<Tensor> {
    let d = eps.cols() as f64;
    let per_elem = ops.sq_diff_mean(eps_hat, eps)?;
    ops.scale(&per_elem, d)
}

/// The noise-prediction objective with unit weights across timesteps:
/// mean over the batch of `||eps - eps_net(sqrt(a_t) x0 + sqrt(1 - a_t) eps, t)||^2`.
pub fn epsilon_loss<O: Ops, R: Rng + ?Sized>(
    ops: &mut O,
    net: &EpsNetParams,
    x0: &Tensor,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    let batch = noise_batch(x0, sched, rng)?;
    let eps_hat = net.forward_ops(ops, &batch.x_t, &batch.t)?;
    eps_mse(ops, &eps_hat, &batch.eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epsnet::NetDims;
    use crate::gradcore::Eager;
    use crate::rng::{stream, Domain};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-4, 0.12).unwrap()
    }

    #[test]
    fn exact_noise_prediction_gives_zero_loss() {
        let x0 = Tensor::from_rows(&[[1.0, 2.0], [-0.5, 0.25], [0.0, 3.0]]).unwrap();
        let b = noise_batch(&x0, &sched(), &mut stream(1, Domain::Train, 0)).unwrap();
        let l = eps_mse(&mut Eager, &b.eps, &b.eps).unwrap();
        assert_eq!(l.item().unwrap(), 0.0);
    }

    #[test]
    fn zero_network_loss_matches_chi_square_mean() {
        // E||eps||^2 = d; 4000 rows of d = 2 gives sd sqrt(2 d / n) ~= 0.032
        let dims = NetDims {
            data_dim: 2,
            hidden: 4,
            depth: 2,
            embed_dim: 4,
        };
        let net = EpsNetParams::zeros(dims).unwrap();
        let x0 = Tensor::filled(&[4000, 2], 0.5);
        let l = epsilon_loss(&mut Eager, &net, &x0, &sched(), &mut stream(2, Domain::Train, 0))
            .unwrap()
            .item()
            .unwrap();
        assert!((l - 2.0).abs() < 5.0 * 0.032, "loss {l}");
    }

    #[test]
    fn timesteps_cover_range() {
        let x0 = Tensor::zeros(&[5000, 1]);
        let b = noise_batch(&x0, &sched(), &mut stream(3, Domain::Train, 0)).unwrap();
        assert_eq!(*b.t.iter().min().unwrap(), 1);
        assert_eq!(*b.t.iter().max().unwrap(), 100);
    }
}
