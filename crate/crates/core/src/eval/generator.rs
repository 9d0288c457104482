use crate::diffusion::{ddim_sample, NoiseSchedule, TimestepSubsequence};
use crate::distill::{student_predict, StudentHead};
use crate::epsnet::EpsModel;
use crate::error::Result;
use crate::gradcore::Tensor;

/// Rows per network pass; keeps activations cache-resident so cost is linear in n.
pub const CHUNK_ROWS: usize = 1024;

/// Applies `f` to consecutive row blocks of `x`. Rows are independent, so the
/// result is bit-identical to one pass over all of `x`.
fn chunked(x: &Tensor, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let cols = x.cols();
    if x.rows() <= CHUNK_ROWS {
        return f(x);
    }
    let mut data = Vec::with_capacity(x.numel());
    let mut out_cols = 0;
    for block in x.data().chunks(CHUNK_ROWS * cols) {
        let y = f(&Tensor::new(vec![block.len() / cols, cols], block.to_vec())?)?;
        out_cols = y.cols();
        data.extend_from_slice(y.data());
    }
    Tensor::new(vec![x.rows(), out_cols], data)
}

/// A deterministic map from prior latents to samples.
pub trait Generator {
    fn data_dim(&self) -> usize;

    /// Network evaluations spent per generated batch.
    fn evals_per_sample(&self) -> usize;

    fn generate(&self, x_t: &Tensor) -> Result<Tensor>;
}

/// The multi-step DDIM sampler.
pub struct TeacherSampler<'a, M: ?Sized> {
    pub net: &'a M,
    pub sched: &'a NoiseSchedule,
    pub tau: &'a TimestepSubsequence,
}

impl<M: EpsModel + ?Sized> Generator for TeacherSampler<'_, M> {
    fn data_dim(&self) -> usize {
        self.net.data_dim()
    }

    fn evals_per_sample(&self) -> usize {
        self.tau.len()
    }

    fn generate(&self, x_t: &Tensor) -> Result<Tensor> {
        chunked(x_t, |x| Ok(ddim_sample(self.net, self.sched, self.tau, x, false)?.x0))
    }
}

/// The one-step student.
pub struct StudentSampler<'a, M: ?Sized> {
    pub net: &'a M,
    pub sched: &'a NoiseSchedule,
    pub head: StudentHead,
}

impl<M: EpsModel + ?Sized> Generator for StudentSampler<'_, M> {
    fn data_dim(&self) -> usize {
        self.net.data_dim()
    }

    fn evals_per_sample(&self) -> usize {
        1
    }

    fn generate(&self, x_t: &Tensor) -> Result<Tensor> {
        chunked(x_t, |x| student_predict(self.net, x, self.sched, self.head))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epsnet::{EpsNetParams, NetDims};

    #[test]
    fn chunking_is_bit_identical() {
        let sched = NoiseSchedule::linear(20, 1e-4, 0.6).unwrap();
        let dims = NetDims {
            data_dim: 2,
            hidden: 16,
            depth: 3,
            embed_dim: 8,
        };
        let net = EpsNetParams::init(3, dims).unwrap();
        let n = 2 * CHUNK_ROWS + 37;
        let x = Tensor::new(
            vec![n, 2],
            (0..2 * n).map(|i| ((i * 7919) % 1000) as f64 / 250.0 - 2.0).collect(),
        )
        .unwrap();
        let student = StudentSampler {
            net: &net,
            sched: &sched,
            head: StudentHead::FTheta,
        };
        let whole = student_predict(&net, &x, &sched, StudentHead::FTheta).unwrap();
        assert_eq!(student.generate(&x).unwrap().data(), whole.data());
        let tau = TimestepSubsequence::uniform(20, 5).unwrap();
        let teacher = TeacherSampler {
            net: &net,
            sched: &sched,
            tau: &tau,
        };
        let whole = ddim_sample(&net, &sched, &tau, &x, false).unwrap().x0;
        assert_eq!(teacher.generate(&x).unwrap().data(), whole.data());
    }
}
