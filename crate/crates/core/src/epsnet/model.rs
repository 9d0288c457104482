use std::sync::atomic::{AtomicUsize, Ordering};

use super::params::EpsNetParams;
use crate::error::Result;
use crate::gradcore::Tensor;

/// Anything that predicts the noise in `x_t` at timestep `t`.
pub trait EpsModel {
    fn data_dim(&self) -> usize;

    /// One network evaluation on a `[batch, data_dim]` input.
    fn predict_eps(&self, x: &Tensor, t: usize) -> Result<Tensor>;
}

impl EpsModel for EpsNetParams {
    fn data_dim(&self) -> usize {
        self.dims().data_dim
    }

    fn predict_eps(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        self.forward(x, t)
    }
}

impl<M: EpsModel + ?Sized> EpsModel for &M {
    fn data_dim(&self) -> usize {
        (**self).data_dim()
    }

    fn predict_eps(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        (**self).predict_eps(x, t)
    }
}

/// Wraps a model and counts its evaluations.
#[derive(Debug)]
pub struct CountingModel<M> {
    inner: M,
    calls: AtomicUsize,
    rows: AtomicUsize,
}

impl<M> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            rows: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Rows evaluated across all calls; `row_evals() / n` is evaluations per sample.
    pub fn row_evals(&self) -> usize {
        self.rows.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
        self.rows.store(0, Ordering::Relaxed);
    }

    pub fn into_inner(self) -> M {
        self.inner
    }
}

impl<M: EpsModel> EpsModel for CountingModel<M> {
    fn data_dim(&self) -> usize {
        self.inner.data_dim()
    }

    fn predict_eps(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.rows.fetch_add(x.rows(), Ordering::Relaxed);
        self.inner.predict_eps(x, t)
    }
}
