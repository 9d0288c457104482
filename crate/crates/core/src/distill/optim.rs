use super::train_config::TrainConfig;
use crate::epsnet::EpsNetParams;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Linear warmup to `base_lr`, constant afterwards.
pub fn lr_at(step: u64, base_lr: f64, warmup_steps: u64) -> f64 {
    let frac = ((step + 1) as f64 / warmup_steps.max(1) as f64).min(1.0);
    base_lr * frac
}

/// Adam first and second moments plus the number of updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &EpsNetParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update with the warmup learning rate for the
/// current step, optional global-norm clipping, then `step += 1`.
/// Returns the learning rate that was applied.
pub fn adam_step(state: &mut AdamState, params: &mut EpsNetParams, grads: &[Tensor], cfg: &TrainConfig) -> Result<f64> {
    let n_params = state.m.len();
    if grads.len() != n_params || params.tensors().count() != n_params {
        return Err(Error::invalid(format!(
            "adam_step: {} gradients for {} parameter tensors",
            grads.len(),
            n_params
        )));
    }
    for ((g, p), m) in grads.iter().zip(params.tensors()).zip(&state.m) {
        if g.shape() != p.shape() || m.len() != p.numel() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: g.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalAbort {
            step: state.step,
            what: "non-finite gradient".into(),
        });
    }

    let clip = match cfg.grad_clip {
        Some(bound) => {
            let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
            if norm > bound {
                bound / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    let lr = lr_at(state.step, cfg.base_lr, cfg.warmup_steps);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let t = (state.step + 1) as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let gv = gv * clip;
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    state.step += 1;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epsnet::NetDims;

    fn dims() -> NetDims {
        NetDims {
            data_dim: 2,
            hidden: 3,
            depth: 2,
            embed_dim: 2,
        }
    }

    fn grads_like(p: &EpsNetParams, f: impl Fn(usize) -> f64) -> Vec<Tensor> {
        let mut k = 0;
        p.tensors()
            .map(|t| {
                let data = (0..t.numel())
                    .map(|_| {
                        k += 1;
                        f(k)
                    })
                    .collect();
                Tensor::new(t.shape().to_vec(), data).unwrap()
            })
            .collect()
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(lr_at(0, 2e-4, 5000), 2e-4 / 5000.0);
        assert_eq!(lr_at(4999, 2e-4, 5000), 2e-4);
        assert_eq!(lr_at(70_000, 2e-4, 5000), 2e-4);
        let mut prev = 0.0;
        for s in 0..6000 {
            let lr = lr_at(s, 2e-4, 5000);
            assert!(lr >= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_gradients_leave_params_and_decay_moments() {
        let mut p = EpsNetParams::init(1, dims()).unwrap();
        let cfg = TrainConfig::default();
        let mut st = AdamState::new(&p);
        for m in st.m.iter_mut().chain(st.v.iter_mut()) {
            m.fill(1.0);
        }
        let before = p.clone();
        let zeros = grads_like(&p, |_| 0.0);
        // with nonzero moments the step is not zero, so compare against a fresh state
        let mut fresh = AdamState::new(&p);
        adam_step(&mut fresh, &mut p, &zeros, &cfg).unwrap();
        assert_eq!(p, before);
        adam_step(&mut st, &mut p.clone(), &zeros, &cfg).unwrap();
        assert!(st.m.iter().flatten().all(|&v| v == 0.9));
        assert!(st.v.iter().flatten().all(|&v| v == 0.98));
        assert_eq!(fresh.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = EpsNetParams::init(2, dims()).unwrap();
        let before = p.clone();
        let cfg = TrainConfig {
            warmup_steps: 1,
            ..TrainConfig::default()
        };
        let g = grads_like(&p, |k| if k % 3 == 0 { -0.7 * k as f64 } else { 0.01 * k as f64 });
        let mut st = AdamState::new(&p);
        let lr = adam_step(&mut st, &mut p, &g, &cfg).unwrap();
        assert_eq!(lr, cfg.base_lr);
        for ((a, b), g) in p.tensors().zip(before.tensors()).zip(&g) {
            for ((x, y), gv) in a.data().iter().zip(b.data()).zip(g.data()) {
                let step = x - y;
                assert!((step + lr * gv.signum()).abs() < 1e-5 * lr, "{step}");
            }
        }
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let mut p = EpsNetParams::init(2, dims()).unwrap();
        let cfg = TrainConfig {
            grad_clip: Some(1e-3),
            ..TrainConfig::default()
        };
        let g = grads_like(&p, |k| 100.0 * k as f64);
        let mut st = AdamState::new(&p);
        adam_step(&mut st, &mut p, &g, &cfg).unwrap();
        let norm: f64 = st.m.iter().flatten().map(|m| (m / 0.1).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_with_step() {
        let mut p = EpsNetParams::init(2, dims()).unwrap();
        let mut g = grads_like(&p, |_| 0.1);
        g[1].data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(&p);
        st.step = 41;
        let err = adam_step(&mut st, &mut p, &g, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NumericalAbort { step: 41, .. }));
    }
}
