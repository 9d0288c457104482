use super::params::EpsNetParams;
use crate::error::{Error, Result};

/// Exponential moving average of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: EpsNetParams,
    decay: f64,
}

impl EmaState {
    pub fn new(params: &EpsNetParams, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::invalid(format!("EMA decay must lie in [0, 1), got {decay}")));
        }
        Ok(Self {
            shadow: params.clone(),
            decay,
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `shadow <- decay * shadow + (1 - decay) * params`
    pub fn update(&mut self, params: &EpsNetParams) -> Result<()> {
        if !self.shadow.same_shape(params) {
            return Err(Error::invalid(format!(
                "EMA shadow dims {:?} differ from parameter dims {:?}",
                self.shadow.dims(),
                params.dims()
            )));
        }
        let d = self.decay;
        let keep = 1.0 - d;
        for (s, p) in self.shadow.tensors_mut().zip(params.tensors()) {
            for (sv, pv) in s.data_mut().iter_mut().zip(p.data()) {
                *sv = d * *sv + keep * pv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epsnet::NetDims;

    fn dims() -> NetDims {
        NetDims {
            data_dim: 2,
            hidden: 4,
            depth: 2,
            embed_dim: 2,
        }
    }

    fn filled(v: f64) -> EpsNetParams {
        let mut p = EpsNetParams::zeros(dims()).unwrap();
        for t in p.tensors_mut() {
            t.data_mut().fill(v);
        }
        p
    }

    #[test]
    fn zero_decay_copies_params() {
        let mut ema = EmaState::new(&filled(0.3), 0.0).unwrap();
        let target = EpsNetParams::init(1, dims()).unwrap();
        ema.update(&target).unwrap();
        assert_eq!(ema.shadow, target);
    }

    #[test]
    fn one_step_from_zero_toward_one() {
        let mut ema = EmaState::new(&filled(0.0), 0.995).unwrap();
        ema.update(&filled(1.0)).unwrap();
        for t in ema.shadow.tensors() {
            assert!(t.data().iter().all(|v| (v - 0.005).abs() < 1e-15));
        }
    }

    #[test]
    fn geometric_contraction_toward_constant_params() {
        let (s0, p, d) = (-2.0, 0.75, 0.9);
        let mut ema = EmaState::new(&filled(s0), d).unwrap();
        let target = filled(p);
        for k in 1..=25 {
            ema.update(&target).unwrap();
            let expected = d.powi(k) * (s0 - p);
            for t in ema.shadow.tensors() {
                for v in t.data() {
                    assert!(((v - p) - expected).abs() < 1e-12, "k={k}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_decay_and_shapes() {
        assert!(EmaState::new(&filled(0.0), 1.0).is_err());
        assert!(EmaState::new(&filled(0.0), -0.1).is_err());
        let mut ema = EmaState::new(&filled(0.0), 0.5).unwrap();
        let mut other = dims();
        other.hidden = 5;
        assert!(ema.update(&EpsNetParams::zeros(other).unwrap()).is_err());
    }
}
