use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L2,
    L1,
}

/// How the student turns its noise prediction into a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentHead {
    /// `(x_T - sqrt(1 - a_T) eps) / sqrt(a_T)`, the same inversion the sampler uses.
    FTheta,
    /// `x_T - eps` with no rescaling.
    PlainSubtract,
}

/// Optimizer, EMA and stopping settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub max_iters: u64,
    pub loss_kind: LossKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    pub heldout_fraction: f64,
    /// Held-out evaluations without improvement before stopping.
    pub early_stop_patience: u32,
    /// Steps between held-out evaluations.
    pub eval_interval: u64,
}

impl Default for TrainConfig {
    /// Student defaults.
    fn default() -> Self {
        Self {
            base_lr: 2e-4,
            warmup_steps: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            ema_decay: 0.995,
            batch_size: 256,
            max_iters: 20_000,
            loss_kind: LossKind::L2,
            grad_clip: None,
            heldout_fraction: 0.05,
            early_stop_patience: 10,
            eval_interval: 250,
        }
    }
}

impl TrainConfig {
    /// Defaults for fitting the noise predictor itself.
    pub fn teacher_default() -> Self {
        Self {
            base_lr: 1e-3,
            adam_beta2: 0.999,
            max_iters: 20_000,
            early_stop_patience: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.warmup_steps < 1 {
            return bad("warmup_steps must be >= 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction <= 0.5) {
            return bad(format!(
                "heldout_fraction must lie in (0, 0.5], got {}",
                self.heldout_fraction
            ));
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be >= 1".into());
        }
        Ok(())
    }

    /// Splits `n` records into (train, held-out) counts.
    pub fn split(&self, n: usize) -> Result<(usize, usize)> {
        let held = ((n as f64) * self.heldout_fraction).ceil() as usize;
        let train = n.saturating_sub(held);
        if held == 0 || train < self.batch_size {
            return Err(Error::invalid(format!(
                "{n} records cannot provide a held-out split of {} and a batch of {}",
                self.heldout_fraction, self.batch_size
            )));
        }
        Ok((train, held))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::teacher_default().validate().unwrap();
        let d = TrainConfig::default();
        assert_eq!((d.adam_beta1, d.adam_beta2), (0.9, 0.98));
        assert_eq!(d.ema_decay, 0.995);
    }

    #[test]
    fn invalid_fields_rejected() {
        let mut c = TrainConfig::default();
        c.adam_beta2 = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.warmup_steps = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.heldout_fraction = 0.6;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.grad_clip = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn split_sizes() {
        let c = TrainConfig::default();
        assert_eq!(c.split(65_536).unwrap(), (62_259, 3_277));
        assert!(c.split(100).is_err());
    }
}
