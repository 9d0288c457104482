use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest admissible `sqrt(alpha_T)`; above this the terminal marginal is
/// too far from the standard-normal prior.
pub const MAX_TERMINAL_SQRT_ALPHA: f64 = 0.05;

/// Linear beta schedule and the cumulative products `alpha_t = prod_{s<=t} (1 - beta_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
}

fn linear_betas(steps: usize, beta_min: f64, beta_max: f64) -> Vec<f64> {
    let span = beta_max - beta_min;
    (0..steps)
        .map(|i| beta_min + span * (i as f64) / ((steps - 1) as f64))
        .collect()
}

fn cumulative(betas: &[f64]) -> Vec<f64> {
    let mut acc = 1.0;
    betas
        .iter()
        .map(|b| {
            acc *= 1.0 - b;
            acc
        })
        .collect()
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let betas = linear_betas(steps, beta_min, beta_max);
        let alphas = cumulative(&betas);
        let sched = Self {
            beta_min,
            beta_max,
            betas,
            alphas,
        };
        let terminal = sched.sqrt_alpha(steps);
        if terminal >= MAX_TERMINAL_SQRT_ALPHA {
            return Err(Error::invalid(format!(
                "sqrt(alpha_T) = {terminal:.4} >= {MAX_TERMINAL_SQRT_ALPHA}; raise T or beta_max"
            )));
        }
        if sched.alphas.windows(2).any(|w| w[1] >= w[0]) || sched.alphas[steps - 1] <= 0.0 {
            return Err(Error::invalid("alpha sequence is not strictly decreasing in (0, 1]"));
        }
        Ok(sched)
    }

    /// Rebuilds a schedule from stored parts, insisting that the stored
    /// alphas are exactly what the stored beta range generates.
    pub fn from_stored(steps: usize, beta_min: f64, beta_max: f64, alphas: &[f64]) -> Result<Self> {
        let sched = Self::linear(steps, beta_min, beta_max)?;
        let same = sched.alphas.len() == alphas.len()
            && sched.alphas.iter().zip(alphas).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::ScheduleMismatch(
                "stored alpha array does not match its beta range".into(),
            ));
        }
        Ok(sched)
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_1 .. alpha_T`.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `alpha_t` with the convention `alpha_0 = 1`. Panics if `t > T`.
    pub fn alpha(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas[t - 1]
        }
    }

    pub fn sqrt_alpha(&self, t: usize) -> f64 {
        self.alpha(t).sqrt()
    }

    pub fn sqrt_one_minus_alpha(&self, t: usize) -> f64 {
        (1.0 - self.alpha(t)).sqrt()
    }

    pub(crate) fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside [{min}, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Stable 64-bit digest of the schedule, used to bind artifacts to it.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.steps() as u64).to_le_bytes());
        h.update(self.beta_min.to_le_bytes());
        h.update(self.beta_max.to_le_bytes());
        for a in &self.alphas {
            h.update(a.to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}

/// Strictly increasing timestep indices in `[1, T]` ending at `T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepSubsequence {
    tau: Vec<usize>,
}

impl TimestepSubsequence {
    pub fn new(tau: Vec<usize>) -> Result<Self> {
        if tau.is_empty() || tau[0] == 0 || tau.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "timestep subsequence must be strictly increasing in [1, T]: {tau:?}"
            )));
        }
        Ok(Self { tau })
    }

    /// `n` indices with uniform stride: `tau_i = floor(i * T / n)`, `i = 1..=n`.
    pub fn uniform(total: usize, n: usize) -> Result<Self> {
        if n == 0 || n > total {
            return Err(Error::invalid(format!(
                "cannot pick {n} sampling steps out of T = {total}"
            )));
        }
        Self::new((1..=n).map(|i| i * total / n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn last(&self) -> usize {
        *self.tau.last().unwrap()
    }

    /// Errors unless this subsequence ends exactly at the schedule's `T`.
    pub fn check_against(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.last() != sched.steps() {
            return Err(Error::ScheduleMismatch(format!(
                "subsequence ends at {} but the schedule has T = {}",
                self.last(),
                sched.steps()
            )));
        }
        Ok(())
    }
}
