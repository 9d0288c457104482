//! Run configuration: a sectioned TOML document.
//!
//! Loading starts from the built-in defaults, overlays the file, then the
//! `section.key=value` overrides, and finally deserializes strictly so
//! unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::diffusion::{NoiseSchedule, TimestepSubsequence};
use crate::distill::{StudentHead, TrainConfig};
use crate::epsnet::NetDims;
use crate::error::{Error, Result};
use crate::toydata::ToySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Seeds network init, pair latents, minibatch order and noise draws.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    /// Length of the uniform teacher subsequence.
    pub tau_steps: usize,
    pub student_head: StudentHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsSection {
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub seed: u64,
    /// Seed of the fresh ground-truth draw used as the reference sample.
    pub reference_seed: u64,
    pub gap_samples: usize,
    pub energy_samples: usize,
    pub hist_bins: usize,
    /// Histograms cover `[-hist_range, hist_range)^2`.
    pub hist_range: f64,
    pub interp_steps: usize,
    pub nn_samples: usize,
    pub bench_n: usize,
    pub bench_repetitions: usize,
    /// Teacher subsequence lengths to time next to the student.
    pub bench_steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub schedule: ScheduleSection,
    pub net: NetDims,
    pub data: ToySpec,
    pub teacher: TrainConfig,
    pub sampler: SamplerSection,
    pub pairs: PairsSection,
    pub student: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection { seed: 0 },
            schedule: ScheduleSection {
                steps: 100,
                beta_min: 1e-4,
                beta_max: 0.12,
            },
            net: NetDims::default(),
            data: ToySpec::default(),
            teacher: TrainConfig::teacher_default(),
            sampler: SamplerSection {
                tau_steps: 50,
                student_head: StudentHead::FTheta,
            },
            pairs: PairsSection { count: 65_536 },
            student: TrainConfig::default(),
            eval: EvalSection {
                seed: 1,
                reference_seed: 1_000_003,
                gap_samples: 4096,
                energy_samples: 10_000,
                hist_bins: 32,
                hist_range: 3.0,
                interp_steps: 64,
                nn_samples: 2000,
                bench_n: 2000,
                bench_repetitions: 5,
                bench_steps: vec![1, 10, 50],
            },
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Recursively overlays `top` onto `base`. Keys absent from `base` are kept
/// so strict deserialization can reject them.
fn overlay(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Defaults, overlaid with `text` (if any) and then `overrides`.
    pub fn resolve(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut table = Table::try_from(RunConfig::default()).map_err(|e| cfg_err(e.to_string()))?;
        if let Some(text) = text {
            let file: Table = toml::from_str(text).map_err(|e| cfg_err(format!("parse: {e}")))?;
            overlay(&mut table, file);
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("override {o:?} is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            if path.len() != 2 || path.iter().any(|p| p.is_empty()) {
                return Err(cfg_err(format!("override key {key:?} must be section.key")));
            }
            let section = table
                .get_mut(path[0])
                .and_then(Value::as_table_mut)
                .ok_or_else(|| cfg_err(format!("unknown section {:?}", path[0])))?;
            section.insert(path[1].to_string(), parse_value(raw.trim()));
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    /// Hex SHA-256 of the resolved document.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        NoiseSchedule::linear(s.steps, s.beta_min, s.beta_max).map_err(|e| cfg_err(format!("schedule: {e}")))
    }

    pub fn tau(&self) -> Result<TimestepSubsequence> {
        TimestepSubsequence::uniform(self.schedule.steps, self.sampler.tau_steps)
            .map_err(|e| cfg_err(format!("sampler: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.tau()?;
        self.net.validate().map_err(|e| cfg_err(format!("net: {e}")))?;
        self.data.validate().map_err(|e| cfg_err(format!("data: {e}")))?;
        if self.net.data_dim != 2 {
            return Err(cfg_err("net.data_dim must be 2 for the toy densities"));
        }
        for (name, t) in [("teacher", &self.teacher), ("student", &self.student)] {
            t.validate().map_err(|e| cfg_err(format!("{name}: {e}")))?;
        }
        self.teacher
            .split(self.data.n)
            .map_err(|e| cfg_err(format!("teacher: {e}")))?;
        if self.pairs.count == 0 {
            return Err(cfg_err("pairs.count must be >= 1"));
        }
        self.student
            .split(self.pairs.count)
            .map_err(|e| cfg_err(format!("student: {e}")))?;
        let e = &self.eval;
        if e.gap_samples == 0 || e.nn_samples == 0 {
            return Err(cfg_err("eval sample counts must be >= 1"));
        }
        if !(2..=10_000).contains(&e.energy_samples) {
            return Err(cfg_err("eval.energy_samples must lie in [2, 10000]"));
        }
        if e.hist_bins < 2 || !(e.hist_range > 0.0) {
            return Err(cfg_err("eval.hist_bins must be >= 2 and hist_range > 0"));
        }
        if e.interp_steps < 2 {
            return Err(cfg_err("eval.interp_steps must be >= 2"));
        }
        if e.bench_n < 1000 || e.bench_repetitions == 0 {
            return Err(cfg_err("eval.bench_n must be >= 1000 and bench_repetitions >= 1"));
        }
        for &k in &e.bench_steps {
            TimestepSubsequence::uniform(self.schedule.steps, k)
                .map_err(|err| cfg_err(format!("eval.bench_steps: {err}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::LossKind;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::resolve(Some(&text), &[]).unwrap(), c);
        assert_eq!(RunConfig::resolve(None, &[]).unwrap(), c);
        assert_eq!(c.hash().unwrap().len(), 64);
    }

    #[test]
    fn partial_sections_keep_section_defaults() {
        let c = RunConfig::resolve(Some("[teacher]\nmax_iters = 7\n"), &[]).unwrap();
        assert_eq!(c.teacher.max_iters, 7);
        assert_eq!(c.teacher.base_lr, TrainConfig::teacher_default().base_lr);
        assert_eq!(c.student, TrainConfig::default());
    }

    #[test]
    fn overrides_win_over_file() {
        let c = RunConfig::resolve(
            Some("[student]\nbase_lr = 1e-3\n"),
            &[
                "student.base_lr=5e-4".into(),
                "student.loss_kind=l1".into(),
                "sampler.student_head = plain_subtract".into(),
                "eval.bench_steps=[1, 50]".into(),
                "student.grad_clip=1.0".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.student.base_lr, 5e-4);
        assert_eq!(c.student.loss_kind, LossKind::L1);
        assert_eq!(c.sampler.student_head, StudentHead::PlainSubtract);
        assert_eq!(c.eval.bench_steps, vec![1, 50]);
        assert_eq!(c.student.grad_clip, Some(1.0));
        let again = RunConfig::resolve(Some(&c.to_toml().unwrap()), &[]).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        for text in [
            "[student]\nbase_lrr = 1.0\n",
            "[nonsense]\nx = 1\n",
            "top = 3\n",
            "[schedule]\nbeta_max = 0.05\n",
            "[sampler]\ntau_steps = 101\n",
            "[student]\nadam_beta2 = 1.0\n",
            "[data]\nkind = \"spiral\"\n",
        ] {
            let err = RunConfig::resolve(Some(text), &[]).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
        for o in ["student.nope=1", "nosection.x=1", "seed=3", "student.base_lr"] {
            assert!(RunConfig::resolve(None, &[o.into()]).is_err(), "{o}");
        }
    }
}
