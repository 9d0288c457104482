use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::BenchRow;
use crate::binio::write_file;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistKlEntry {
    pub label: String,
    pub kl: f64,
    pub clamped: usize,
}

/// Everything the evaluation stage measures, with the seeds that reproduce it.
/// Serialized as TOML in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub config_hash: String,
    pub eval_seed: u64,
    pub reference_seed: u64,
    pub data_kind: String,
    pub data_seed: u64,
    pub teacher_sha256: String,
    pub student_sha256: String,
    pub tau_steps: usize,
    pub student_head: String,

    pub gap_samples: usize,
    /// Gap of the untrained student (the copied teacher network).
    pub distill_gap_init_mean: f64,
    pub distill_gap_mean: f64,
    pub distill_gap_max: f64,
    pub distill_gap_rms: f64,
    pub gap_improvement: f64,
    pub data_rms: f64,
    pub gap_rms_over_data_rms: f64,

    pub energy_samples: usize,
    pub energy_distance_teacher: f64,
    pub energy_distance_student: f64,
    pub energy_distance_gaussian: f64,

    pub hop_ratio_student: f64,
    pub hop_ratio_teacher: f64,

    pub nn_samples: usize,
    pub nn_mean_student: f64,
    pub nn_mean_heldout: f64,
    pub nn_ratio: f64,

    pub teacher_evals_per_sample: usize,
    pub student_evals_per_sample: usize,

    pub hist_kl: Vec<HistKlEntry>,
    pub timing: Vec<BenchRow>,
}

impl EvalReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("report serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("report parse: {e}")))
    }

    /// Metrics other than timing must be finite and non-negative.
    pub fn check(&self) -> Result<()> {
        let metrics = [
            ("distill_gap_init_mean", self.distill_gap_init_mean),
            ("distill_gap_mean", self.distill_gap_mean),
            ("distill_gap_max", self.distill_gap_max),
            ("distill_gap_rms", self.distill_gap_rms),
            ("data_rms", self.data_rms),
            ("energy_distance_teacher", self.energy_distance_teacher),
            ("energy_distance_student", self.energy_distance_student),
            ("energy_distance_gaussian", self.energy_distance_gaussian),
            ("hop_ratio_student", self.hop_ratio_student),
            ("hop_ratio_teacher", self.hop_ratio_teacher),
            ("nn_mean_student", self.nn_mean_student),
            ("nn_mean_heldout", self.nn_mean_heldout),
        ];
        for (name, v) in metrics
            .into_iter()
            .chain(self.hist_kl.iter().map(|h| (h.label.as_str(), h.kl)))
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("report metric {name} = {v}")));
            }
        }
        Ok(())
    }
}

pub fn write_timing_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "label,evals_per_sample,n,seconds,seconds_per_1e4").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.label, r.evals_per_sample, r.n, r.seconds, r.seconds_per_1e4
        )
        .unwrap();
    }
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        EvalReport {
            config_hash: "00".into(),
            eval_seed: 3,
            reference_seed: 1,
            data_kind: "gaussian_mixture".into(),
            data_seed: 0,
            teacher_sha256: "ab".into(),
            student_sha256: "cd".into(),
            tau_steps: 50,
            student_head: "f_theta".into(),
            gap_samples: 4096,
            distill_gap_init_mean: 0.5,
            distill_gap_mean: 0.01,
            distill_gap_max: 0.5,
            distill_gap_rms: 0.1,
            gap_improvement: 50.0,
            data_rms: 2.0,
            gap_rms_over_data_rms: 0.05,
            energy_samples: 10_000,
            energy_distance_teacher: 0.002,
            energy_distance_student: 0.003,
            energy_distance_gaussian: 0.4,
            hop_ratio_student: 3.5,
            hop_ratio_teacher: 3.0,
            nn_samples: 2000,
            nn_mean_student: 0.02,
            nn_mean_heldout: 0.02,
            nn_ratio: 1.0,
            teacher_evals_per_sample: 50,
            student_evals_per_sample: 1,
            hist_kl: vec![HistKlEntry {
                label: "student".into(),
                kl: 0.1,
                clamped: 0,
            }],
            timing: vec![BenchRow {
                label: "student".into(),
                evals_per_sample: 1,
                n: 1000,
                seconds: 0.01,
                seconds_per_1e4: 0.1,
            }],
        }
    }

    #[test]
    fn toml_roundtrip_keeps_key_order() {
        let r = sample();
        let text = r.to_toml().unwrap();
        assert_eq!(EvalReport::from_toml(&text).unwrap(), r);
        assert!(text.find("eval_seed").unwrap() < text.find("distill_gap_mean").unwrap());
        assert_eq!(r.to_toml().unwrap(), text);
        r.check().unwrap();
    }

    #[test]
    fn check_rejects_negative_or_nan() {
        let mut r = sample();
        r.hop_ratio_student = f64::NAN;
        assert!(r.check().is_err());
        let mut r = sample();
        r.hist_kl[0].kl = -1.0;
        assert!(r.check().is_err());
    }
}
