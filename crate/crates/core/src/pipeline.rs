//! Stage orchestration behind the command-line interface.
//!
//! Every stage writes its artifacts into the output directory together with
//! the resolved `config.toml` and a `manifest.<stage>.toml` listing the
//! SHA-256 of each input and output. Inputs listed as outputs of an earlier
//! manifest in the same directory are verified before use, and every input
//! is re-hashed after the stage to prove it was not modified.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{read_file, write_file};
use crate::config::RunConfig;
use crate::diffusion::{ddim_sample, train_teacher, TimestepSubsequence};
use crate::distill::{
    generate_pairs, load_pairs, save_pairs, student_predict, train_student, write_log_csv, PairDataset, StudentHead,
};
use crate::epsnet::{load_checkpoint, save_checkpoint, Checkpoint, CountingModel, EpsNetParams};
use crate::error::{Error, Result};
use crate::eval::{
    bench_sampling, distill_gap, energy_distance, hist_kl, hop_ratio, interpolation_grid, mean_nn_distance,
    write_grid_csv, write_timing_csv, BenchRow, EvalReport, Generator, HistKlEntry, StudentSampler, TeacherSampler,
};
use crate::gradcore::Tensor;
use crate::rng::{normals, stream, Domain};
use crate::toydata::{make_dataset, rms, write_points_csv, ToyKind};

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const PAIRS_FILE: &str = "pairs.bin";
pub const REPORT_FILE: &str = "report.toml";
pub const ACCEPTANCE_FILE: &str = "acceptance.toml";
/// Points written to the scatter CSVs.
const SCATTER_ROWS: usize = 2000;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

/// Per-stage record of artifact checksums.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) to SHA-256.
    /// Timing outputs are marked `volatile` instead.
    pub outputs: BTreeMap<String, String>,
    pub counters: BTreeMap<String, u64>,
}

impl Manifest {
    pub fn file_name(command: &str) -> String {
        format!("manifest.{command}.toml")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}

/// Shared state of one command invocation.
pub struct Stage {
    pub cfg: RunConfig,
    pub out: PathBuf,
    /// Worker threads for pair generation; 0 uses the rayon default.
    pub threads: usize,
    manifest: Manifest,
    input_paths: Vec<PathBuf>,
}

impl Stage {
    pub fn new(cfg: RunConfig, out: &Path, threads: usize, command: &str) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let config_hash = cfg.hash()?;
        write_file(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
        Ok(Self {
            cfg,
            out: out.to_path_buf(),
            threads,
            manifest: Manifest {
                command: command.to_string(),
                config_hash,
                ..Manifest::default()
            },
            input_paths: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Hashes an input and checks it against any manifest in its directory
    /// that lists it as an output.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha = sha256_file(path)?;
        if let (Some(dir), Some(name)) = (path.parent(), path.file_name().and_then(|n| n.to_str())) {
            let dir = if dir.as_os_str().is_empty() {
                Path::new(".")
            } else {
                dir
            };
            let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            for entry in entries {
                let p = entry.map_err(|e| Error::io(dir, e))?.path();
                let fname = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if !(fname.starts_with("manifest.") && fname.ends_with(".toml")) {
                    continue;
                }
                let m = Manifest::load(&p)?;
                if m.outputs.get(name).is_some_and(|recorded| *recorded != sha) {
                    return Err(Error::ArtifactChecksum {
                        path: path.to_path_buf(),
                    });
                }
            }
        }
        self.manifest.inputs.insert(self.input_key(path), sha);
        self.input_paths.push(path.to_path_buf());
        Ok(())
    }

    /// Inputs inside the output directory are keyed by their relative path so
    /// manifests do not depend on where the tree lives.
    fn input_key(&self, path: &Path) -> String {
        path.strip_prefix(&self.out).unwrap_or(path).display().to_string()
    }

    pub fn output(&mut self, name: &str) -> Result<()> {
        let sha = sha256_file(&self.path(name))?;
        self.manifest.outputs.insert(name.to_string(), sha);
        Ok(())
    }

    pub fn volatile_output(&mut self, name: &str) {
        self.manifest.outputs.insert(name.to_string(), "volatile".into());
    }

    pub fn counter(&mut self, name: &str, value: u64) {
        self.manifest.counters.insert(name.to_string(), value);
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Re-verifies the inputs and writes the manifest.
    pub fn finish(self) -> Result<Manifest> {
        for p in &self.input_paths {
            if sha256_file(p)? != self.manifest.inputs[&self.input_key(p)] {
                return Err(Error::ArtifactChecksum { path: p.clone() });
            }
        }
        let text = toml::to_string(&self.manifest).map_err(|e| Error::invalid(e.to_string()))?;
        write_file(
            &self.path(&Manifest::file_name(&self.manifest.command)),
            text.as_bytes(),
        )?;
        Ok(self.manifest)
    }
}

fn head_name(head: StudentHead) -> &'static str {
    match head {
        StudentHead::FTheta => "f_theta",
        StudentHead::PlainSubtract => "plain_subtract",
    }
}

fn kind_name(kind: ToyKind) -> &'static str {
    match kind {
        ToyKind::GaussianMixture => "gaussian_mixture",
        ToyKind::SwissRoll => "swiss_roll",
        ToyKind::Checkerboard => "checkerboard",
    }
}

fn head_rows(t: &Tensor, n: usize) -> Result<Tensor> {
    let n = n.min(t.rows());
    Tensor::new(vec![n, t.cols()], t.data()[..n * t.cols()].to_vec())
}

/// Fits the teacher on the configured toy density.
pub fn run_train_teacher(stage: &mut Stage) -> Result<Checkpoint> {
    let cfg = stage.cfg.clone();
    let sched = cfg.schedule()?;
    let data = make_dataset(&cfg.data)?;
    let run = train_teacher(&cfg.teacher, cfg.net, &sched, &data, cfg.run.seed)?;
    save_checkpoint(&stage.path(TEACHER_CKPT), &run.params, &sched)?;
    write_log_csv(&stage.path("teacher_log.csv"), &run.outcome.log)?;
    write_points_csv(&stage.path("data_sample.csv"), &head_rows(&data, SCATTER_ROWS)?)?;
    for name in [TEACHER_CKPT, "teacher_log.csv", "data_sample.csv"] {
        stage.output(name)?;
    }
    stage.counter("steps", run.outcome.steps);
    stage.counter("stopped_early", run.outcome.stopped_early as u64);
    println!(
        "train-teacher: steps={} heldout_init={} heldout_best={} stopped_early={}",
        run.outcome.steps, run.init_heldout, run.outcome.best_heldout, run.outcome.stopped_early
    );
    Ok(Checkpoint {
        params: run.params,
        schedule: sched,
    })
}

fn load_teacher(stage: &mut Stage, path: &Path) -> Result<Checkpoint> {
    stage.input(path)?;
    let ck = load_checkpoint(path)?;
    if ck.schedule != stage.cfg.schedule()? {
        return Err(Error::ScheduleMismatch(format!(
            "{} was trained under a different schedule than the config",
            path.display()
        )));
    }
    Ok(ck)
}

pub fn run_gen_pairs(stage: &mut Stage, teacher_path: &Path) -> Result<PairDataset> {
    let teacher = load_teacher(stage, teacher_path)?;
    let tau = stage.cfg.tau()?;
    let pairs = generate_pairs(
        &teacher.params,
        &teacher.schedule,
        &tau,
        stage.cfg.pairs.count,
        stage.cfg.run.seed,
        stage.threads,
    )?;
    save_pairs(&stage.path(PAIRS_FILE), &pairs)?;
    stage.output(PAIRS_FILE)?;
    stage.counter("pairs", pairs.len() as u64);
    stage.counter("teacher_evals_per_pair", tau.len() as u64);
    println!("gen-pairs: count={} tau_steps={}", pairs.len(), tau.len());
    Ok(pairs)
}

pub fn run_distill(stage: &mut Stage, teacher_path: &Path, pairs_path: &Path) -> Result<Checkpoint> {
    let teacher = load_teacher(stage, teacher_path)?;
    stage.input(pairs_path)?;
    let pairs = load_pairs(pairs_path)?;
    let cfg = stage.cfg.clone();
    let run = train_student(&teacher, &pairs, &cfg.student, cfg.sampler.student_head, cfg.run.seed)?;
    save_checkpoint(&stage.path(STUDENT_CKPT), &run.params, &teacher.schedule)?;
    write_log_csv(&stage.path("student_log.csv"), &run.outcome.log)?;
    stage.output(STUDENT_CKPT)?;
    stage.output("student_log.csv")?;
    stage.counter("steps", run.outcome.steps);
    stage.counter("stopped_early", run.outcome.stopped_early as u64);
    println!(
        "distill: steps={} heldout_init={} heldout_best={} stopped_early={}",
        run.outcome.steps, run.init_heldout, run.outcome.best_heldout, run.outcome.stopped_early
    );
    Ok(Checkpoint {
        params: run.params,
        schedule: teacher.schedule,
    })
}

/// Prior latents for sampling commands; row `i` from its own stream.
pub fn eval_latents(seed: u64, n: usize, dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        data.extend(normals(&mut stream(seed, Domain::Eval, i as u64), dim));
    }
    Tensor::new(vec![n, dim], data)
}

/// Draws `n` samples with a `steps`-step sampler. One step uses the
/// configured student head; more steps run the DDIM recursion.
pub fn run_sample(stage: &mut Stage, ckpt_path: &Path, steps: usize, n: usize) -> Result<Tensor> {
    let ck = load_teacher(stage, ckpt_path)?;
    if n == 0 {
        return Err(Error::Config("sample count must be >= 1".into()));
    }
    let net = CountingModel::new(&ck.params);
    let lat = eval_latents(stage.cfg.eval.seed, n, ck.params.dims().data_dim)?;
    let out = if steps == 1 {
        student_predict(&net, &lat, &ck.schedule, stage.cfg.sampler.student_head)?
    } else {
        let tau = TimestepSubsequence::uniform(ck.schedule.steps(), steps)
            .map_err(|e| Error::Config(format!("--steps: {e}")))?;
        ddim_sample(&net, &ck.schedule, &tau, &lat, false)?.x0
    };
    let name = format!("samples_{steps}.csv");
    write_points_csv(&stage.path(&name), &out)?;
    stage.output(&name)?;
    stage.counter("samples", n as u64);
    let per_sample = net.row_evals() / n;
    stage.counter("evals_per_sample", per_sample as u64);
    println!("sample: n={n} steps={steps} evals_per_sample={per_sample}");
    Ok(out)
}

/// One acceptance threshold evaluated on a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceLine {
    pub id: String,
    pub what: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// The distribution-level acceptance thresholds.
pub fn acceptance_lines(r: &EvalReport) -> Vec<AcceptanceLine> {
    let line = |id: &str, what: &str, value: f64, threshold: f64, pass: bool| AcceptanceLine {
        id: id.into(),
        what: what.into(),
        value,
        threshold,
        pass,
    };
    let mut lines = vec![
        line(
            "7a",
            "gap improvement over init (>=)",
            r.gap_improvement,
            10.0,
            r.gap_improvement >= 10.0,
        ),
        line(
            "7b.student",
            "student / teacher energy distance (<=)",
            r.energy_distance_student / r.energy_distance_teacher,
            2.0,
            r.energy_distance_student <= 2.0 * r.energy_distance_teacher,
        ),
        line(
            "7b.baseline",
            "gaussian / max(teacher, student) energy distance (>=)",
            r.energy_distance_gaussian / r.energy_distance_teacher.max(r.energy_distance_student),
            5.0,
            r.energy_distance_gaussian >= 5.0 * r.energy_distance_teacher.max(r.energy_distance_student),
        ),
        line(
            "7c",
            "gap rms / data rms (<=)",
            r.gap_rms_over_data_rms,
            0.05,
            r.gap_rms_over_data_rms <= 0.05,
        ),
        line(
            "9",
            "student hop ratio (<)",
            r.hop_ratio_student,
            10.0,
            r.hop_ratio_student < 10.0,
        ),
        line("10", "nn distance ratio (>=)", r.nn_ratio, 0.5, r.nn_ratio >= 0.5),
    ];
    lines.extend(timing_line(&r.timing));
    lines
}

/// The step-count economics threshold, if both timings are present.
pub fn timing_line(rows: &[BenchRow]) -> Option<AcceptanceLine> {
    let t = rows.iter().find(|b| b.label == "teacher_50")?;
    let s = rows.iter().find(|b| b.label == "student")?;
    let ratio = t.seconds / s.seconds;
    Some(AcceptanceLine {
        id: "8".into(),
        what: "time(teacher 50 steps) / time(student) in [25, 75]".into(),
        value: ratio,
        threshold: 25.0,
        pass: (25.0..=75.0).contains(&ratio),
    })
}

fn print_line(l: &AcceptanceLine) {
    println!(
        "acceptance {} {}: value={} threshold={} {}",
        l.id,
        l.what,
        l.value,
        l.threshold,
        if l.pass { "PASS" } else { "FAIL" }
    );
}

fn timing_rows(stage: &Stage, teacher: &Checkpoint, student: &Checkpoint) -> Result<Vec<BenchRow>> {
    let cfg = &stage.cfg;
    let taus = cfg
        .eval
        .bench_steps
        .iter()
        .map(|&k| TimestepSubsequence::uniform(teacher.schedule.steps(), k))
        .collect::<Result<Vec<_>>>()?;
    let teachers: Vec<TeacherSampler<'_, EpsNetParams>> = taus
        .iter()
        .map(|tau| TeacherSampler {
            net: &teacher.params,
            sched: &teacher.schedule,
            tau,
        })
        .collect();
    let student_gen = StudentSampler {
        net: &student.params,
        sched: &student.schedule,
        head: cfg.sampler.student_head,
    };
    let labels: Vec<String> = cfg.eval.bench_steps.iter().map(|k| format!("teacher_{k}")).collect();
    let mut gens: Vec<(&str, &dyn Generator)> = vec![("student", &student_gen)];
    for (label, g) in labels.iter().zip(&teachers) {
        gens.push((label, g));
    }
    bench_sampling(&gens, cfg.eval.bench_n, cfg.eval.bench_repetitions, cfg.eval.seed)
}

pub fn run_bench(stage: &mut Stage, teacher_path: &Path, student_path: &Path) -> Result<Vec<BenchRow>> {
    let teacher = load_teacher(stage, teacher_path)?;
    let student = load_teacher(stage, student_path)?;
    let rows = timing_rows(stage, &teacher, &student)?;
    write_timing_csv(&stage.path("timing.csv"), &rows)?;
    stage.volatile_output("timing.csv");
    for r in &rows {
        println!(
            "bench: {} evals_per_sample={} seconds_per_1e4={:.4}",
            r.label, r.evals_per_sample, r.seconds_per_1e4
        );
    }
    if let Some(l) = timing_line(&rows) {
        print_line(&l);
    }
    Ok(rows)
}

/// Interpolation between two seeded latents through teacher and student.
pub fn run_interpolate(stage: &mut Stage, teacher_path: &Path, student_path: &Path) -> Result<(f64, f64)> {
    let teacher = load_teacher(stage, teacher_path)?;
    let student = load_teacher(stage, student_path)?;
    let (hs, ht) = interpolate(stage, &teacher, &student)?;
    println!("interpolate: hop_ratio_student={hs} hop_ratio_teacher={ht}");
    Ok((hs, ht))
}

fn interpolate(stage: &mut Stage, teacher: &Checkpoint, student: &Checkpoint) -> Result<(f64, f64)> {
    let cfg = stage.cfg.clone();
    let d = teacher.params.dims().data_dim;
    let a = normals(&mut stream(cfg.eval.seed, Domain::Interp, 0), d);
    let b = normals(&mut stream(cfg.eval.seed, Domain::Interp, 1), d);
    let tau = cfg.tau()?;
    let t_gen = TeacherSampler {
        net: &teacher.params,
        sched: &teacher.schedule,
        tau: &tau,
    };
    let s_gen = StudentSampler {
        net: &student.params,
        sched: &student.schedule,
        head: cfg.sampler.student_head,
    };
    let mut ratios = Vec::new();
    for (name, g) in [
        ("interp_student.csv", &s_gen as &dyn Generator),
        ("interp_teacher.csv", &t_gen),
    ] {
        let (lat, pts) = interpolation_grid(g, &a, &b, cfg.eval.interp_steps)?;
        write_grid_csv(&stage.path(name), &lat, &pts)?;
        stage.output(name)?;
        ratios.push(hop_ratio(&pts)?);
    }
    Ok((ratios[0], ratios[1]))
}

/// Computes the full report. With `bench` the timing table is included.
pub fn run_eval(stage: &mut Stage, teacher_path: &Path, student_path: &Path, bench: bool) -> Result<EvalReport> {
    let teacher = load_teacher(stage, teacher_path)?;
    let student = load_teacher(stage, student_path)?;
    student.check_compatible(&teacher)?;
    let cfg = stage.cfg.clone();
    let e = &cfg.eval;
    let tau = cfg.tau()?;
    let head = cfg.sampler.student_head;
    let d = teacher.params.dims().data_dim;

    let data = make_dataset(&cfg.data)?;
    let (n_train, _) = cfg.teacher.split(data.rows())?;
    let substrate = head_rows(&data, n_train)?;
    let data_rms = rms(&data);

    let gap = distill_gap(&student, &teacher, &tau, head, e.gap_samples, e.seed)?;
    let init = Checkpoint {
        params: crate::distill::init_student_from_teacher(&teacher.params),
        schedule: teacher.schedule.clone(),
    };
    let gap_init = distill_gap(&init, &teacher, &tau, head, e.gap_samples, e.seed)?;

    let reference = make_dataset(&cfg.data.reseeded(e.reference_seed).with_n(e.energy_samples))?;
    let lat = eval_latents(e.seed, e.energy_samples, d)?;
    let t_net = CountingModel::new(&teacher.params);
    let s_net = CountingModel::new(&student.params);
    let t_samples = TeacherSampler {
        net: &t_net,
        sched: &teacher.schedule,
        tau: &tau,
    }
    .generate(&lat)?;
    let s_samples = StudentSampler {
        net: &s_net,
        sched: &student.schedule,
        head,
    }
    .generate(&lat)?;
    let n = e.energy_samples;
    let (t_rows, s_rows) = (t_net.row_evals(), s_net.row_evals());
    if t_rows != tau.len() * n || s_rows != n {
        return Err(Error::Acceptance(format!(
            "evaluations per sample teacher={} student={}, expected {} and 1",
            t_rows as f64 / n as f64,
            s_rows as f64 / n as f64,
            tau.len()
        )));
    }
    let (t_evals, s_evals) = (t_rows / n, s_rows / n);

    let ed_t = energy_distance(&t_samples, &reference)?;
    let ed_s = energy_distance(&s_samples, &reference)?;
    let ed_g = energy_distance(&lat, &reference)?;

    let (lo, hi) = (-e.hist_range, e.hist_range);
    let mut kls = Vec::new();
    for (label, s) in [("teacher", &t_samples), ("student", &s_samples), ("gaussian", &lat)] {
        let h = hist_kl(&reference, s, e.hist_bins, lo, hi)?;
        kls.push(HistKlEntry {
            label: label.into(),
            kl: h.kl,
            clamped: h.clamped_b,
        });
    }

    let (hop_s, hop_t) = interpolate(stage, &teacher, &student)?;

    let nn_student = mean_nn_distance(&head_rows(&s_samples, e.nn_samples)?, &substrate)?;
    let nn_heldout = mean_nn_distance(&head_rows(&reference, e.nn_samples)?, &substrate)?;

    for (name, t) in [
        ("samples_teacher.csv", &t_samples),
        ("samples_student.csv", &s_samples),
        ("reference.csv", &reference),
    ] {
        write_points_csv(&stage.path(name), &head_rows(t, SCATTER_ROWS)?)?;
        stage.output(name)?;
    }

    let timing = if bench {
        let rows = timing_rows(stage, &teacher, &student)?;
        write_timing_csv(&stage.path("timing.csv"), &rows)?;
        stage.volatile_output("timing.csv");
        rows
    } else {
        Vec::new()
    };

    let report = EvalReport {
        config_hash: stage.manifest().config_hash.clone(),
        eval_seed: e.seed,
        reference_seed: e.reference_seed,
        data_kind: kind_name(cfg.data.kind).into(),
        data_seed: cfg.data.seed,
        teacher_sha256: sha256_file(teacher_path)?,
        student_sha256: sha256_file(student_path)?,
        tau_steps: tau.len(),
        student_head: head_name(head).into(),
        gap_samples: e.gap_samples,
        distill_gap_init_mean: gap_init.mean,
        distill_gap_mean: gap.mean,
        distill_gap_max: gap.max,
        distill_gap_rms: gap.rms,
        gap_improvement: gap_init.mean / gap.mean,
        data_rms,
        gap_rms_over_data_rms: gap.rms / data_rms,
        energy_samples: e.energy_samples,
        energy_distance_teacher: ed_t,
        energy_distance_student: ed_s,
        energy_distance_gaussian: ed_g,
        hop_ratio_student: hop_s,
        hop_ratio_teacher: hop_t,
        nn_samples: e.nn_samples.min(s_samples.rows()),
        nn_mean_student: nn_student,
        nn_mean_heldout: nn_heldout,
        nn_ratio: nn_student / nn_heldout,
        teacher_evals_per_sample: t_evals,
        student_evals_per_sample: s_evals,
        hist_kl: kls,
        timing,
    };
    report.check().map_err(|err| Error::Acceptance(err.to_string()))?;
    write_file(&stage.path(REPORT_FILE), report.to_toml()?.as_bytes())?;
    if bench {
        stage.volatile_output(REPORT_FILE);
    } else {
        stage.output(REPORT_FILE)?;
    }

    #[derive(Serialize)]
    struct Acceptance {
        lines: Vec<AcceptanceLine>,
    }
    let lines = acceptance_lines(&report);
    lines.iter().for_each(print_line);
    let text = toml::to_string(&Acceptance { lines }).map_err(|e| Error::invalid(e.to_string()))?;
    write_file(&stage.path(ACCEPTANCE_FILE), text.as_bytes())?;
    if bench {
        stage.volatile_output(ACCEPTANCE_FILE);
    } else {
        stage.output(ACCEPTANCE_FILE)?;
    }
    stage.counter("teacher_evals_per_sample", t_evals as u64);
    stage.counter("student_evals_per_sample", s_evals as u64);
    println!(
        "eval: gap_mean={} gap_init_mean={} ed_teacher={} ed_student={} ed_gaussian={}",
        report.distill_gap_mean, report.distill_gap_init_mean, ed_t, ed_s, ed_g
    );
    Ok(report)
}

/// Fails with [`Error::Acceptance`] naming every threshold that was missed.
pub fn enforce(lines: &[AcceptanceLine]) -> Result<()> {
    let failed: Vec<String> = lines
        .iter()
        .filter(|l| !l.pass)
        .map(|l| format!("{}={}", l.id, l.value))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Acceptance(format!("thresholds missed: {}", failed.join(" "))))
    }
}
