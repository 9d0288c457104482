use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ddistill::config::RunConfig;
use ddistill::pipeline::{self, Stage, PAIRS_FILE, STUDENT_CKPT, TEACHER_CKPT};
use ddistill::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ddistill",
    version,
    about = "One-step distillation of a DDIM sampler on 2-D toy data"
)]
struct Cli {
    /// TOML run configuration; built-in defaults fill missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// `section.key=value` override; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set run.seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the noise-prediction teacher on the toy density.
    TrainTeacher,
    /// Roll out the teacher sampler into (x_T, x_0) pairs.
    GenPairs {
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Train the one-step student on the pairs.
    Distill {
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Draw samples; `--steps 1` uses the student head.
    Sample {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Compute the evaluation report and acceptance lines.
    Eval {
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        student: Option<PathBuf>,
        /// Include wall-clock timings in the report.
        #[arg(long)]
        bench: bool,
        /// Exit nonzero if any acceptance threshold is missed.
        #[arg(long)]
        enforce: bool,
    },
    /// Decode a slerp path through teacher and student.
    Interpolate {
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        student: Option<PathBuf>,
    },
    /// Time the student against teacher samplers of several lengths.
    Bench {
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        enforce: bool,
    },
    /// Run every stage in order.
    Pipeline {
        /// Also run the timing benchmark.
        #[arg(long)]
        bench: bool,
        #[arg(long)]
        enforce: bool,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::ArtifactChecksum { .. }
        | Error::Checksum { .. }
        | Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::TrailingBytes { .. }
        | Error::Malformed { .. }
        | Error::ScheduleMismatch(_) => 3,
        Error::NumericalAbort { .. } | Error::NonFinite { .. } => 4,
        Error::Acceptance(_) => 5,
        _ => 1,
    }
}

fn threads() -> Result<usize> {
    match std::env::var("DDISTILL_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("DDISTILL_THREADS={v:?} is not a positive integer"))),
        Err(_) => Ok(0),
    }
}

fn or_default(p: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| out.join(name))
}

fn run(cli: Cli) -> Result<()> {
    let threads = threads()?;
    if threads > 0 {
        // Fails only if the pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let out = cli.out.as_path();
    let stage = |name: &str| Stage::new(cfg.clone(), out, threads, name);
    let teacher_default = out.join(TEACHER_CKPT);
    let student_default = out.join(STUDENT_CKPT);

    match &cli.command {
        Command::TrainTeacher => {
            let mut s = stage("train-teacher")?;
            pipeline::run_train_teacher(&mut s)?;
            s.finish()?;
        }
        Command::GenPairs { teacher } => {
            let mut s = stage("gen-pairs")?;
            pipeline::run_gen_pairs(&mut s, &or_default(teacher, out, TEACHER_CKPT))?;
            s.finish()?;
        }
        Command::Distill { teacher, pairs } => {
            let mut s = stage("distill")?;
            pipeline::run_distill(
                &mut s,
                &or_default(teacher, out, TEACHER_CKPT),
                &or_default(pairs, out, PAIRS_FILE),
            )?;
            s.finish()?;
        }
        Command::Sample { ckpt, steps, n } => {
            let mut s = stage("sample")?;
            pipeline::run_sample(&mut s, &or_default(ckpt, out, STUDENT_CKPT), *steps, *n)?;
            s.finish()?;
        }
        Command::Eval {
            teacher,
            student,
            bench,
            enforce,
        } => {
            let mut s = stage("eval")?;
            let report = pipeline::run_eval(
                &mut s,
                &or_default(teacher, out, TEACHER_CKPT),
                &or_default(student, out, STUDENT_CKPT),
                *bench,
            )?;
            s.finish()?;
            if *enforce {
                pipeline::enforce(&pipeline::acceptance_lines(&report))?;
            }
        }
        Command::Interpolate { teacher, student } => {
            let mut s = stage("interpolate")?;
            pipeline::run_interpolate(
                &mut s,
                &or_default(teacher, out, TEACHER_CKPT),
                &or_default(student, out, STUDENT_CKPT),
            )?;
            s.finish()?;
        }
        Command::Bench {
            teacher,
            student,
            enforce,
        } => {
            let mut s = stage("bench")?;
            let rows = pipeline::run_bench(
                &mut s,
                &or_default(teacher, out, TEACHER_CKPT),
                &or_default(student, out, STUDENT_CKPT),
            )?;
            s.finish()?;
            if *enforce {
                pipeline::enforce(&pipeline::timing_line(&rows).into_iter().collect::<Vec<_>>())?;
            }
        }
        Command::Pipeline { bench, enforce } => {
            let mut s = stage("train-teacher")?;
            pipeline::run_train_teacher(&mut s)?;
            s.finish()?;
            let mut s = stage("gen-pairs")?;
            pipeline::run_gen_pairs(&mut s, &teacher_default)?;
            s.finish()?;
            let mut s = stage("distill")?;
            pipeline::run_distill(&mut s, &teacher_default, &out.join(PAIRS_FILE))?;
            s.finish()?;
            let mut s = stage("eval")?;
            let report = pipeline::run_eval(&mut s, &teacher_default, &student_default, false)?;
            s.finish()?;
            let mut lines = pipeline::acceptance_lines(&report);
            if *bench {
                let mut s = stage("bench")?;
                let rows = pipeline::run_bench(&mut s, &teacher_default, &student_default)?;
                s.finish()?;
                lines.extend(pipeline::timing_line(&rows));
            }
            if *enforce {
                pipeline::enforce(&lines)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} msg={msg:?}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}
