//! Minibatch training loop shared by the teacher and the student.
//!
//! The loop draws shuffled epochs over a fixed training set, applies Adam
//! with linear warmup, keeps an EMA shadow of the weights, evaluates the
//! shadow on held-out data every `eval_interval` steps and stops at
//! `max_iters` or when the held-out loss has not improved for
//! `early_stop_patience` evaluations. The returned weights are the EMA
//! shadow at the best held-out evaluation.
//!
//! All loop state lives in [`TrainState`], which serializes to a
//! CRC-framed `"DTST"` file. Resuming from it reproduces the uninterrupted
//! run bit for bit.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::optim::{adam_step, lr_at, AdamState};
use super::train_config::TrainConfig;
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::epsnet::{EmaState, EpsNetParams, Linear, NetDims};
use crate::error::{Error, Result};
use crate::gradcore::{Tape, Tensor};
use crate::rng::RngState;

pub const STATE_MAGIC: &[u8; 4] = b"DTST";
pub const STATE_VERSION: u32 = 1;
const KIND: &str = "train state";

/// A differentiable training objective over an indexed training set.
pub trait Objective {
    /// Number of training records; batches index into `0..train_len()`.
    fn train_len(&self) -> usize;

    /// Scalar loss on the records `rows`, recorded on `tape` through `net`.
    fn batch_loss(&self, tape: &mut Tape, net: &EpsNetParams, rows: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor>;

    /// Loss of `net` on the held-out records. Must be deterministic.
    fn heldout_loss(&self, net: &EpsNetParams) -> Result<f64>;
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    /// Mean minibatch loss since the previous row; NaN for the initial row.
    pub train_loss: f64,
    pub heldout_loss: f64,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// EMA weights at the best held-out evaluation.
    pub params: EpsNetParams,
    pub best_heldout: f64,
    pub steps: u64,
    pub stopped_early: bool,
    pub log: Vec<LogRow>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    config_fp: u64,
    params: EpsNetParams,
    adam: AdamState,
    ema: EmaState,
    rng: ChaCha8Rng,
    epoch: u64,
    order: Vec<u32>,
    cursor: usize,
    best_heldout: f64,
    best_params: EpsNetParams,
    evals_since_best: u32,
    window_sum: f64,
    window_count: u64,
    last_lr: f64,
    finished: bool,
    stopped_early: bool,
    log: Vec<LogRow>,
}

/// Identifies a configuration so a saved state is never resumed under another.
pub(crate) fn config_fingerprint(cfg: &TrainConfig) -> u64 {
    let digest = Sha256::digest(format!("{cfg:?}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl TrainState {
    pub fn new(init: &EpsNetParams, cfg: &TrainConfig, rng: ChaCha8Rng, train_len: usize) -> Result<Self> {
        cfg.validate()?;
        if train_len < cfg.batch_size {
            return Err(Error::invalid(format!(
                "{train_len} training records cannot fill a batch of {}",
                cfg.batch_size
            )));
        }
        if train_len > u32::MAX as usize {
            return Err(Error::invalid("training set too large"));
        }
        let mut state = Self {
            config_fp: config_fingerprint(cfg),
            params: init.clone(),
            adam: AdamState::new(init),
            ema: EmaState::new(init, cfg.ema_decay)?,
            rng,
            epoch: 0,
            order: (0..train_len as u32).collect(),
            cursor: 0,
            best_heldout: f64::INFINITY,
            best_params: init.clone(),
            evals_since_best: 0,
            window_sum: 0.0,
            window_count: 0,
            last_lr: lr_at(0, cfg.base_lr, cfg.warmup_steps),
            finished: false,
            stopped_early: false,
            log: Vec::new(),
        };
        state.order.shuffle(&mut state.rng);
        Ok(state)
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn params(&self) -> &EpsNetParams {
        &self.params
    }

    pub fn ema(&self) -> &EmaState {
        &self.ema
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    /// Runs until finished, or until `step() == pause_at` if given.
    pub fn run<O: Objective + ?Sized>(
        &mut self,
        objective: &O,
        cfg: &TrainConfig,
        pause_at: Option<u64>,
    ) -> Result<()> {
        if config_fingerprint(cfg) != self.config_fp {
            return Err(Error::Config(
                "training state was created under a different configuration".into(),
            ));
        }
        if objective.train_len() != self.order.len() {
            return Err(Error::invalid(format!(
                "objective has {} training records, state expects {}",
                objective.train_len(),
                self.order.len()
            )));
        }
        if self.log.is_empty() {
            self.evaluate(objective, cfg)?;
        }
        while !self.finished {
            if self.step() >= cfg.max_iters {
                self.finished = true;
                break;
            }
            if pause_at.is_some_and(|p| self.step() >= p) {
                break;
            }
            self.train_step(objective, cfg)?;
            if self.step().is_multiple_of(cfg.eval_interval) || self.step() == cfg.max_iters {
                self.evaluate(objective, cfg)?;
            }
        }
        Ok(())
    }

    fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        if self.cursor + batch > self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.order.shuffle(&mut self.rng);
        }
        let rows = self.order[self.cursor..self.cursor + batch]
            .iter()
            .map(|&i| i as usize)
            .collect();
        self.cursor += batch;
        rows
    }

    fn train_step<O: Objective + ?Sized>(&mut self, objective: &O, cfg: &TrainConfig) -> Result<()> {
        let step = self.step();
        let rows = self.next_batch(cfg.batch_size);
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let loss = objective
            .batch_loss(&mut tape, &bound, &rows, &mut self.rng)
            .map_err(|e| as_abort(e, step))?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::NumericalAbort {
                step,
                what: format!("training loss is {value}"),
            });
        }
        let grads = tape.backward(&loss)?;
        let grads = bound
            .tensors()
            .map(|t| grads.wrt(t).cloned())
            .collect::<Result<Vec<_>>>()?;
        self.last_lr = adam_step(&mut self.adam, &mut self.params, &grads, cfg)?;
        if !self.params.tensors().all(Tensor::is_finite) {
            return Err(Error::NumericalAbort {
                step,
                what: "parameters became non-finite".into(),
            });
        }
        self.ema.update(&self.params)?;
        self.window_sum += value;
        self.window_count += 1;
        Ok(())
    }

    fn evaluate<O: Objective + ?Sized>(&mut self, objective: &O, cfg: &TrainConfig) -> Result<()> {
        let heldout = objective
            .heldout_loss(&self.ema.shadow)
            .map_err(|e| as_abort(e, self.step()))?;
        if !heldout.is_finite() {
            return Err(Error::NumericalAbort {
                step: self.step(),
                what: format!("held-out loss is {heldout}"),
            });
        }
        let train_loss = if self.window_count == 0 {
            f64::NAN
        } else {
            self.window_sum / self.window_count as f64
        };
        self.log.push(LogRow {
            step: self.step(),
            lr: self.last_lr,
            train_loss,
            heldout_loss: heldout,
        });
        self.window_sum = 0.0;
        self.window_count = 0;
        if heldout < self.best_heldout {
            self.best_heldout = heldout;
            self.best_params = self.ema.shadow.clone();
            self.evals_since_best = 0;
        } else {
            self.evals_since_best += 1;
            if cfg.early_stop_patience > 0 && self.evals_since_best >= cfg.early_stop_patience {
                self.finished = true;
                self.stopped_early = true;
            }
        }
        Ok(())
    }

    pub fn outcome(&self) -> TrainOutcome {
        TrainOutcome {
            params: self.best_params.clone(),
            best_heldout: self.best_heldout,
            steps: self.step(),
            stopped_early: self.stopped_early,
            log: self.log.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(STATE_MAGIC, STATE_VERSION);
        w.u64(self.config_fp);
        let d = self.params.dims();
        for v in [d.data_dim, d.hidden, d.depth, d.embed_dim] {
            w.u32(v as u32);
        }
        w.u64(self.adam.step);
        write_params(&mut w, &self.params);
        for m in self.adam.m.iter().chain(&self.adam.v) {
            w.f64s(m);
        }
        w.f64(self.ema.decay());
        write_params(&mut w, &self.ema.shadow);
        let rs = RngState::capture(&self.rng);
        w.bytes(&rs.seed);
        w.u64(rs.stream);
        w.bytes(&rs.word_pos.to_le_bytes());
        w.u64(self.epoch);
        w.u64(self.order.len() as u64);
        for &i in &self.order {
            w.u32(i);
        }
        w.u64(self.cursor as u64);
        w.f64(self.best_heldout);
        write_params(&mut w, &self.best_params);
        w.u32(self.evals_since_best);
        w.f64(self.window_sum);
        w.u64(self.window_count);
        w.f64(self.last_lr);
        w.u8(self.finished as u8 | (self.stopped_early as u8) << 1);
        w.u64(self.log.len() as u64);
        for row in &self.log {
            w.u64(row.step);
            w.f64(row.lr);
            w.f64(row.train_loss);
            w.f64(row.heldout_loss);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(KIND, bytes, STATE_MAGIC, STATE_VERSION)?;
        r.check_crc()?;
        let config_fp = r.u64()?;
        let mut raw = [0usize; 4];
        for v in raw.iter_mut() {
            *v = r.u32()? as usize;
        }
        let dims = NetDims {
            data_dim: raw[0],
            hidden: raw[1],
            depth: raw[2],
            embed_dim: raw[3],
        };
        dims.validate().map_err(|e| r.malformed(e.to_string()))?;
        let step = r.u64()?;
        let params = read_params(&mut r, dims)?;
        let mut moments = Vec::new();
        for _ in 0..2 {
            let m = params
                .tensors()
                .map(|t| r.f64s(t.numel()))
                .collect::<Result<Vec<_>>>()?;
            moments.push(m);
        }
        let v = moments.pop().unwrap();
        let m = moments.pop().unwrap();
        let decay = r.f64()?;
        let shadow = read_params(&mut r, dims)?;
        let ema = EmaState::new(&shadow, decay).map_err(|e| r.malformed(e.to_string()))?;
        let seed = r.array::<32>()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.array::<16>()?);
        let rng = RngState { seed, stream, word_pos }.restore();
        let epoch = r.u64()?;
        let n = r.u64()? as usize;
        if n > bytes.len() / 4 {
            return Err(r.malformed(format!("implausible training set size {n}")));
        }
        let order = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let cursor = r.u64()? as usize;
        if cursor > n {
            return Err(r.malformed("batch cursor past the end of the epoch"));
        }
        let best_heldout = r.f64()?;
        let best_params = read_params(&mut r, dims)?;
        let evals_since_best = r.u32()?;
        let window_sum = r.f64()?;
        let window_count = r.u64()?;
        let last_lr = r.f64()?;
        let flags = r.u8()?;
        let n_log = r.u64()? as usize;
        if n_log > bytes.len() / 32 {
            return Err(r.malformed(format!("implausible log length {n_log}")));
        }
        let mut log = Vec::with_capacity(n_log);
        for _ in 0..n_log {
            log.push(LogRow {
                step: r.u64()?,
                lr: r.f64()?,
                train_loss: r.f64()?,
                heldout_loss: r.f64()?,
            });
        }
        r.finish()?;
        Ok(Self {
            config_fp,
            params,
            adam: AdamState { step, m, v },
            ema,
            rng,
            epoch,
            order,
            cursor,
            best_heldout,
            best_params,
            evals_since_best,
            window_sum,
            window_count,
            last_lr,
            finished: flags & 1 != 0,
            stopped_early: flags & 2 != 0,
            log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Non-finite values inside a loss evaluation abort the run.
fn as_abort(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { op } => Error::NumericalAbort {
            step,
            what: format!("non-finite value in {op}"),
        },
        e => e,
    }
}

fn write_params(w: &mut Writer, p: &EpsNetParams) {
    for t in p.tensors() {
        w.f64s(t.data());
    }
}

fn read_params(r: &mut Reader<'_>, dims: NetDims) -> Result<EpsNetParams> {
    let mut layers = Vec::with_capacity(dims.depth);
    for (i, o) in dims.layer_shapes() {
        let weight = Tensor::new(vec![i, o], r.f64s(i * o)?)?;
        let bias = Tensor::new(vec![o], r.f64s(o)?)?;
        layers.push(Linear { weight, bias });
    }
    EpsNetParams::from_layers(dims, layers)
}

pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "step,lr,train_loss,heldout_loss").unwrap();
    for r in log {
        writeln!(out, "{},{},{},{}", r.step, r.lr, r.train_loss, r.heldout_loss).unwrap();
    }
    write_file(path, &out)
}

pub fn read_log_csv(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("step,lr,train_loss,heldout_loss") {
        return Err(Error::invalid(format!("{}: unexpected log header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("{}: bad log line {line:?}", path.display()));
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(LogRow {
                step: f[0].parse().map_err(|_| bad())?,
                lr: num(f[1])?,
                train_loss: num(f[2])?,
                heldout_loss: num(f[3])?,
            })
        })
        .collect()
}
