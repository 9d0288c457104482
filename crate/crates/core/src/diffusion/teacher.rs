use rand_chacha::ChaCha8Rng;

use super::loss::epsilon_loss;
use super::schedule::NoiseSchedule;
use crate::distill::{Objective, TrainConfig, TrainOutcome, TrainState};
use crate::epsnet::{EpsNetParams, NetDims};
use crate::error::{Error, Result};
use crate::gradcore::{Eager, Tape, Tensor};
use crate::rng::{stream, Domain};

/// The epsilon objective over a fixed set of clean points. The last
/// `heldout_fraction` of the rows are held out.
pub struct TeacherObjective {
    train: Tensor,
    heldout: Tensor,
    sched: NoiseSchedule,
    seed: u64,
}

impl TeacherObjective {
    pub fn new(data: &Tensor, sched: &NoiseSchedule, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        if data.shape().len() != 2 {
            return Err(Error::invalid("teacher data must be a [n, dim] tensor"));
        }
        let (n_train, _) = cfg.split(data.rows())?;
        let d = data.cols();
        let (a, b) = data.data().split_at(n_train * d);
        Ok(Self {
            train: Tensor::new(vec![n_train, d], a.to_vec())?,
            heldout: Tensor::new(vec![data.rows() - n_train, d], b.to_vec())?,
            sched: sched.clone(),
            seed,
        })
    }

    pub fn heldout_rows(&self) -> usize {
        self.heldout.rows()
    }
}

fn gather(src: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * src.cols());
    for &r in rows {
        data.extend_from_slice(src.row(r));
    }
    Tensor::new(vec![rows.len(), src.cols()], data)
}

impl Objective for TeacherObjective {
    fn train_len(&self) -> usize {
        self.train.rows()
    }

    fn batch_loss(&self, tape: &mut Tape, net: &EpsNetParams, rows: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let x0 = gather(&self.train, rows)?;
        epsilon_loss(tape, net, &x0, &self.sched, rng)
    }

    /// Uses the same timesteps and noise at every evaluation.
    fn heldout_loss(&self, net: &EpsNetParams) -> Result<f64> {
        let mut rng = stream(self.seed, Domain::Heldout, 0);
        epsilon_loss(&mut Eager, net, &self.heldout, &self.sched, &mut rng)?.item()
    }
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    /// EMA weights at the best held-out evaluation.
    pub params: EpsNetParams,
    pub init_heldout: f64,
    pub outcome: TrainOutcome,
}

/// Fits the noise predictor to `data` from a seeded initialization.
pub fn train_teacher(
    cfg: &TrainConfig,
    dims: NetDims,
    sched: &NoiseSchedule,
    data: &Tensor,
    seed: u64,
) -> Result<TeacherRun> {
    let objective = TeacherObjective::new(data, sched, cfg, seed)?;
    let init = EpsNetParams::init(seed, dims)?;
    if init.dims().data_dim != data.cols() {
        return Err(Error::invalid(format!(
            "network data dim {} does not match data dim {}",
            init.dims().data_dim,
            data.cols()
        )));
    }
    let mut state = TrainState::new(&init, cfg, stream(seed, Domain::Train, 0), objective.train_len())?;
    state.run(&objective, cfg, None)?;
    let outcome = state.outcome();
    Ok(TeacherRun {
        params: outcome.params.clone(),
        init_heldout: outcome.log[0].heldout_loss,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> Tensor {
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * (i % 4) as f64 / 4.0;
                [2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    fn small() -> NetDims {
        NetDims {
            data_dim: 2,
            hidden: 16,
            depth: 3,
            embed_dim: 8,
        }
    }

    #[test]
    fn zero_iterations_equal_init() {
        let sched = NoiseSchedule::linear(100, 1e-4, 0.12).unwrap();
        let cfg = TrainConfig {
            max_iters: 0,
            batch_size: 32,
            ..TrainConfig::teacher_default()
        };
        let run = train_teacher(&cfg, small(), &sched, &ring(200), 9).unwrap();
        assert_eq!(run.params, EpsNetParams::init(9, small()).unwrap());
    }

    #[test]
    fn short_run_is_deterministic_and_improves() {
        let sched = NoiseSchedule::linear(100, 1e-4, 0.12).unwrap();
        let cfg = TrainConfig {
            max_iters: 200,
            batch_size: 32,
            warmup_steps: 20,
            eval_interval: 50,
            ema_decay: 0.9,
            ..TrainConfig::teacher_default()
        };
        let a = train_teacher(&cfg, small(), &sched, &ring(400), 3).unwrap();
        let b = train_teacher(&cfg, small(), &sched, &ring(400), 3).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.outcome.best_heldout < a.init_heldout);
    }
}
