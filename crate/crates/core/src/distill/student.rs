use rand_chacha::ChaCha8Rng;

use super::pairs::PairDataset;
use super::train_config::{LossKind, StudentHead, TrainConfig};
use super::trainer::{Objective, TrainOutcome, TrainState};
use crate::diffusion::{predict_x0, NoiseSchedule};
use crate::epsnet::{Checkpoint, EpsModel, EpsNetParams};
use crate::error::{Error, Result};
use crate::gradcore::{Eager, Ops, Tape, Tensor};
use crate::rng::{stream, Domain};

/// The student starts as an exact copy of the teacher network.
pub fn init_student_from_teacher(teacher: &EpsNetParams) -> EpsNetParams {
    teacher.clone()
}

/// One-evaluation sample `F_student(x_T)`.
pub fn student_predict<M: EpsModel + ?Sized>(
    student: &M,
    x_t: &Tensor,
    sched: &NoiseSchedule,
    head: StudentHead,
) -> Result<Tensor> {
    if !x_t.is_finite() {
        return Err(Error::NonFinite { op: "student_predict" });
    }
    if x_t.shape().len() != 2 || x_t.cols() != student.data_dim() {
        return Err(Error::Shape {
            op: "student_predict",
            lhs: x_t.shape().to_vec(),
            rhs: vec![x_t.shape()[0], student.data_dim()],
        });
    }
    let big_t = sched.steps();
    let eps = student.predict_eps(x_t, big_t)?;
    match head {
        StudentHead::FTheta => predict_x0(x_t, &eps, big_t, sched),
        StudentHead::PlainSubtract => {
            let data = x_t.data().iter().zip(eps.data()).map(|(x, e)| x - e).collect();
            Tensor::new(x_t.shape().to_vec(), data)
        }
    }
}

/// The student prediction built from primitives so it can be recorded.
/// Bit-identical to [`student_predict`].
fn predict_ops<O: Ops>(
    ops: &mut O,
    student: &EpsNetParams,
    x_t: &Tensor,
    sched: &NoiseSchedule,
    head: StudentHead,
) -> Result<Tensor> {
    let big_t = sched.steps();
    let eps = student.forward_ops(ops, x_t, &[big_t])?;
    match head {
        StudentHead::FTheta => {
            let noise = ops.scale(&eps, -sched.sqrt_one_minus_alpha(big_t))?;
            let diff = ops.add(x_t, &noise)?;
            ops.scale(&diff, (1.0 / sched.alpha(big_t)).sqrt())
        }
        StudentHead::PlainSubtract => {
            let neg = ops.scale(&eps, -1.0)?;
            ops.add(x_t, &neg)
        }
    }
}

/// Batch mean of `1/2 ||F_student(x_T) - x0||^2` (L2) or `||F_student(x_T) - x0||_1` (L1).
pub fn distill_loss<O: Ops>(
    ops: &mut O,
    student: &EpsNetParams,
    x_t: &Tensor,
    x0: &Tensor,
    sched: &NoiseSchedule,
    kind: LossKind,
    head: StudentHead,
) -> Result<Tensor> {
    if x_t.shape() != x0.shape() {
        return Err(Error::Shape {
            op: "distill_loss",
            lhs: x_t.shape().to_vec(),
            rhs: x0.shape().to_vec(),
        });
    }
    let pred = predict_ops(ops, student, x_t, sched, head)?;
    let d = x0.cols() as f64;
    match kind {
        LossKind::L2 => {
            let m = ops.sq_diff_mean(&pred, x0)?;
            ops.scale(&m, 0.5 * d)
        }
        LossKind::L1 => {
            let m = ops.abs_diff_mean(&pred, x0)?;
            ops.scale(&m, d)
        }
    }
}

/// `KL(N(mu1, diag var1) || N(mu2, diag var2))` in closed form.
pub fn gaussian_kl_diag(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64> {
    let n = mu1.len();
    if var1.len() != n || mu2.len() != n || var2.len() != n {
        return Err(Error::invalid("gaussian_kl_diag: length mismatch"));
    }
    if var1.iter().chain(var2).any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("gaussian_kl_diag: variances must be positive"));
    }
    let mut kl = 0.0;
    for i in 0..n {
        let d = mu2[i] - mu1[i];
        kl += var1[i] / var2[i] + d * d / var2[i] - 1.0 + (var2[i] / var1[i]).ln();
    }
    Ok(0.5 * kl)
}

/// The distillation objective over a pair dataset. The last
/// `heldout_fraction` of the pairs are held out.
pub struct StudentObjective<'a> {
    pairs: &'a PairDataset,
    n_train: usize,
    sched: NoiseSchedule,
    kind: LossKind,
    head: StudentHead,
}

impl<'a> StudentObjective<'a> {
    pub fn new(pairs: &'a PairDataset, sched: &NoiseSchedule, cfg: &TrainConfig, head: StudentHead) -> Result<Self> {
        let (n_train, _) = cfg.split(pairs.len())?;
        Ok(Self {
            pairs,
            n_train,
            sched: sched.clone(),
            kind: cfg.loss_kind,
            head,
        })
    }

    /// Held-out `(x_T, x0)` records.
    pub fn heldout(&self) -> Result<(Tensor, Tensor)> {
        self.pairs.slice(self.n_train..self.pairs.len())
    }
}

impl Objective for StudentObjective<'_> {
    fn train_len(&self) -> usize {
        self.n_train
    }

    fn batch_loss(&self, tape: &mut Tape, net: &EpsNetParams, rows: &[usize], _: &mut ChaCha8Rng) -> Result<Tensor> {
        let (x_t, x0) = self.pairs.gather(rows)?;
        distill_loss(tape, net, &x_t, &x0, &self.sched, self.kind, self.head)
    }

    fn heldout_loss(&self, net: &EpsNetParams) -> Result<f64> {
        let (x_t, x0) = self.heldout()?;
        distill_loss(&mut Eager, net, &x_t, &x0, &self.sched, self.kind, self.head)?.item()
    }
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    /// EMA weights at the best held-out evaluation.
    pub params: EpsNetParams,
    pub init_heldout: f64,
    pub outcome: TrainOutcome,
}

/// Distills `teacher` into a one-step student on `pairs`.
pub fn train_student(
    teacher: &Checkpoint,
    pairs: &PairDataset,
    cfg: &TrainConfig,
    head: StudentHead,
    seed: u64,
) -> Result<StudentRun> {
    pairs.check_source(&teacher.params, &teacher.schedule)?;
    let objective = StudentObjective::new(pairs, &teacher.schedule, cfg, head)?;
    let init = init_student_from_teacher(&teacher.params);
    let mut state = TrainState::new(&init, cfg, stream(seed, Domain::Train, 1), objective.train_len())?;
    state.run(&objective, cfg, None)?;
    let outcome = state.outcome();
    Ok(StudentRun {
        params: outcome.params.clone(),
        init_heldout: outcome.log[0].heldout_loss,
        outcome,
    })
}
