//! Distilling the multi-step DDIM sampler into a single-evaluation student,
//! plus the optimizer and training loop shared with teacher training.

mod optim;
mod pairs;
mod student;
mod train_config;
mod trainer;

pub use optim::{adam_step, lr_at, AdamState};
pub use pairs::{
    generate_pairs, load_pairs, prior_latent, read_pairs, save_pairs, write_pairs, DistillPair, PairDataset,
    PAIRS_MAGIC, PAIRS_VERSION,
};
pub use student::{
    distill_loss, gaussian_kl_diag, init_student_from_teacher, student_predict, train_student, StudentObjective,
    StudentRun,
};
pub use train_config::{LossKind, StudentHead, TrainConfig};
pub use trainer::{
    read_log_csv, write_log_csv, LogRow, Objective, TrainOutcome, TrainState, STATE_MAGIC, STATE_VERSION,
};
