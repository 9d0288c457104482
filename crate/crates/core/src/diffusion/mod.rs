//! Noise schedule, forward process, epsilon objective and the deterministic
//! DDIM sampler.

mod ddim;
mod loss;
mod schedule;
mod teacher;

pub use ddim::{
    ddim_sample, ddim_step, ddim_step_scaled_form, forward_marginal, posterior_mean, predict_x0, write_trajectory_csv,
    Rollout,
};
pub use loss::{eps_mse, epsilon_loss, noise_batch, NoisedBatch};
pub use schedule::{NoiseSchedule, TimestepSubsequence, MAX_TERMINAL_SQRT_ALPHA};
pub use teacher::{train_teacher, TeacherObjective, TeacherRun};
