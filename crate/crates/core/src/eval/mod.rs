//! Fidelity, distribution, interpolation, memorization and timing metrics.

mod bench;
mod generator;
mod interp;
mod metrics;
mod report;

pub use bench::{bench_sampling, timer_resolution, BenchRow};
pub use generator::{Generator, StudentSampler, TeacherSampler};
pub use interp::{hop_ratio, interpolation_grid, slerp, write_grid_csv};
pub use metrics::{
    distill_gap, energy_distance, gap_latents, hist_kl, mean_nn_distance, nearest_neighbors, GapStats, HistKl, Neighbor,
};
pub use report::{write_timing_csv, EvalReport, HistKlEntry};
