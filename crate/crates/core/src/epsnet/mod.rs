//! Time-conditioned noise-prediction MLP shared by teacher and student.

mod checkpoint;
mod ema;
mod embed;
mod model;
mod params;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use ema::EmaState;
pub use embed::time_embed;
pub use model::{CountingModel, EpsModel};
pub use params::{EpsNetParams, Linear, NetDims};
