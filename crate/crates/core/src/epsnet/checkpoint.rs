//! Binary checkpoint holding network weights together with the noise
//! schedule they were trained under.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "DSTU" | version u32 | T u32 | beta_min f64 | beta_max f64 | alpha[T] f64
//!        | data_dim u32 | hidden u32 | depth u32 | embed_dim u32
//!        | per layer: weight[fan_in*fan_out] f64, bias[fan_out] f64
//!        | crc32 u32 over every preceding byte
//! ```

use std::path::Path;

use super::params::{EpsNetParams, Linear, NetDims};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSTU";
pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "checkpoint";

const MAX_STEPS: u32 = 1_000_000;
const MAX_EXTENT: u32 = 1 << 16;
const MAX_DEPTH: u32 = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EpsNetParams,
    pub schedule: NoiseSchedule,
}

pub fn write_checkpoint(params: &EpsNetParams, schedule: &NoiseSchedule) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.u32(schedule.steps() as u32);
    w.f64(schedule.beta_min());
    w.f64(schedule.beta_max());
    w.f64s(schedule.alphas());
    let d = params.dims();
    for v in [d.data_dim, d.hidden, d.depth, d.embed_dim] {
        w.u32(v as u32);
    }
    for t in params.tensors() {
        w.f64s(t.data());
    }
    w.finish()
}

struct Header {
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    alphas: Vec<f64>,
    dims: NetDims,
}

fn read_header(r: &mut Reader<'_>) -> Result<Header> {
    let steps = r.u32()?;
    if !(2..=MAX_STEPS).contains(&steps) {
        return Err(r.malformed(format!("implausible step count {steps}")));
    }
    let beta_min = r.f64()?;
    let beta_max = r.f64()?;
    let alphas = r.f64s(steps as usize)?;
    let mut dims = [0u32; 4];
    for d in dims.iter_mut() {
        *d = r.u32()?;
    }
    if dims.iter().any(|&d| d == 0 || d > MAX_EXTENT) || dims[2] > MAX_DEPTH {
        return Err(r.malformed(format!("implausible network dims {dims:?}")));
    }
    Ok(Header {
        steps: steps as usize,
        beta_min,
        beta_max,
        alphas,
        dims: NetDims {
            data_dim: dims[0] as usize,
            hidden: dims[1] as usize,
            depth: dims[2] as usize,
            embed_dim: dims[3] as usize,
        },
    })
}

fn encoded_len(h: &Header) -> u64 {
    let weights: u64 = h.dims.layer_shapes().iter().map(|&(i, o)| (i * o + o) as u64).sum();
    8 + 4 + 16 + 8 * h.steps as u64 + 16 + 8 * weights + 4
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::open(KIND, bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let header = match read_header(&mut r) {
        Ok(h) => h,
        // an unparseable header on a file whose CRC fails is corruption, not a format error
        Err(e) => return Err(r.check_crc().err().unwrap_or(e)),
    };
    r.check_frame(encoded_len(&header))?;
    let schedule = NoiseSchedule::from_stored(header.steps, header.beta_min, header.beta_max, &header.alphas)?;
    let mut layers = Vec::with_capacity(header.dims.depth);
    for (i, o) in header.dims.layer_shapes() {
        let weight = Tensor::new(vec![i, o], r.f64s(i * o)?)?;
        let bias = Tensor::new(vec![o], r.f64s(o)?)?;
        layers.push(Linear { weight, bias });
    }
    r.finish()?;
    let params = EpsNetParams::from_layers(header.dims, layers)?;
    Ok(Checkpoint { params, schedule })
}

pub fn save_checkpoint(path: &Path, params: &EpsNetParams, schedule: &NoiseSchedule) -> Result<()> {
    write_file(path, &write_checkpoint(params, schedule))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&read_file(path)?)
}

impl Checkpoint {
    /// Rejects a pairing of two checkpoints trained under different schedules or shapes.
    pub fn check_compatible(&self, other: &Checkpoint) -> Result<()> {
        if self.schedule != other.schedule {
            return Err(Error::ScheduleMismatch(
                "checkpoints were produced under different noise schedules".into(),
            ));
        }
        if self.params.dims() != other.params.dims() {
            return Err(Error::invalid(format!(
                "network dims differ: {:?} vs {:?}",
                self.params.dims(),
                other.params.dims()
            )));
        }
        Ok(())
    }
}
