//! `(x_T, x_0)` pairs produced by the deterministic teacher sampler.
//!
//! File layout, little-endian:
//!
//! ```text
//! "DPRS" | version u32 | count u64 | dim u32
//!        | schedule fingerprint u64 | teacher fingerprint u64
//!        | count records of x_T[dim] f64, x0[dim] f64
//!        | crc32 u32 over every preceding byte
//! ```

use std::path::Path;

use rayon::prelude::*;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::diffusion::{ddim_sample, NoiseSchedule, TimestepSubsequence};
use crate::epsnet::EpsNetParams;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{normals, stream, Domain};

pub const PAIRS_MAGIC: &[u8; 4] = b"DPRS";
pub const PAIRS_VERSION: u32 = 1;
const KIND: &str = "pair dataset";
const HEADER_LEN: u64 = 8 + 8 + 4 + 8 + 8;
/// Rows per sampler call during generation.
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct DistillPair {
    pub x_t: Vec<f64>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    dim: usize,
    schedule_fp: u64,
    teacher_fp: u64,
    x_t: Vec<f64>,
    x0: Vec<f64>,
}

impl PairDataset {
    pub fn new(dim: usize, schedule_fp: u64, teacher_fp: u64, pairs: &[DistillPair]) -> Result<Self> {
        if dim == 0 || pairs.is_empty() {
            return Err(Error::invalid("a pair dataset needs dim >= 1 and at least one pair"));
        }
        let mut x_t = Vec::with_capacity(pairs.len() * dim);
        let mut x0 = Vec::with_capacity(pairs.len() * dim);
        for (i, p) in pairs.iter().enumerate() {
            if p.x_t.len() != dim || p.x0.len() != dim {
                return Err(Error::invalid(format!("pair {i} does not have dim {dim}")));
            }
            if !p.x_t.iter().chain(&p.x0).all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("pair {i} is not finite")));
            }
            x_t.extend_from_slice(&p.x_t);
            x0.extend_from_slice(&p.x0);
        }
        Ok(Self {
            dim,
            schedule_fp,
            teacher_fp,
            x_t,
            x0,
        })
    }

    pub fn len(&self) -> usize {
        self.x_t.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.x_t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn schedule_fingerprint(&self) -> u64 {
        self.schedule_fp
    }

    pub fn teacher_fingerprint(&self) -> u64 {
        self.teacher_fp
    }

    pub fn pair(&self, i: usize) -> DistillPair {
        let r = i * self.dim..(i + 1) * self.dim;
        DistillPair {
            x_t: self.x_t[r.clone()].to_vec(),
            x0: self.x0[r].to_vec(),
        }
    }

    /// `(x_T, x0)` for the given records as `[rows, dim]` tensors.
    pub fn gather(&self, rows: &[usize]) -> Result<(Tensor, Tensor)> {
        let d = self.dim;
        let mut a = Vec::with_capacity(rows.len() * d);
        let mut b = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            if i >= self.len() {
                return Err(Error::invalid(format!("pair index {i} out of range")));
            }
            a.extend_from_slice(&self.x_t[i * d..(i + 1) * d]);
            b.extend_from_slice(&self.x0[i * d..(i + 1) * d]);
        }
        Ok((
            Tensor::new(vec![rows.len(), d], a)?,
            Tensor::new(vec![rows.len(), d], b)?,
        ))
    }

    /// Contiguous records `range` as tensors.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<(Tensor, Tensor)> {
        self.gather(&range.collect::<Vec<_>>())
    }

    /// Checks that the pairs came from `teacher` sampling under `sched`.
    pub fn check_source(&self, teacher: &EpsNetParams, sched: &NoiseSchedule) -> Result<()> {
        if self.schedule_fp != sched.fingerprint() {
            return Err(Error::ScheduleMismatch(
                "pair dataset was generated under a different noise schedule".into(),
            ));
        }
        if self.teacher_fp != teacher.fingerprint() {
            return Err(Error::ScheduleMismatch(
                "pair dataset was generated by a different teacher".into(),
            ));
        }
        if self.dim != teacher.dims().data_dim {
            return Err(Error::invalid(format!(
                "pair dim {} does not match network dim {}",
                self.dim,
                teacher.dims().data_dim
            )));
        }
        Ok(())
    }
}

/// The prior draw `x_T ~ N(0, I)` for pair `index`.
pub fn prior_latent(seed: u64, index: u64, dim: usize) -> Vec<f64> {
    normals(&mut stream(seed, Domain::Pairs, index), dim)
}

/// Samples `count` pairs. Pair `i` draws its latent from its own stream, so
/// the result does not depend on `threads` (0 selects the rayon default).
pub fn generate_pairs(
    teacher: &EpsNetParams,
    sched: &NoiseSchedule,
    tau: &TimestepSubsequence,
    count: usize,
    seed: u64,
    threads: usize,
) -> Result<PairDataset> {
    if count == 0 {
        return Err(Error::invalid("pair count must be >= 1"));
    }
    tau.check_against(sched)?;
    let d = teacher.dims().data_dim;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let starts: Vec<usize> = (0..count).step_by(CHUNK).collect();
    let chunks = pool.install(|| {
        starts
            .par_iter()
            .map(|&start| {
                let end = (start + CHUNK).min(count);
                let mut lat = Vec::with_capacity((end - start) * d);
                for i in start..end {
                    lat.extend(prior_latent(seed, i as u64, d));
                }
                let x_t = Tensor::new(vec![end - start, d], lat)?;
                let x0 = ddim_sample(teacher, sched, tau, &x_t, false)?.x0;
                Ok((x_t.into_data(), x0.into_data()))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut x_t = Vec::with_capacity(count * d);
    let mut x0 = Vec::with_capacity(count * d);
    for (a, b) in chunks {
        x_t.extend(a);
        x0.extend(b);
    }
    let bad: Vec<usize> = (0..count)
        .filter(|&i| !x0[i * d..(i + 1) * d].iter().all(|v| v.is_finite()))
        .collect();
    if let Some(&first) = bad.first() {
        return Err(Error::NumericalAbort {
            step: first as u64,
            what: format!("teacher produced non-finite outputs for {} pairs", bad.len()),
        });
    }
    Ok(PairDataset {
        dim: d,
        schedule_fp: sched.fingerprint(),
        teacher_fp: teacher.fingerprint(),
        x_t,
        x0,
    })
}

pub fn write_pairs(ds: &PairDataset) -> Vec<u8> {
    let mut w = Writer::new(PAIRS_MAGIC, PAIRS_VERSION);
    w.u64(ds.len() as u64);
    w.u32(ds.dim as u32);
    w.u64(ds.schedule_fp);
    w.u64(ds.teacher_fp);
    let d = ds.dim;
    for i in 0..ds.len() {
        w.f64s(&ds.x_t[i * d..(i + 1) * d]);
        w.f64s(&ds.x0[i * d..(i + 1) * d]);
    }
    w.finish()
}

pub fn read_pairs(bytes: &[u8]) -> Result<PairDataset> {
    let mut r = Reader::open(KIND, bytes, PAIRS_MAGIC, PAIRS_VERSION)?;
    let header = (|| -> Result<(u64, u32, u64, u64)> { Ok((r.u64()?, r.u32()?, r.u64()?, r.u64()?)) })();
    let (count, dim, schedule_fp, teacher_fp) = match header {
        Ok(h) => h,
        Err(e) => return Err(r.check_crc().err().unwrap_or(e)),
    };
    let total = count
        .checked_mul(dim as u64)
        .and_then(|v| v.checked_mul(16))
        .and_then(|v| v.checked_add(HEADER_LEN + 4));
    let total = match total {
        Some(t) if count > 0 && dim > 0 => t,
        _ => {
            r.check_crc()?;
            return Err(r.malformed(format!("implausible header: count {count}, dim {dim}")));
        }
    };
    r.check_frame(total)?;
    let d = dim as usize;
    let n = count as usize;
    let mut x_t = Vec::with_capacity(n * d);
    let mut x0 = Vec::with_capacity(n * d);
    for _ in 0..n {
        x_t.extend(r.f64s(d)?);
        x0.extend(r.f64s(d)?);
    }
    r.finish()?;
    if !x_t.iter().chain(&x0).all(|v| v.is_finite()) {
        return Err(Error::Malformed {
            kind: KIND,
            reason: "non-finite pair values".into(),
        });
    }
    Ok(PairDataset {
        dim: d,
        schedule_fp,
        teacher_fp,
        x_t,
        x0,
    })
}

pub fn save_pairs(path: &Path, ds: &PairDataset) -> Result<()> {
    write_file(path, &write_pairs(ds))
}

pub fn load_pairs(path: &Path) -> Result<PairDataset> {
    read_pairs(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epsnet::NetDims;

    fn fixture() -> (EpsNetParams, NoiseSchedule, TimestepSubsequence) {
        let dims = NetDims {
            data_dim: 2,
            hidden: 8,
            depth: 3,
            embed_dim: 4,
        };
        let sched = NoiseSchedule::linear(100, 1e-4, 0.12).unwrap();
        let tau = TimestepSubsequence::uniform(100, 10).unwrap();
        (EpsNetParams::init(4, dims).unwrap(), sched, tau)
    }

    #[test]
    fn generation_is_thread_count_independent() {
        let (net, sched, tau) = fixture();
        let a = generate_pairs(&net, &sched, &tau, 1100, 8, 1).unwrap();
        let b = generate_pairs(&net, &sched, &tau, 1100, 8, 3).unwrap();
        assert_eq!(write_pairs(&a), write_pairs(&b));
        assert_eq!(a.len(), 1100);
    }

    #[test]
    fn stored_pairs_are_reproducible_by_the_teacher() {
        let (net, sched, tau) = fixture();
        let ds = generate_pairs(&net, &sched, &tau, 600, 2, 1).unwrap();
        for i in [0, 1, 511, 512, 599] {
            let p = ds.pair(i);
            assert_eq!(p.x_t, prior_latent(2, i as u64, 2));
            let x = Tensor::new(vec![1, 2], p.x_t.clone()).unwrap();
            let x0 = ddim_sample(&net, &sched, &tau, &x, false).unwrap().x0;
            assert_eq!(x0.data(), &p.x0[..]);
        }
    }

    #[test]
    fn file_roundtrip_and_corruption() {
        let (net, sched, tau) = fixture();
        let ds = generate_pairs(&net, &sched, &tau, 20, 1, 1).unwrap();
        let bytes = write_pairs(&ds);
        assert_eq!(read_pairs(&bytes).unwrap(), ds);

        let mut flipped = bytes.clone();
        flipped[60] ^= 0x10;
        assert!(matches!(read_pairs(&flipped), Err(Error::Checksum { .. })));
        assert!(matches!(
            read_pairs(&bytes[..bytes.len() - 9]),
            Err(Error::Truncated { .. })
        ));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 3]);
        assert!(matches!(read_pairs(&extra), Err(Error::TrailingBytes { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(read_pairs(&magic), Err(Error::BadMagic { .. })));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(read_pairs(&version), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn source_check_detects_other_schedule_or_teacher() {
        let (net, sched, tau) = fixture();
        let ds = generate_pairs(&net, &sched, &tau, 4, 1, 1).unwrap();
        ds.check_source(&net, &sched).unwrap();
        let other = NoiseSchedule::linear(100, 1e-4, 0.13).unwrap();
        assert!(matches!(ds.check_source(&net, &other), Err(Error::ScheduleMismatch(_))));
        let net2 = EpsNetParams::init(5, net.dims()).unwrap();
        assert!(ds.check_source(&net2, &sched).is_err());
    }

    #[test]
    fn zero_count_rejected() {
        let (net, sched, tau) = fixture();
        assert!(generate_pairs(&net, &sched, &tau, 0, 1, 1).is_err());
    }
}
