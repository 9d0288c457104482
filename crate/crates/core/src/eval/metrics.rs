use std::cmp::Ordering;

use rayon::prelude::*;

use super::generator::{Generator, StudentSampler, TeacherSampler};
use crate::diffusion::TimestepSubsequence;
use crate::distill::StudentHead;
use crate::epsnet::Checkpoint;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{normals, stream, Domain};

const GAP_CHUNK: usize = 1024;

/// Statistics of `||F_student(x_T) - F_teacher(x_T)||^2` over fresh latents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapStats {
    pub mean: f64,
    pub max: f64,
    /// `sqrt(mean)`
    pub rms: f64,
}

/// `n` prior latents; row `i` comes from its own stream.
pub fn gap_latents(seed: u64, n: usize, dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        data.extend(normals(&mut stream(seed, Domain::Gap, i as u64), dim));
    }
    Tensor::new(vec![n, dim], data)
}

pub fn distill_gap(
    student: &Checkpoint,
    teacher: &Checkpoint,
    tau: &TimestepSubsequence,
    head: StudentHead,
    n: usize,
    seed: u64,
) -> Result<GapStats> {
    student.check_compatible(teacher)?;
    tau.check_against(&teacher.schedule)?;
    if n == 0 {
        return Err(Error::invalid("distill_gap needs n >= 1"));
    }
    let s = StudentSampler {
        net: &student.params,
        sched: &student.schedule,
        head,
    };
    let t = TeacherSampler {
        net: &teacher.params,
        sched: &teacher.schedule,
        tau,
    };
    let d = s.data_dim();
    let latents = gap_latents(seed, n, d)?;
    let starts: Vec<usize> = (0..n).step_by(GAP_CHUNK).collect();
    let per_chunk = starts
        .par_iter()
        .map(|&start| {
            let end = (start + GAP_CHUNK).min(n);
            let x = Tensor::new(vec![end - start, d], latents.data()[start * d..end * d].to_vec())?;
            let a = s.generate(&x)?;
            let b = t.generate(&x)?;
            Ok((0..end - start)
                .map(|i| a.row(i).iter().zip(b.row(i)).map(|(p, q)| (p - q) * (p - q)).sum())
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let errs: Vec<f64> = per_chunk.into_iter().flatten().collect();
    if !errs.iter().all(|e| e.is_finite()) {
        return Err(Error::NumericalAbort {
            step: 0,
            what: "non-finite distill gap".into(),
        });
    }
    let mean = errs.iter().sum::<f64>() / n as f64;
    let max = errs.iter().copied().fold(0.0, f64::max);
    Ok(GapStats {
        mean,
        max,
        rms: mean.sqrt(),
    })
}

fn check_samples(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Rows sorted lexicographically by value, so sums below do not depend on
/// input order.
fn sorted_rows(t: &Tensor) -> Vec<&[f64]> {
    let mut rows: Vec<&[f64]> = (0..t.rows()).map(|i| t.row(i)).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    rows
}

fn mean_pairwise(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let row_sums: Vec<f64> = a
        .par_iter()
        .map(|x| b.iter().map(|y| dist(x, y)).sum::<f64>())
        .collect();
    row_sums.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

/// `2 E||a - b|| - E||a - a'|| - E||b - b'||` over all pairs, the diagonal
/// included. Exactly zero for equal multisets and exactly symmetric.
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_samples("energy_distance", a, b)?;
    let (ra, rb) = (sorted_rows(a), sorted_rows(b));
    // the cross term sums in one canonical orientation
    let ab_order = (ra.len(), &ra).partial_cmp(&(rb.len(), &rb)) != Some(Ordering::Greater);
    let (first, second) = if ab_order { (&ra, &rb) } else { (&rb, &ra) };
    let cross = mean_pairwise(first, second);
    let within = mean_pairwise(&ra, &ra) + mean_pairwise(&rb, &rb);
    Ok((2.0 * cross - within).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistKl {
    pub kl: f64,
    /// Points of each sample that fell outside the range and were clamped.
    pub clamped_a: usize,
    pub clamped_b: usize,
}

fn histogram(t: &Tensor, bins: usize, lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let mut counts = vec![0.0; bins * bins];
    let mut clamped = 0;
    let width = (hi - lo) / bins as f64;
    let cell = |v: f64, out: &mut bool| -> usize {
        if !(lo..hi).contains(&v) {
            *out = true;
        }
        (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
    };
    for i in 0..t.rows() {
        let r = t.row(i);
        let mut out = false;
        let (cx, cy) = (cell(r[0], &mut out), cell(r[1], &mut out));
        clamped += out as usize;
        counts[cx * bins + cy] += 1.0;
    }
    (counts, clamped)
}

/// `KL(P_a || P_b)` between 2-D histograms on `[lo, hi)^2` with `bins`
/// cells per axis and one pseudo-count added to every cell.
pub fn hist_kl(a: &Tensor, b: &Tensor, bins: usize, lo: f64, hi: f64) -> Result<HistKl> {
    check_samples("hist_kl", a, b)?;
    if a.cols() != 2 {
        return Err(Error::invalid("hist_kl is defined for 2-D samples"));
    }
    if bins < 2 || !(hi > lo) {
        return Err(Error::invalid(format!(
            "hist_kl needs bins >= 2 and lo < hi, got {bins}, [{lo}, {hi})"
        )));
    }
    let (ca, clamped_a) = histogram(a, bins, lo, hi);
    let (cb, clamped_b) = histogram(b, bins, lo, hi);
    let cells = (bins * bins) as f64;
    let (na, nb) = (a.rows() as f64 + cells, b.rows() as f64 + cells);
    let kl = ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| {
            let p = (x + 1.0) / na;
            let q = (y + 1.0) / nb;
            p * (p / q).ln()
        })
        .sum::<f64>()
        .max(0.0);
    Ok(HistKl {
        kl,
        clamped_a,
        clamped_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Exact `k` nearest training rows for every sample, nearest first; ties
/// go to the lower index.
pub fn nearest_neighbors(samples: &Tensor, train: &Tensor, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    check_samples("nearest_neighbors", samples, train)?;
    if k == 0 || k > train.rows() {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {}]", train.rows())));
    }
    let queries: Vec<&[f64]> = (0..samples.rows()).map(|i| samples.row(i)).collect();
    Ok(queries
        .par_iter()
        .map(|q| {
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for j in 0..train.rows() {
                let d2: f64 = q.iter().zip(train.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                if best.len() == k && d2 >= best[k - 1].0 {
                    continue;
                }
                let pos = best.partition_point(|&(b, _)| b <= d2);
                best.insert(pos, (d2, j));
                best.truncate(k);
            }
            best.into_iter()
                .map(|(d2, index)| Neighbor {
                    index,
                    distance: d2.sqrt(),
                })
                .collect()
        })
        .collect())
}

/// Mean distance from each sample to its nearest training row.
pub fn mean_nn_distance(samples: &Tensor, train: &Tensor) -> Result<f64> {
    let nn = nearest_neighbors(samples, train, 1)?;
    Ok(nn.iter().map(|v| v[0].distance).sum::<f64>() / nn.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::NoiseSchedule;
    use crate::epsnet::{EpsNetParams, NetDims};

    fn pts(rows: &[[f64; 2]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn random(seed: u64, n: usize) -> Tensor {
        Tensor::new(vec![n, 2], normals(&mut stream(seed, Domain::Eval, 0), 2 * n)).unwrap()
    }

    #[test]
    fn energy_distance_basics() {
        let a = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert_eq!(energy_distance(&a, &b).unwrap(), 2.0);

        let x = random(1, 300);
        let y = random(2, 200);
        assert_eq!(energy_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(energy_distance(&x, &y).unwrap(), energy_distance(&y, &x).unwrap());
        assert!(energy_distance(&x, &y).unwrap() >= 0.0);

        // same multiset in another order
        let mut rows: Vec<[f64; 2]> = (0..x.rows()).map(|i| [x.row(i)[0], x.row(i)[1]]).collect();
        rows.reverse();
        assert_eq!(energy_distance(&x, &pts(&rows)).unwrap(), 0.0);
    }

    #[test]
    fn energy_distance_rejects_dim_mismatch() {
        let a = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        assert!(energy_distance(&a, &random(1, 3)).is_err());
    }

    #[test]
    fn hist_kl_closed_form_for_disjoint_cells() {
        for n in [1usize, 7, 100] {
            let a = pts(&vec![[-0.5, -0.5]; n]);
            let b = pts(&vec![[0.5, 0.5]; n]);
            let h = hist_kl(&a, &b, 2, -1.0, 1.0).unwrap();
            let nf = n as f64;
            let expected = nf / (nf + 4.0) * (nf + 1.0).ln();
            assert!((h.kl - expected).abs() < 1e-14, "{n}: {} vs {expected}", h.kl);
        }
        let x = random(3, 500);
        assert_eq!(hist_kl(&x, &x, 16, -3.0, 3.0).unwrap().kl, 0.0);
    }

    #[test]
    fn hist_kl_counts_clamped_points() {
        let a = pts(&[[5.0, 0.0], [0.0, 0.0], [-9.0, 9.0]]);
        let b = pts(&[[0.0, 0.0]]);
        let h = hist_kl(&a, &b, 4, -1.0, 1.0).unwrap();
        assert_eq!((h.clamped_a, h.clamped_b), (2, 0));
        assert!(h.kl >= 0.0);
        assert!(hist_kl(&a, &b, 1, -1.0, 1.0).is_err());
    }

    #[test]
    fn nearest_neighbor_order_and_ties() {
        let train = pts(&[[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [3.0, 0.0]]);
        let q = pts(&[[1.0, 0.0], [0.0, 0.0]]);
        let nn = nearest_neighbors(&q, &train, 4).unwrap();
        assert_eq!(
            nn[0][0],
            Neighbor {
                index: 1,
                distance: 0.0
            }
        );
        let order: Vec<usize> = nn[1].iter().map(|n| n.index).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
        assert!(nearest_neighbors(&q, &train, 5).is_err());
        assert!((mean_nn_distance(&pts(&[[0.5, 0.0]]), &train).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_step_teacher_gap_is_zero() {
        let sched = NoiseSchedule::linear(100, 1e-4, 0.12).unwrap();
        let dims = NetDims {
            data_dim: 2,
            hidden: 8,
            depth: 2,
            embed_dim: 4,
        };
        let ck = Checkpoint {
            params: EpsNetParams::init(1, dims).unwrap(),
            schedule: sched,
        };
        let tau = TimestepSubsequence::new(vec![100]).unwrap();
        let g = distill_gap(&ck, &ck, &tau, StudentHead::FTheta, 2500, 4).unwrap();
        assert_eq!((g.mean, g.max), (0.0, 0.0));
        let tau10 = TimestepSubsequence::uniform(100, 10).unwrap();
        let g10 = distill_gap(&ck, &ck, &tau10, StudentHead::FTheta, 2500, 4).unwrap();
        assert!(g10.mean > 0.0 && g10.max >= g10.mean);
    }
}
