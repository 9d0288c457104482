use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::generator::Generator;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{normals, stream, Domain};

/// Each timed run must span this many timer ticks.
const MIN_TICKS: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub label: String,
    pub evals_per_sample: usize,
    pub n: usize,
    /// Median over repetitions.
    pub seconds: f64,
    pub seconds_per_1e4: f64,
}

/// Smallest observable nonzero difference between two clock reads.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Times each generator on the same `n` latents on the calling thread: one
/// discarded warm-up pass, then the median of `repetitions` timed passes.
pub fn bench_sampling(
    generators: &[(&str, &dyn Generator)],
    n: usize,
    repetitions: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if n < 1000 {
        return Err(Error::invalid(format!("benchmark needs n >= 1000, got {n}")));
    }
    if repetitions == 0 {
        return Err(Error::invalid("benchmark needs at least one repetition"));
    }
    let Some((_, first)) = generators.first() else {
        return Ok(Vec::new());
    };
    let d = first.data_dim();
    let latents = Tensor::new(vec![n, d], normals(&mut stream(seed, Domain::Bench, 0), n * d))?;
    let floor = timer_resolution() * MIN_TICKS;
    let mut rows = Vec::with_capacity(generators.len());
    for (label, g) in generators {
        std::hint::black_box(g.generate(&latents)?);
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            std::hint::black_box(g.generate(&latents)?);
            times.push(start.elapsed());
        }
        times.sort();
        if times[0] < floor {
            return Err(Error::invalid(format!(
                "{label}: {:?} per run is under {MIN_TICKS} timer ticks; raise n",
                times[0]
            )));
        }
        let seconds = if repetitions % 2 == 1 {
            times[repetitions / 2].as_secs_f64()
        } else {
            0.5 * (times[repetitions / 2 - 1] + times[repetitions / 2]).as_secs_f64()
        };
        rows.push(BenchRow {
            label: label.to_string(),
            evals_per_sample: g.evals_per_sample(),
            n,
            seconds,
            seconds_per_1e4: seconds * 1e4 / n as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Sleepy;

    impl Generator for Sleepy {
        fn data_dim(&self) -> usize {
            2
        }

        fn evals_per_sample(&self) -> usize {
            3
        }

        fn generate(&self, x: &Tensor) -> Result<Tensor> {
            std::thread::sleep(Duration::from_millis(2));
            Ok(x.clone())
        }
    }

    #[test]
    fn rows_report_counts_and_scaled_time() {
        let rows = bench_sampling(&[("s", &Sleepy)], 2000, 3, 1).unwrap();
        assert_eq!(rows[0].evals_per_sample, 3);
        assert!(rows[0].seconds >= 0.002);
        assert!((rows[0].seconds_per_1e4 - 5.0 * rows[0].seconds).abs() < 1e-12);
    }

    #[test]
    fn small_n_rejected() {
        assert!(bench_sampling(&[("s", &Sleepy)], 999, 3, 1).is_err());
        assert!(bench_sampling(&[("s", &Sleepy)], 1000, 0, 1).is_err());
    }
}
