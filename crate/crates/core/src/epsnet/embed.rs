use crate::error::{Error, Result};

/// Sinusoidal embedding `[sin(t w_k)..., cos(t w_k)...]` with
/// `w_k = 10000^(-2k/dim)`, `k = 0..dim/2`.
pub fn time_embed(t: usize, total: usize, dim: usize) -> Result<Vec<f64>> {
    if t < 1 || t > total {
        return Err(Error::invalid(format!("timestep {t} outside [1, {total}]")));
    }
    sinusoid(t as f64, dim)
}

pub(crate) fn sinusoid(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half).map(|k| 10000f64.powf(-2.0 * k as f64 / dim as f64)).collect();
    let mut out = Vec::with_capacity(dim);
    out.extend(freqs.iter().map(|w| (t * w).sin()));
    out.extend(freqs.iter().map(|w| (t * w).cos()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_gives_sines_zero_cosines_one() {
        let e = sinusoid(0.0, 8).unwrap();
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
    }

    #[test]
    fn four_dim_direct_evaluation() {
        let e = time_embed(1, 100, 4).unwrap();
        let expected = [1f64.sin(), 0.01f64.sin(), 1f64.cos(), 0.01f64.cos()];
        for (a, b) in e.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn components_bounded() {
        for t in 1..=100 {
            assert!(time_embed(t, 100, 32).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn rejects_odd_dim_and_out_of_range_t() {
        assert!(time_embed(1, 10, 3).is_err());
        assert!(time_embed(0, 10, 4).is_err());
        assert!(time_embed(11, 10, 4).is_err());
    }
}
