use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
///
/// `f` must be deterministic; this is checked by evaluating it twice at the
/// unperturbed point and comparing bit patterns.
pub fn finite_difference_gradient<F>(f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let base = f(params)?;
    if base.to_bits() != f(params)?.to_bits() {
        return Err(Error::invalid("function is not deterministic"));
    }
    let mut work: Vec<Tensor> = params.iter().map(Tensor::detach).collect();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..work.len() {
        let mut grad = vec![0.0; work[p].numel()];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = f(&work)?;
            work[p].data_mut()[i] = orig - h;
            let minus = f(&work)?;
            work[p].data_mut()[i] = orig;
            *g = (plus - minus) / (2.0 * h);
        }
        out.push(Tensor::new(work[p].shape().to_vec(), grad)?);
    }
    Ok(out)
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn square_at_three() {
        let p = [Tensor::scalar(3.0)];
        let g = finite_difference_gradient(|p| Ok(p[0].data()[0].powi(2)), &p, 1e-5).unwrap();
        assert!((g[0].data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function() {
        let p = [Tensor::vector(vec![1.0, -4.0, 2.5]).unwrap()];
        let g = finite_difference_gradient(|_| Ok(7.25), &p, 1e-5).unwrap();
        assert!(g[0].data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn rejects_nondeterministic_function() {
        let calls = Cell::new(0u32);
        let p = [Tensor::scalar(1.0)];
        let f = |_: &[Tensor]| {
            calls.set(calls.get() + 1);
            Ok(calls.get() as f64)
        };
        assert!(finite_difference_gradient(f, &p, 1e-5).is_err());
        assert!(finite_difference_gradient(|_| Ok(0.0), &p, 0.0).is_err());
    }
}
