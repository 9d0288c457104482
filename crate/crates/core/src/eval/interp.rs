use std::io::Write as _;
use std::path::Path;

use super::generator::Generator;
use crate::binio::write_file;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

const LINEAR_BELOW: f64 = 1e-6;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spherical interpolation along the great circle from `a` (t = 0) to `b` (t = 1).
pub fn slerp(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("slerp endpoints must be nonempty and of equal length"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("slerp parameter {t} outside [0, 1]")));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::invalid("slerp endpoints must be finite and nonzero"));
    }
    // angle via half-chord, accurate near 0 and pi
    let (mut chord, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        chord += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    let omega = 2.0 * chord.sqrt().atan2(sum.sqrt());
    if omega > std::f64::consts::PI - LINEAR_BELOW {
        return Err(Error::invalid("slerp endpoints are antiparallel"));
    }
    if t == 0.0 {
        return Ok(a.to_vec());
    }
    if t == 1.0 {
        return Ok(b.to_vec());
    }
    if omega < LINEAR_BELOW {
        return Ok(a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect());
    }
    let s = omega.sin();
    let (wa, wb) = (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s);
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}

/// Decodes `slerp(a, b, i / (n_steps - 1))` for `i = 0..n_steps` in one batch.
/// Returns the latents and the decoded points.
pub fn interpolation_grid<G: Generator + ?Sized>(
    generator: &G,
    a: &[f64],
    b: &[f64],
    n_steps: usize,
) -> Result<(Tensor, Tensor)> {
    if n_steps < 2 {
        return Err(Error::invalid("interpolation needs n_steps >= 2"));
    }
    let mut lat = Vec::with_capacity(n_steps * a.len());
    for i in 0..n_steps {
        let t = i as f64 / (n_steps - 1) as f64;
        lat.extend(slerp(a, b, t)?);
    }
    let lat = Tensor::new(vec![n_steps, a.len()], lat)?;
    let out = generator.generate(&lat)?;
    Ok((lat, out))
}

/// Largest over median distance between consecutive decoded points.
pub fn hop_ratio(points: &Tensor) -> Result<f64> {
    if points.rows() < 2 {
        return Err(Error::invalid("hop ratio needs at least two points"));
    }
    let mut hops: Vec<f64> = (1..points.rows())
        .map(|i| {
            norm(
                &points
                    .row(i)
                    .iter()
                    .zip(points.row(i - 1))
                    .map(|(x, y)| x - y)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    hops.sort_by(f64::total_cmp);
    let m = hops.len();
    let median = if m % 2 == 1 {
        hops[m / 2]
    } else {
        0.5 * (hops[m / 2 - 1] + hops[m / 2])
    };
    let max = hops[m - 1];
    if median == 0.0 {
        return Ok(if max == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok(max / median)
}

/// CSV with columns `i,t,z0,z1,...,x0,x1,...` (latent then decoded point).
pub fn write_grid_csv(path: &Path, latents: &Tensor, points: &Tensor) -> Result<()> {
    let n = latents.rows();
    let mut out = Vec::new();
    let mut header = vec!["i".to_string(), "t".to_string()];
    header.extend((0..latents.cols()).map(|j| format!("z{j}")));
    header.extend((0..points.cols()).map(|j| format!("x{j}")));
    writeln!(out, "{}", header.join(",")).unwrap();
    for i in 0..n {
        let t = i as f64 / (n - 1).max(1) as f64;
        let mut fields = vec![i.to_string(), t.to_string()];
        fields.extend(latents.row(i).iter().map(f64::to_string));
        fields.extend(points.row(i).iter().map(f64::to_string));
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normals, stream, Domain};

    #[test]
    fn endpoints_are_exact() {
        let a = [0.3, -1.2, 2.0];
        let b = [1.0, 0.5, -0.1];
        assert_eq!(slerp(&a, &b, 0.0).unwrap(), a);
        assert_eq!(slerp(&a, &b, 1.0).unwrap(), b);
    }

    #[test]
    fn orthogonal_midpoint() {
        let m = slerp(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m[0] - r).abs() < 1e-15 && (m[1] - r).abs() < 1e-15);
    }

    #[test]
    fn unit_norm_preserved() {
        let mut rng = stream(1, Domain::Interp, 0);
        for _ in 0..200 {
            let mut a = normals(&mut rng, 3);
            let mut b = normals(&mut rng, 3);
            let (na, nb) = (norm(&a), norm(&b));
            a.iter_mut().for_each(|v| *v /= na);
            b.iter_mut().for_each(|v| *v /= nb);
            for k in 0..=20 {
                let p = slerp(&a, &b, k as f64 / 20.0).unwrap();
                assert!((norm(&p) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(slerp(&[1.0, 0.0], &[-1.0, 0.0], 0.5).is_err());
        assert!(slerp(&[0.0, 0.0], &[1.0, 0.0], 0.5).is_err());
        assert!(slerp(&[1.0], &[1.0, 0.0], 0.5).is_err());
        let p = slerp(&[1.0, 0.0], &[1.0, 1e-9], 0.5).unwrap();
        assert_eq!(p, vec![1.0, 0.5e-9]);
    }

    #[test]
    fn hop_ratio_of_even_steps_is_one() {
        let pts = Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]).unwrap();
        assert_eq!(hop_ratio(&pts).unwrap(), 1.0);
        let jump = Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [12.0, 0.0]]).unwrap();
        assert_eq!(hop_ratio(&jump).unwrap(), 10.0);
    }
}
