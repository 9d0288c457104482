//! Synthetic 2-D densities used as ground truth.

use std::f64::consts::{PI, TAU};
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::write_file;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{normal, stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    GaussianMixture,
    SwissRoll,
    Checkerboard,
}

/// A toy density and sample count. `modes` and `radius` apply to the
/// mixture only; `sigma` is the mixture component scale and the swiss-roll
/// noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub n: usize,
    pub seed: u64,
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for ToySpec {
    /// The 8-mode ring used for evaluation.
    fn default() -> Self {
        Self {
            kind: ToyKind::GaussianMixture,
            n: 65_536,
            seed: 0,
            modes: 8,
            radius: 2.0,
            sigma: 0.1,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("toy dataset needs n >= 1"));
        }
        if self.modes == 0 {
            return Err(Error::invalid("mixture needs at least one mode"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid(format!("radius must be >= 0, got {}", self.radius)));
        }
        Ok(())
    }

    /// Mixture component means, equally spaced on the circle.
    pub fn mode_centers(&self) -> Vec<[f64; 2]> {
        (0..self.modes)
            .map(|j| {
                let a = TAU * j as f64 / self.modes as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    /// Same density, different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }
}

/// Point `i` and, for the mixture, its component index.
fn draw(spec: &ToySpec, i: u64) -> ([f64; 2], Option<usize>) {
    let mut rng = stream(spec.seed, Domain::Toy, i);
    match spec.kind {
        ToyKind::GaussianMixture => {
            let j = rng.random_range(0..spec.modes);
            let a = TAU * j as f64 / spec.modes as f64;
            let x = spec.radius * a.cos() + spec.sigma * normal(&mut rng);
            let y = spec.radius * a.sin() + spec.sigma * normal(&mut rng);
            ([x, y], Some(j))
        }
        ToyKind::SwissRoll => {
            let t = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
            let scale = 2.0 / (4.5 * PI);
            let x = scale * t * t.cos() + spec.sigma * normal(&mut rng);
            let y = scale * t * t.sin() + spec.sigma * normal(&mut rng);
            ([x, y], None)
        }
        ToyKind::Checkerboard => {
            let x = 4.0 * rng.random::<f64>() - 2.0;
            let band = 2.0 * rng.random_range(0..2) as f64;
            let y = rng.random::<f64>() - band + (x.floor().rem_euclid(2.0));
            ([x, y], None)
        }
    }
}

/// `n x 2` samples; point `i` comes from its own stream.
pub fn make_dataset(spec: &ToySpec) -> Result<Tensor> {
    Ok(make_labeled(spec)?.0)
}

/// Samples plus mixture component labels (empty for the other kinds).
pub fn make_labeled(spec: &ToySpec) -> Result<(Tensor, Vec<usize>)> {
    spec.validate()?;
    let mut data = Vec::with_capacity(2 * spec.n);
    let mut labels = Vec::new();
    for i in 0..spec.n {
        let (p, label) = draw(spec, i as u64);
        data.extend_from_slice(&p);
        labels.extend(label);
    }
    Ok((Tensor::new(vec![spec.n, 2], data)?, labels))
}

/// Root mean squared norm of the rows.
pub fn rms(points: &Tensor) -> f64 {
    let n = points.rows() as f64;
    (points.data().iter().map(|v| v * v).sum::<f64>() / n).sqrt()
}

/// Writes rows as CSV with header `x,y` (or `x0,x1,...` beyond two columns).
pub fn write_points_csv(path: &Path, points: &Tensor) -> Result<()> {
    let mut out = Vec::new();
    let header = if points.cols() == 2 {
        "x,y".to_string()
    } else {
        (0..points.cols())
            .map(|j| format!("x{j}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(out, "{header}").unwrap();
    for i in 0..points.rows() {
        let row: Vec<String> = points.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_mixture_collapses_to_origin() {
        let spec = ToySpec {
            modes: 1,
            radius: 0.0,
            sigma: 1e-9,
            n: 100,
            ..ToySpec::default()
        };
        let d = make_dataset(&spec).unwrap();
        assert!(d.data().iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn mixture_is_centered_and_bounded() {
        let spec = ToySpec {
            n: 50_000,
            ..ToySpec::default()
        };
        let d = make_dataset(&spec).unwrap();
        let n = d.rows() as f64;
        for c in 0..2 {
            let mean: f64 = (0..d.rows()).map(|i| d.row(i)[c]).sum::<f64>() / n;
            // per-coordinate std is about sqrt(2 + 0.01)
            assert!(mean.abs() < 4.0 * (2.01f64 / n).sqrt(), "{mean}");
        }
        let bound = 2.0 + 6.0 * spec.sigma;
        assert!(d.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = ToySpec {
            n: 1000,
            ..ToySpec::default()
        };
        assert_eq!(make_dataset(&spec).unwrap(), make_dataset(&spec).unwrap());
        assert_ne!(make_dataset(&spec).unwrap(), make_dataset(&spec.reseeded(1)).unwrap());
        // a prefix of a larger draw is the smaller draw
        let big = make_dataset(&spec.with_n(2000)).unwrap();
        assert_eq!(&big.data()[..2000], make_dataset(&spec).unwrap().data());
    }

    #[test]
    fn other_kinds_fit_the_box() {
        for kind in [ToyKind::SwissRoll, ToyKind::Checkerboard] {
            let spec = ToySpec {
                kind,
                n: 5000,
                sigma: 0.01,
                ..ToySpec::default()
            };
            let d = make_dataset(&spec).unwrap();
            assert!(d.data().iter().all(|v| v.abs() <= 2.1), "{kind:?}");
        }
    }

    #[test]
    fn checkerboard_occupies_alternating_cells() {
        let spec = ToySpec {
            kind: ToyKind::Checkerboard,
            n: 5000,
            ..ToySpec::default()
        };
        let d = make_dataset(&spec).unwrap();
        for i in 0..d.rows() {
            let [x, y] = [d.row(i)[0], d.row(i)[1]];
            let parity = (x.floor() + y.floor()).rem_euclid(2.0);
            assert_eq!(parity, 0.0, "({x}, {y})");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            ToySpec {
                n: 0,
                ..ToySpec::default()
            },
            ToySpec {
                modes: 0,
                ..ToySpec::default()
            },
            ToySpec {
                sigma: 0.0,
                ..ToySpec::default()
            },
        ] {
            assert!(make_dataset(&spec).is_err());
        }
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        let pts = Tensor::from_rows(&[[1.5, -2.0], [0.0, 0.25]]).unwrap();
        write_points_csv(&path, &pts).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "x,y\n1.5,-2\n0,0.25\n");
    }
}
