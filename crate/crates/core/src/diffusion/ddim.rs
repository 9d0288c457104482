use std::io::Write;
use std::path::Path;

use super::schedule::{NoiseSchedule, TimestepSubsequence};
use crate::epsnet::EpsModel;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn combine(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// `x_t = sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps`.
pub fn forward_marginal(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t, 1)?;
    same_shape("forward_marginal", x0, eps)?;
    let (a, s) = (sched.sqrt_alpha(t), sched.sqrt_one_minus_alpha(t));
    Ok(combine(x0, eps, |x, e| a * x + s * e))
}

/// Estimate of `x0` implied by a noise prediction:
/// `sqrt(1 / alpha_t) (x_t - sqrt(1 - alpha_t) eps_hat)`.
pub fn predict_x0(x_t: &Tensor, eps_hat: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t, 1)?;
    same_shape("predict_x0", x_t, eps_hat)?;
    let inv = (1.0 / sched.alpha(t)).sqrt();
    let s = sched.sqrt_one_minus_alpha(t);
    Ok(combine(x_t, eps_hat, |x, e| inv * (x - s * e)))
}

/// Mean of the deterministic inference step
/// `q(x_{t-1} | x_t, x0)`: `sqrt(a_{t-1}) x0 + sqrt((1-a_{t-1})/(1-a_t)) (x_t - sqrt(a_t) x0)`.
pub fn posterior_mean(x_t: &Tensor, x0: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    if t < 2 {
        return Err(Error::invalid(
            "posterior mean is defined for t >= 2; the last step uses predict_x0",
        ));
    }
    sched.check_t(t, 2)?;
    same_shape("posterior_mean", x_t, x0)?;
    let (a_t, a_prev) = (sched.alpha(t), sched.alpha(t - 1));
    let c0 = a_prev.sqrt();
    let ct = ((1.0 - a_prev) / (1.0 - a_t)).sqrt();
    let sa = a_t.sqrt();
    Ok(combine(x_t, x0, |x, x0| c0 * x0 + ct * (x - sa * x0)))
}

fn check_step(t: usize, t_prev: usize, sched: &NoiseSchedule) -> Result<()> {
    sched.check_t(t, 1)?;
    if t_prev >= t {
        return Err(Error::invalid(format!(
            "DDIM step must move backwards in time: t = {t}, t_prev = {t_prev}"
        )));
    }
    Ok(())
}

/// One deterministic DDIM update from `t` to `t_prev`:
/// `sqrt(a_prev / a_t) (x_t - sqrt(1 - a_t) eps) + sqrt(1 - a_prev) eps`.
///
/// With `t_prev = 0` (`alpha_0 = 1`) this is exactly [`predict_x0`].
pub fn ddim_step(x_t: &Tensor, eps_hat: &Tensor, t: usize, t_prev: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    check_step(t, t_prev, sched)?;
    same_shape("ddim_step", x_t, eps_hat)?;
    let (a_t, a_prev) = (sched.alpha(t), sched.alpha(t_prev));
    let ratio = (a_prev / a_t).sqrt();
    let s_t = (1.0 - a_t).sqrt();
    let s_prev = (1.0 - a_prev).sqrt();
    Ok(combine(x_t, eps_hat, |x, e| ratio * (x - s_t * e) + s_prev * e))
}

/// The same update written in the rescaled form
/// `x_prev / sqrt(a_prev) = x_t / sqrt(a_t) - (sqrt((1-a_t)/a_t) - sqrt((1-a_prev)/a_prev)) eps`,
/// which reads as an Euler step of an ODE in `x / sqrt(a)`.
pub fn ddim_step_scaled_form(
    x_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    check_step(t, t_prev, sched)?;
    same_shape("ddim_step_scaled_form", x_t, eps_hat)?;
    let (a_t, a_prev) = (sched.alpha(t), sched.alpha(t_prev));
    let sigma_t = ((1.0 - a_t) / a_t).sqrt();
    let sigma_prev = ((1.0 - a_prev) / a_prev).sqrt();
    let (sa_t, sa_prev) = (a_t.sqrt(), a_prev.sqrt());
    Ok(combine(x_t, eps_hat, |x, e| {
        sa_prev * (x / sa_t - (sigma_t - sigma_prev) * e)
    }))
}

/// Output of [`ddim_sample`].
#[derive(Debug, Clone)]
pub struct Rollout {
    pub x0: Tensor,
    /// `(t, x_t)` from `t = T` down to `t = 0`, if requested.
    pub trajectory: Option<Vec<(usize, Tensor)>>,
}

/// Runs the deterministic sampler from `x_T` down the subsequence `tau`,
/// finishing with a step to `alpha_0 = 1`. Evaluates `net` exactly
/// `tau.len()` times.
pub fn ddim_sample<M: EpsModel + ?Sized>(
    net: &M,
    sched: &NoiseSchedule,
    tau: &TimestepSubsequence,
    x_t: &Tensor,
    keep_trajectory: bool,
) -> Result<Rollout> {
    tau.check_against(sched)?;
    if x_t.shape().len() != 2 || x_t.cols() != net.data_dim() {
        return Err(Error::Shape {
            op: "ddim_sample",
            lhs: x_t.shape().to_vec(),
            rhs: vec![x_t.shape()[0], net.data_dim()],
        });
    }
    let steps = tau.as_slice();
    let mut x = x_t.clone();
    let mut trajectory = keep_trajectory.then(|| vec![(tau.last(), x.clone())]);
    for k in (0..steps.len()).rev() {
        let t = steps[k];
        let t_prev = if k == 0 { 0 } else { steps[k - 1] };
        let eps = net.predict_eps(&x, t)?;
        x = ddim_step(&x, &eps, t, t_prev, sched)?;
        if let Some(tr) = trajectory.as_mut() {
            tr.push((t_prev, x.clone()));
        }
    }
    Ok(Rollout { x0: x, trajectory })
}

/// Trajectory dump: one row per (timestep, sample) with columns `t,x0,x1,...`.
pub fn write_trajectory_csv(path: &Path, trajectory: &[(usize, Tensor)]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let dim = trajectory.first().map(|(_, x)| x.cols()).unwrap_or(0);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..dim).map(|i| format!("x{i}")))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (t, x) in trajectory {
        for r in 0..x.rows() {
            let row: Vec<String> = x.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{t},{}", row.join(",")).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normals, stream, Domain};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-4, 0.12).unwrap()
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::from_rows(&[v]).unwrap()
    }

    struct Zero(usize);
    impl EpsModel for Zero {
        fn data_dim(&self) -> usize {
            self.0
        }
        fn predict_eps(&self, x: &Tensor, _t: usize) -> Result<Tensor> {
            Ok(Tensor::zeros(x.shape()))
        }
    }

    #[test]
    fn marginal_degenerate_cases() {
        let s = sched();
        let x0 = row(&[1.5, -0.5]);
        let eps = row(&[0.3, 2.0]);
        let zero = Tensor::zeros(&[1, 2]);
        let a = forward_marginal(&x0, 30, &zero, &s).unwrap();
        assert_eq!(a.data(), &[1.5 * s.sqrt_alpha(30), -0.5 * s.sqrt_alpha(30)]);
        let b = forward_marginal(&zero, 30, &eps, &s).unwrap();
        let k = s.sqrt_one_minus_alpha(30);
        assert_eq!(b.data(), &[0.3 * k, 2.0 * k]);
        assert!(forward_marginal(&x0, 0, &eps, &s).is_err());
        assert!(forward_marginal(&x0, 30, &Tensor::zeros(&[2, 1]), &s).is_err());
    }

    #[test]
    fn predict_x0_inverts_marginal() {
        let s = sched();
        let x0 = row(&[0.7, -1.9]);
        let eps = row(&[-0.4, 1.1]);
        let zero = Tensor::zeros(&[1, 2]);
        let p = predict_x0(&x0, &zero, 10, &s).unwrap();
        assert!((p.data()[0] - 0.7 / s.sqrt_alpha(10)).abs() < 1e-14);
        for t in [1, 50, 100] {
            let xt = forward_marginal(&x0, t, &eps, &s).unwrap();
            let back = predict_x0(&xt, &eps, t, &s).unwrap();
            assert!(back.max_abs_diff(&x0) < 1e-12);
        }
    }

    #[test]
    fn posterior_mean_degenerate_cases() {
        let s = sched();
        let x0 = row(&[1.0, 2.0]);
        let xt = row(&[s.sqrt_alpha(40), 2.0 * s.sqrt_alpha(40)]);
        let mu = posterior_mean(&xt, &x0, 40, &s).unwrap();
        assert!(mu.max_abs_diff(&row(&[s.sqrt_alpha(39), 2.0 * s.sqrt_alpha(39)])) < 1e-15);
        let zero = Tensor::zeros(&[1, 2]);
        let xt = row(&[0.4, -3.0]);
        let mu = posterior_mean(&xt, &zero, 40, &s).unwrap();
        let c = ((1.0 - s.alpha(39)) / (1.0 - s.alpha(40))).sqrt();
        assert!(mu.max_abs_diff(&row(&[0.4 * c, -3.0 * c])) < 1e-15);
        assert!(posterior_mean(&xt, &zero, 1, &s).is_err());
    }

    #[test]
    fn step_degenerate_cases() {
        let s = sched();
        let xt = row(&[0.9, -0.2]);
        let zero = Tensor::zeros(&[1, 2]);
        let out = ddim_step(&xt, &zero, 60, 20, &s).unwrap();
        let r = (s.alpha(20) / s.alpha(60)).sqrt();
        assert!(out.max_abs_diff(&row(&[0.9 * r, -0.2 * r])) < 1e-15);

        let (x0, eps) = (row(&[1.2, -0.6]), row(&[0.5, 0.25]));
        let xt = forward_marginal(&x0, 60, &eps, &s).unwrap();
        let stepped = ddim_step(&xt, &eps, 60, 20, &s).unwrap();
        let expected = forward_marginal(&x0, 20, &eps, &s).unwrap();
        assert!(stepped.max_abs_diff(&expected) < 1e-14);

        assert!(ddim_step(&xt, &eps, 20, 20, &s).is_err());
        assert!(ddim_step(&xt, &eps, 20, 30, &s).is_err());
    }

    #[test]
    fn final_step_is_exactly_predict_x0() {
        let s = sched();
        let mut rng = stream(3, Domain::Eval, 0);
        for t in [1, 2, 37, 100] {
            let xt = Tensor::new(vec![4, 2], normals(&mut rng, 8)).unwrap();
            let e = Tensor::new(vec![4, 2], normals(&mut rng, 8)).unwrap();
            let a = ddim_step(&xt, &e, t, 0, &s).unwrap();
            let b = predict_x0(&xt, &e, t, &s).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_step_zero_net_divides_by_sqrt_alpha() {
        let s = sched();
        let tau = TimestepSubsequence::uniform(100, 1).unwrap();
        let xt = row(&[0.3, -1.2]);
        let out = ddim_sample(&Zero(2), &s, &tau, &xt, false).unwrap();
        let k = s.sqrt_alpha(100);
        assert!(out.x0.max_abs_diff(&row(&[0.3 / k, -1.2 / k])) < 1e-13);
    }

    #[test]
    fn sample_rejects_mismatched_tau_and_dims() {
        let s = sched();
        let tau = TimestepSubsequence::uniform(50, 5).unwrap();
        assert!(ddim_sample(&Zero(2), &s, &tau, &row(&[0.0, 0.0]), false).is_err());
        let tau = TimestepSubsequence::new(vec![10, 120]).unwrap();
        assert!(ddim_sample(&Zero(2), &s, &tau, &row(&[0.0, 0.0]), false).is_err());
        let tau = TimestepSubsequence::uniform(100, 5).unwrap();
        assert!(ddim_sample(&Zero(3), &s, &tau, &row(&[0.0, 0.0]), false).is_err());
    }

    #[test]
    fn trajectory_records_every_hop() {
        let s = sched();
        let tau = TimestepSubsequence::uniform(100, 4).unwrap();
        let out = ddim_sample(&Zero(2), &s, &tau, &row(&[1.0, 1.0]), true).unwrap();
        let ts: Vec<usize> = out.trajectory.as_ref().unwrap().iter().map(|(t, _)| *t).collect();
        assert_eq!(ts, vec![100, 75, 50, 25, 0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&path, out.trajectory.as_ref().unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x0,x1\n100,1,1\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
