use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Param, Tensor};
use super::NumError;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn check_step(h: f64) -> Result<(), NumError> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(NumError::Config(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    Ok(())
}

fn eval_scalar(f: &impl Fn(&Tensor<f64>) -> Result<Tensor<f64>, NumError>, x: &Tensor<f64>) -> Result<f64, NumError> {
    let y = f(x)?.item()?;
    if !y.is_finite() {
        return Err(NumError::NonFinite("grad_check objective".into()));
    }
    Ok(y)
}

/// Checks `∂f/∂x` from backward against `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` on every
/// coordinate. Relative error uses a `max(1, |analytic|, |numeric|)` denominator.
pub fn grad_check(
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>, NumError>,
    x: &Tensor<f64>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, NumError> {
    check_step(h)?;
    let leaf = x.with_grad();
    let y = f(&leaf)?;
    if !y.item()?.is_finite() {
        return Err(NumError::NonFinite("grad_check objective".into()));
    }
    y.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    let mut max_err = 0f64;
    let mut probe = x.to_vec();
    for i in 0..x.numel() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = eval_scalar(&f, &Tensor::new(probe.clone(), x.shape())?)?;
        probe[i] = orig - h;
        let fm = eval_scalar(&f, &Tensor::new(probe.clone(), x.shape())?)?;
        probe[i] = orig;
        max_err = max_err.max(rel_error(analytic[i], (fp - fm) / (2.0 * h)));
    }
    Ok(GradCheckReport { passed: max_err <= tol, max_rel_error: max_err, coords_checked: x.numel() })
}

/// Same check against model parameters. `f` rebuilds the graph from the
/// current parameter values; up to `max_coords` coordinates per parameter
/// are probed (chosen with `seed`).
pub fn grad_check_params(
    f: impl Fn() -> Result<Tensor<f64>, NumError>,
    params: &[Param<f64>],
    h: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, NumError> {
    check_step(h)?;
    params.iter().for_each(|p| p.zero_grad());
    let y = f()?;
    if !y.item()?.is_finite() {
        return Err(NumError::NonFinite("grad_check objective".into()));
    }
    y.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0f64;
    let mut checked = 0;
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.get().numel()]);
        let base = p.get().to_vec();
        let n = base.len();
        let coords: Vec<usize> = if n <= max_coords { (0..n).collect() } else { sample(&mut rng, n, max_coords).into_vec() };
        for i in coords {
            let mut probe = base.clone();
            probe[i] = base[i] + h;
            p.set_data(probe.clone())?;
            let fp = f()?.item()?;
            probe[i] = base[i] - h;
            p.set_data(probe)?;
            let fm = f()?.item()?;
            if !fp.is_finite() || !fm.is_finite() {
                p.set_data(base)?;
                return Err(NumError::NonFinite("grad_check objective".into()));
            }
            max_err = max_err.max(rel_error(analytic[i], (fp - fm) / (2.0 * h)));
            checked += 1;
        }
        p.set_data(base)?;
    }
    Ok(GradCheckReport { passed: max_err <= tol, max_rel_error: max_err, coords_checked: checked })
}
