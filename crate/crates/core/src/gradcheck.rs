//! Central finite differences used to cross-check the differentiation
//! engine. Steps are absolute; parameters are O(1).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Taylor2;
use crate::dynamics::PhysicsParams;
use crate::error::Result;
use crate::models::{init_params, Model};
use crate::training::{loss_and_grad, sample_collocation, total_loss, TrainConfig};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs()).max(floor)
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference<F>(f: &mut F, x: &[f64], i: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut y = x.to_vec();
    y[i] = x[i] + h;
    let plus = f(&y)?;
    y[i] = x[i] - h;
    let minus = f(&y)?;
    Ok((plus - minus) / (2.0 * h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdReport {
    pub max_rel: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

impl FdReport {
    fn empty() -> Self {
        FdReport {
            max_rel: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            n_checked: 0,
        }
    }

    fn push(&mut self, index: usize, analytic: f64, numeric: f64, floor: f64) {
        let e = rel_err(analytic, numeric, floor);
        self.n_checked += 1;
        if e > self.max_rel || self.n_checked == 1 {
            *self = FdReport {
                max_rel: e.max(self.max_rel),
                worst_index: index,
                analytic,
                numeric,
                n_checked: self.n_checked,
            };
        }
    }
}

/// Compares `grad` with central differences of `f` on `coords`.
pub fn check_gradient<F>(f: &mut F, x: &[f64], grad: &[f64], coords: &[usize], h: f64, floor: f64) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut rep = FdReport::empty();
    for &i in coords {
        let fd = central_difference(f, x, i, h)?;
        rep.push(i, grad[i], fd, floor);
    }
    Ok(rep)
}

/// Central difference of a scalar function of time, Richardson-extrapolated
/// over steps `h` and `h / 2`.
pub fn richardson_derivative<F>(f: &mut F, t: f64, h: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut d = |h: f64| -> Result<f64> { Ok((f(t + h)? - f(t - h)?) / (2.0 * h)) };
    let coarse = d(h)?;
    let fine = d(0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Worst relative errors `(d1, d2)` over both model outputs at `t`: d1
/// against differences of values, d2 against differences of the engine's d1.
pub fn check_time_derivatives(model: &Model, params: &[f64], t: f64, h: f64) -> Result<(f64, f64)> {
    let (r, th) = model.eval(params, t)?;
    let mut worst = (0.0f64, 0.0f64);
    for (c, exact) in [(0usize, r), (1, th)] {
        let component = |s: f64| -> Result<Taylor2> {
            let (r, th) = model.eval(params, s)?;
            Ok(if c == 0 { r } else { th })
        };
        let d1 = richardson_derivative(&mut |s| component(s).map(|v| v.val), t, h)?;
        let d2 = richardson_derivative(&mut |s| component(s).map(|v| v.d1), t, h)?;
        worst.0 = worst.0.max(rel_err(exact.d1, d1, TIME_FLOOR));
        worst.1 = worst.1.max(rel_err(exact.d2, d2, TIME_FLOOR));
    }
    Ok(worst)
}

/// Absolute floor for time-derivative comparisons.
pub const TIME_FLOOR: f64 = 1e-10;

/// Perturbs `init_params` so that zero-initialized heads are exercised.
pub fn random_params(model: &Model, seed: u64, scale: f64) -> Vec<f64> {
    use rand::Rng;
    let mut p = init_params(model.trunk, seed).0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let end = model.trunk.layout().omega.unwrap_or(p.len());
    for v in &mut p[..end] {
        *v += scale * rng.random_range(-1.0..1.0);
    }
    p
}

/// Loss gradient against central differences on a 16-point batch. With
/// `max_coords` set, a seeded random subset of coordinates is checked.
pub fn check_loss_gradient(
    model: &Model,
    params: &[f64],
    physics: &PhysicsParams,
    cfg: &TrainConfig,
    seed: u64,
    max_coords: Option<usize>,
    h: f64,
) -> Result<FdReport> {
    let batch = sample_collocation(seed, 0, 16, physics.t_final);
    let mut grad = vec![0.0; params.len()];
    loss_and_grad(model, params, &batch, physics, cfg, &mut grad)?;
    let coords: Vec<usize> = match max_coords {
        Some(m) if m < params.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = sample(&mut rng, params.len(), m).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..params.len()).collect(),
    };
    let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let mut f = |p: &[f64]| total_loss(model, p, &batch, physics, cfg).map(|l| l.total);
    check_gradient(&mut f, params, &grad, &coords, h, GRAD_FLOOR_REL * scale)
}

/// Coordinates whose gradient is below this fraction of the largest one are
/// compared against that scale instead of their own magnitude.
pub const GRAD_FLOOR_REL: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact_up_to_roundoff() {
        let mut f = |x: &[f64]| Ok(x[0] * x[0] + 3.0 * x[1]);
        let x = [0.7, -1.0];
        let rep = check_gradient(&mut f, &x, &[1.4, 3.0], &[0, 1], 1e-4, 0.0).unwrap();
        assert!(rep.max_rel < 1e-10);
        assert_eq!(rep.n_checked, 2);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut f = |x: &[f64]| Ok(x[0].sin());
        let rep = check_gradient(&mut f, &[0.3], &[1.0], &[0], 1e-4, 0.0).unwrap();
        assert!(rep.max_rel > 1e-3);
    }

    #[test]
    fn extrapolated_difference_of_sine() {
        let mut f = |t: f64| Ok((2.0 * t).sin());
        let d1 = richardson_derivative(&mut f, 0.4, 1e-4).unwrap();
        assert!(rel_err(d1, 2.0 * 0.8f64.cos(), 0.0) < 1e-10);
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 1.0, 0.0), 0.0);
        assert_eq!(rel_err(1e-12, 0.0, 1e-6), 1e-6);
        assert_eq!(rel_err(2.0, 1.0, 0.0), 0.5);
    }
}
