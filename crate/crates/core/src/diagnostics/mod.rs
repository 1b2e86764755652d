//! Residual Jacobians, the residual tangent kernel, its spectrum, the
//! gate-scaling identity and linearized residual gradient flow.

mod jacobi;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use jacobi::{jacobi_eigen, SymmetricEigen, JACOBI_TOL};

use crate::autodiff::jacobian_rows;
use crate::dynamics::PhysicsParams;
use crate::error::{Error, Result};
use crate::models::{GatedOutputs, Model, TrunkOutputs};
use crate::training::ResidualProgram;

/// Which Jacobian the kernel is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// Rows are `∂R_r/∂θ, ∂R_θ/∂θ`.
    #[default]
    Residual,
    /// Rows are `∂r/∂θ, ∂θ/∂θ` of the model outputs.
    Output,
}

#[derive(Debug, Clone)]
pub struct KernelReport {
    pub mode: KernelMode,
    pub t_points: Vec<f64>,
    /// Row `i * 2 + c` is channel `c` at `t_points[i]`.
    pub jacobian: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub condition_number: f64,
    pub effective_rank: f64,
}

/// `exp` of the Shannon entropy of the normalized non-negative spectrum.
pub fn effective_rank(eigenvalues: &[f64]) -> f64 {
    let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = eigenvalues
        .iter()
        .map(|l| l.max(0.0) / total)
        .filter(|p| *p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.exp()
}

/// `λ_max / λ_min` over eigenvalues above `n ε λ_max`; infinite for an empty
/// positive spectrum.
pub fn condition_number(eigenvalues: &[f64]) -> f64 {
    let max = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return f64::INFINITY;
    }
    let floor = eigenvalues.len() as f64 * f64::EPSILON * max;
    let min = eigenvalues
        .iter()
        .copied()
        .filter(|l| *l > floor)
        .fold(f64::INFINITY, f64::min);
    max / min
}

fn check_t_points(t_points: &[f64], t_final: f64) -> Result<()> {
    if t_points.is_empty() {
        return Err(Error::InvalidParameter("kernel needs at least one time point".into()));
    }
    for (i, t) in t_points.iter().enumerate() {
        if !(0.0..=t_final).contains(t) {
            return Err(Error::InvalidParameter(format!("time point {t} outside [0, {t_final}]")));
        }
        if t_points[..i].contains(t) {
            return Err(Error::InvalidParameter(format!("duplicate time point {t}")));
        }
    }
    Ok(())
}

/// Builds `K = J Jᵀ` from any stacked Jacobian and decomposes it.
pub fn kernel_from_jacobian(jacobian: DMatrix<f64>, t_points: Vec<f64>, mode: KernelMode) -> Result<KernelReport> {
    let k = &jacobian * jacobian.transpose();
    let eig = jacobi_eigen(&k)?;
    Ok(KernelReport {
        mode,
        t_points,
        jacobian,
        condition_number: condition_number(&eig.eigenvalues),
        effective_rank: effective_rank(&eig.eigenvalues),
        k,
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
    })
}

/// Tangent kernel of the residual (or of the outputs) at `t_points`.
pub fn ntk_matrix(
    model: &Model,
    params: &[f64],
    physics: &PhysicsParams,
    t_points: &[f64],
    mode: KernelMode,
) -> Result<KernelReport> {
    model.check_params(params)?;
    check_t_points(t_points, physics.t_final)?;
    let jac = match mode {
        KernelMode::Residual => jacobian_rows(&ResidualProgram { model, physics }, params, t_points)?,
        KernelMode::Output => jacobian_rows(model, params, t_points)?,
    };
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "ntk_matrix" });
    }
    kernel_from_jacobian(jac, t_points.to_vec(), mode)
}

/// Largest `|lhs - g(t) rhs| / (|lhs| + 1e-15)` over all parameters and
/// time points, where lhs is the parameter Jacobian of the gated pre-softplus
/// outputs and rhs that of the trunk.
pub fn gate_scaling_check(model: &Model, params: &[f64], t_points: &[f64]) -> Result<f64> {
    model.check_params(params)?;
    let mut worst: f64 = 0.0;
    for &t in t_points {
        let lhs = jacobian_rows(&GatedOutputs(model), params, &[t])?;
        let rhs = jacobian_rows(&TrunkOutputs(model), params, &[t])?;
        let g = model.gate.value(t);
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            worst = worst.max((l - g * r).abs() / (l.abs() + 1e-15));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    /// `‖e‖` after 0, 1, ..., n_steps steps.
    pub norms: Vec<f64>,
    pub e_final: DVector<f64>,
    /// `dtau · λ_max < 2`.
    pub stable: bool,
}

/// Explicit Euler on `de/dτ = -K e`.
pub fn linearized_flow(k: &DMatrix<f64>, e0: &DVector<f64>, dtau: f64, n_steps: usize) -> Result<FlowTrace> {
    if k.nrows() != k.ncols() || k.nrows() != e0.len() {
        return Err(Error::LengthMismatch {
            expected: k.nrows(),
            actual: e0.len(),
        });
    }
    if !(dtau > 0.0 && dtau.is_finite()) {
        return Err(Error::InvalidParameter(format!("dtau must be positive, got {dtau}")));
    }
    let lambda_max = jacobi_eigen(k)?.eigenvalues.first().copied().unwrap_or(0.0);
    let stable = dtau * lambda_max < 2.0;
    if !stable {
        warn!("explicit Euler unstable: dtau * lambda_max = {} >= 2", dtau * lambda_max);
    }
    let mut e = e0.clone();
    let mut norms = Vec::with_capacity(n_steps + 1);
    norms.push(e.norm());
    for _ in 0..n_steps {
        let ke = k * &e;
        e.axpy(-dtau, &ke, 1.0);
        norms.push(e.norm());
    }
    Ok(FlowTrace {
        norms,
        e_final: e,
        stable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad;
    use crate::models::{init_params, GateKind, IcSpec, TrunkKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(kind: TrunkKind, seed: u64, scale: f64) -> Vec<f64> {
        let mut p = init_params(kind, seed).0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let omega = kind.layout().omega.unwrap_or(p.len());
        for v in &mut p[..omega] {
            *v += scale * rng.random_range(-1.0..1.0);
        }
        p
    }

    fn model(kind: TrunkKind, gate: GateKind) -> Model {
        Model::new(kind, gate, IcSpec::default(), 1e-4).unwrap()
    }

    #[test]
    fn single_point_single_channel_is_squared_gradient() {
        let m = model(TrunkKind::FixedFourier, GateKind::Exponential);
        let p = random_params(TrunkKind::FixedFourier, 1, 0.3);
        let phys = PhysicsParams::default();
        let rep = ntk_matrix(&m, &p, &phys, &[2.5], KernelMode::Residual).unwrap();
        let g = grad(&ResidualProgram { model: &m, physics: &phys }, &p, 2.5).unwrap();
        let sq: f64 = g.iter().map(|x| x * x).sum();
        assert!((rep.k[(0, 0)] - sq).abs() < 1e-12 * sq);
    }

    #[test]
    fn spectrum_matches_jtj_and_frobenius_identity() {
        let m = model(TrunkKind::AdaptiveFourier, GateKind::Linear);
        let p = random_params(TrunkKind::AdaptiveFourier, 2, 0.2);
        let phys = PhysicsParams::default();
        let t: Vec<f64> = (0..12).map(|i| 0.3 + 0.8 * i as f64).collect();
        let rep = ntk_matrix(&m, &p, &phys, &t, KernelMode::Residual).unwrap();
        let j = &rep.jacobian;
        let jtj = j.transpose() * j;
        let kf = rep.k.norm();
        assert!((kf - jtj.norm()).abs() < 1e-10 * kf);

        let other = jacobi_eigen(&jtj).unwrap();
        let lmax = rep.eigenvalues[0];
        for i in 0..rep.eigenvalues.len() {
            let v = other.eigenvectors.column(i);
            let jv = (j * v).norm_squared();
            assert!((jv - rep.eigenvalues[i]).abs() < 1e-8 * lmax, "i={i}");
        }
    }

    #[test]
    fn equilibrium_kernel_is_finite_and_nonzero() {
        let phys = PhysicsParams::default();
        let ic = IcSpec {
            r0: phys.equilibrium_radius(),
            theta0: 0.0,
            rdot0: 0.0,
            thetadot0: 0.0,
        };
        let m = Model::new(TrunkKind::FixedFourier, GateKind::Exponential, ic, phys.r_min).unwrap();
        let p = init_params(TrunkKind::FixedFourier, 0).0;
        let rep = ntk_matrix(&m, &p, &phys, &[1.0, 2.0, 3.0], KernelMode::Residual).unwrap();
        assert!(rep.k.iter().all(|v| v.is_finite()));
        assert!(rep.eigenvalues[0] > 0.0);
    }

    #[test]
    fn kernel_is_symmetric_psd_for_every_model() {
        let phys = PhysicsParams::with_k(60.0);
        let t: Vec<f64> = (0..16).map(|i| 0.6 * i as f64).collect();
        for kind in TrunkKind::ALL {
            for gate in GateKind::ALL {
                let m = model(kind, gate);
                let p = random_params(kind, 3, 0.1);
                for mode in [KernelMode::Residual, KernelMode::Output] {
                    let rep = ntk_matrix(&m, &p, &phys, &t, mode).unwrap();
                    let lmax = rep.eigenvalues[0];
                    let asym = (&rep.k - rep.k.transpose()).amax();
                    assert!(asym <= 1e-10 * lmax, "{kind:?} {gate:?} {mode:?}");
                    assert!(*rep.eigenvalues.last().unwrap() >= -1e-8 * lmax);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_time_points() {
        let m = model(TrunkKind::FixedFourier, GateKind::Linear);
        let p = init_params(TrunkKind::FixedFourier, 0).0;
        let phys = PhysicsParams::default();
        assert!(ntk_matrix(&m, &p, &phys, &[], KernelMode::Residual).is_err());
        assert!(ntk_matrix(&m, &p, &phys, &[1.0, 1.0], KernelMode::Residual).is_err());
        assert!(ntk_matrix(&m, &p, &phys, &[11.0], KernelMode::Residual).is_err());
    }

    #[test]
    fn gate_scaling_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in TrunkKind::ALL {
            for gate in GateKind::ALL {
                let m = model(kind, gate);
                let p = random_params(kind, 4, 0.5);
                let t: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..10.0)).collect();
                assert!(gate_scaling_check(&m, &p, &t).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn gated_jacobian_vanishes_at_zero() {
        for gate in GateKind::ALL {
            let m = model(TrunkKind::AdaptiveFourier, gate);
            let p = random_params(TrunkKind::AdaptiveFourier, 5, 0.5);
            let j = jacobian_rows(&GatedOutputs(&m), &p, &[0.0]).unwrap();
            assert!(j.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn gate_ratio_at_five() {
        let p = random_params(TrunkKind::FixedFourier, 6, 0.5);
        let norm = |gate| {
            let m = model(TrunkKind::FixedFourier, gate);
            jacobian_rows(&GatedOutputs(&m), &p, &[5.0]).unwrap().norm()
        };
        let ratio = norm(GateKind::Linear) / norm(GateKind::Exponential);
        let expect = 5.0 / (1.0 - (-5.0f64).exp());
        assert!((ratio - expect).abs() < 1e-12 * expect);
        assert!((expect - 5.0339).abs() < 1e-4);
    }

    #[test]
    fn jacobian_norm_ratio_is_the_gate() {
        let kind = TrunkKind::AdaptiveFourier;
        let p = random_params(kind, 8, 0.5);
        for gate in GateKind::ALL {
            let m = model(kind, gate);
            let mut prev = 0.0;
            for i in 1..=10 {
                let t = i as f64;
                let a = jacobian_rows(&GatedOutputs(&m), &p, &[t]).unwrap().norm();
                let b = jacobian_rows(&TrunkOutputs(&m), &p, &[t]).unwrap().norm();
                let ratio = a / b;
                assert!((ratio - gate.value(t)).abs() < 1e-12 * gate.value(t));
                assert!(ratio >= prev);
                prev = ratio;
            }
        }
    }

    #[test]
    fn spectral_summaries() {
        assert_eq!(effective_rank(&[1.0, 1.0, 1.0, 1.0]), 4.0);
        assert!((effective_rank(&[5.0, 0.0, -1e-20]) - 1.0).abs() < 1e-15);
        assert_eq!(effective_rank(&[0.0, 0.0]), 0.0);
        assert_eq!(condition_number(&[4.0, 2.0, 1e-30]), 2.0);
        assert_eq!(condition_number(&[0.0]), f64::INFINITY);
    }

    #[test]
    fn flow_along_eigenvector() {
        let k = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 3.0]);
        let e0 = DVector::from_vec(vec![2.0, 2.0]);
        let tr = linearized_flow(&k, &e0, 0.1, 5).unwrap();
        let expect = e0.norm() * (1.0f64 - 0.1 * 4.0).powi(5);
        assert!((tr.norms[5] - expect).abs() < 1e-14);
        assert!(tr.stable);
    }

    #[test]
    fn flow_under_zero_kernel_is_constant() {
        let e0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let tr = linearized_flow(&DMatrix::zeros(3, 3), &e0, 0.5, 10).unwrap();
        assert_eq!(tr.e_final, e0);
    }

    #[test]
    fn unstable_step_is_flagged() {
        let k = DMatrix::from_row_slice(1, 1, &[10.0]);
        let tr = linearized_flow(&k, &DVector::from_vec(vec![1.0]), 0.3, 3).unwrap();
        assert!(!tr.stable);
        assert!(linearized_flow(&k, &DVector::from_vec(vec![1.0, 2.0]), 0.1, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn flow_matches_matrix_exponential(n in 2usize..10, vals in prop::collection::vec(-1.0f64..1.0, 100), e in prop::collection::vec(-1.0f64..1.0, 10)) {
            let a = DMatrix::from_fn(n, n, |i, j| vals[i * 10 + j]);
            let k = &a * a.transpose();
            let e0 = DVector::from_fn(n, |i, _| e[i]);
            let steps = 100;
            let dtau = 1e-3;
            let tr = linearized_flow(&k, &e0, dtau, steps).unwrap();
            let exact = (&k * -(dtau * steps as f64)).exp() * &e0;
            // per mode |(1 - x)^N - exp(-N x)| <= N x^2 / 2 for 0 <= x <= 1
            let lmax = k.clone().symmetric_eigen().eigenvalues.max().max(0.0);
            let x = dtau * lmax;
            prop_assert!(x <= 1.0);
            let bound = steps as f64 * x * x / 2.0 * e0.norm();
            prop_assert!((tr.e_final - exact).norm() <= bound * (1.0 + 1e-6) + 1e-12);
        }
    }
}
