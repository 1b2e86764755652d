use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// CDF of Student's t with `nu` degrees of freedom.
pub fn student_t_cdf(t: f64, nu: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 1.0;
    }
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t by bisection on the CDF.
pub fn student_t_quantile(p: f64, nu: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("t quantile needs p in (0, 1), got {p}")));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("t quantile needs nu > 0, got {nu}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let upper = p.max(1.0 - p);
    let mut hi = 1.0;
    while student_t_cdf(hi, nu) < upper {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NonFinite { op: "student_t_quantile" });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if student_t_cdf(mid, nu) < upper {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    Ok(if p > 0.5 { q } else { -q })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cauchy_case_has_closed_form() {
        // nu = 1 is the Cauchy distribution.
        for t in [-3.0, -0.5, 0.0, 0.7, 10.0] {
            let exact = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - exact).abs() < 1e-13, "t={t}");
        }
        let q = student_t_quantile(0.975, 1.0).unwrap();
        let exact = (std::f64::consts::PI * 0.475).tan();
        assert!((q - exact).abs() < 1e-9 * exact, "{q} vs {exact}");
    }

    #[test]
    fn two_dof_has_closed_form() {
        // nu = 2: F(t) = 1/2 + t / (2 sqrt(2 + t^2)), so q(p) = (2p-1) sqrt(2 / (1 - (2p-1)^2)).
        for p in [0.6, 0.9, 0.975, 0.999] {
            let a: f64 = 2.0 * p - 1.0;
            let exact = a * (2.0 / (1.0 - a * a)).sqrt();
            let q = student_t_quantile(p, 2.0).unwrap();
            assert!((q - exact).abs() < 1e-9, "p={p}: {q} vs {exact}");
        }
        assert!((student_t_quantile(0.975, 2.0).unwrap() - 4.30265).abs() < 1e-5);
    }

    #[test]
    fn large_dof_approaches_normal() {
        let q = student_t_quantile(0.975, 1e7).unwrap();
        assert!((q - 1.959_963_984_540_054).abs() < 1e-5);
    }

    #[test]
    fn symmetric_and_rejects_bad_input() {
        let q = student_t_quantile(0.1, 7.0).unwrap();
        assert!((q + student_t_quantile(0.9, 7.0).unwrap()).abs() < 1e-12);
        assert_eq!(student_t_quantile(0.5, 3.0).unwrap(), 0.0);
        assert!(student_t_quantile(1.0, 3.0).is_err());
        assert!(student_t_quantile(0.5, 0.0).is_err());
    }
}
