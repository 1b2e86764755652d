//! Second-order truncated Taylor arithmetic in a single variable (time).
//!
//! A [`Taylor2`] carries `(f, f', f'')` and every operation propagates all
//! three coefficients exactly, so seeding `t` as `(t, 1, 0)` yields the exact
//! first and second time derivatives of any composed expression.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Taylor2 {
    pub val: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Elementary unary functions known to the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Softplus,
    Sigmoid,
    Atan,
    Recip,
    /// `x^p` for a constant exponent.
    Powf(f64),
}

/// `log(1 + e^x)` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`], defined for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl UnaryKind {
    pub fn name(self) -> &'static str {
        match self {
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Sin => "sin",
            UnaryKind::Cos => "cos",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Atan => "atan",
            UnaryKind::Recip => "recip",
            UnaryKind::Powf(_) => "powf",
        }
    }

    /// `[f(x), f'(x), f''(x), f'''(x)]`.
    ///
    /// The third derivative is only needed when differentiating a Taylor
    /// triple in reverse mode.
    pub fn derivs(self, x: f64) -> [f64; 4] {
        match self {
            UnaryKind::Exp => {
                let e = x.exp();
                [e, e, e, e]
            }
            UnaryKind::Log => {
                let inv = 1.0 / x;
                [x.ln(), inv, -inv * inv, 2.0 * inv * inv * inv]
            }
            UnaryKind::Sin => {
                let (s, c) = x.sin_cos();
                [s, c, -s, -c]
            }
            UnaryKind::Cos => {
                let (s, c) = x.sin_cos();
                [c, -s, -c, s]
            }
            UnaryKind::Tanh => {
                let y = x.tanh();
                let d = 1.0 - y * y;
                [y, d, -2.0 * y * d, -2.0 * d * (1.0 - 3.0 * y * y)]
            }
            UnaryKind::Softplus => {
                let s = sigmoid(x);
                let ds = s * (1.0 - s);
                [softplus(x), s, ds, ds * (1.0 - 2.0 * s)]
            }
            UnaryKind::Sigmoid => {
                let s = sigmoid(x);
                let ds = s * (1.0 - s);
                [s, ds, ds * (1.0 - 2.0 * s), ds * (1.0 - 6.0 * s + 6.0 * s * s)]
            }
            UnaryKind::Atan => {
                let q = 1.0 / (1.0 + x * x);
                [
                    x.atan(),
                    q,
                    -2.0 * x * q * q,
                    (6.0 * x * x - 2.0) * q * q * q,
                ]
            }
            UnaryKind::Recip => {
                let inv = 1.0 / x;
                let inv2 = inv * inv;
                [inv, -inv2, 2.0 * inv2 * inv, -6.0 * inv2 * inv2]
            }
            UnaryKind::Powf(p) => [
                x.powf(p),
                p * x.powf(p - 1.0),
                p * (p - 1.0) * x.powf(p - 2.0),
                p * (p - 1.0) * (p - 2.0) * x.powf(p - 3.0),
            ],
        }
    }
}

impl Taylor2 {
    pub const fn new(val: f64, d1: f64, d2: f64) -> Self {
        Taylor2 { val, d1, d2 }
    }

    /// A time-independent value.
    pub const fn constant(c: f64) -> Self {
        Taylor2::new(c, 0.0, 0.0)
    }

    /// The independent variable itself.
    pub const fn seed(t: f64) -> Self {
        Taylor2::new(t, 1.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.val.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.val, self.d1, self.d2]
    }

    /// Chain rule for `f(self)` given `f, f', f''` at `self.val`.
    #[inline]
    pub fn compose(self, f: f64, f1: f64, f2: f64) -> Self {
        Taylor2 {
            val: f,
            d1: f1 * self.d1,
            d2: f2 * self.d1 * self.d1 + f1 * self.d2,
        }
    }

    pub fn apply(self, kind: UnaryKind) -> Self {
        let [f, f1, f2, _] = kind.derivs(self.val);
        self.compose(f, f1, f2)
    }

    pub fn exp(self) -> Self {
        self.apply(UnaryKind::Exp)
    }
    pub fn ln(self) -> Self {
        self.apply(UnaryKind::Log)
    }
    pub fn sin(self) -> Self {
        self.apply(UnaryKind::Sin)
    }
    pub fn cos(self) -> Self {
        self.apply(UnaryKind::Cos)
    }
    pub fn tanh(self) -> Self {
        self.apply(UnaryKind::Tanh)
    }
    pub fn softplus(self) -> Self {
        self.apply(UnaryKind::Softplus)
    }
    pub fn sigmoid(self) -> Self {
        self.apply(UnaryKind::Sigmoid)
    }
    pub fn atan(self) -> Self {
        self.apply(UnaryKind::Atan)
    }
    pub fn recip(self) -> Self {
        self.apply(UnaryKind::Recip)
    }
    pub fn powf(self, p: f64) -> Self {
        self.apply(UnaryKind::Powf(p))
    }

    /// Four-quadrant arctangent of `self / x`.
    pub fn atan2(self, x: Taylor2) -> Self {
        let y = self;
        let q = x.val * x.val + y.val * y.val;
        let cross1 = x.val * y.d1 - y.val * x.d1;
        let radial1 = x.val * x.d1 + y.val * y.d1;
        Taylor2 {
            val: y.val.atan2(x.val),
            d1: cross1 / q,
            d2: (x.val * y.d2 - y.val * x.d2) / q - 2.0 * cross1 * radial1 / (q * q),
        }
    }
}

impl From<f64> for Taylor2 {
    fn from(c: f64) -> Self {
        Taylor2::constant(c)
    }
}

impl Add for Taylor2 {
    type Output = Taylor2;
    #[inline]
    fn add(self, rhs: Taylor2) -> Taylor2 {
        Taylor2::new(self.val + rhs.val, self.d1 + rhs.d1, self.d2 + rhs.d2)
    }
}

impl AddAssign for Taylor2 {
    #[inline]
    fn add_assign(&mut self, rhs: Taylor2) {
        *self = *self + rhs;
    }
}

impl Sub for Taylor2 {
    type Output = Taylor2;
    #[inline]
    fn sub(self, rhs: Taylor2) -> Taylor2 {
        Taylor2::new(self.val - rhs.val, self.d1 - rhs.d1, self.d2 - rhs.d2)
    }
}

impl Mul for Taylor2 {
    type Output = Taylor2;
    #[inline]
    fn mul(self, rhs: Taylor2) -> Taylor2 {
        Taylor2::new(
            self.val * rhs.val,
            self.d1 * rhs.val + self.val * rhs.d1,
            self.d2 * rhs.val + 2.0 * self.d1 * rhs.d1 + self.val * rhs.d2,
        )
    }
}

impl Div for Taylor2 {
    type Output = Taylor2;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Taylor2) -> Taylor2 {
        self * rhs.recip()
    }
}

impl Neg for Taylor2 {
    type Output = Taylor2;
    #[inline]
    fn neg(self) -> Taylor2 {
        Taylor2::new(-self.val, -self.d1, -self.d2)
    }
}

impl Add<f64> for Taylor2 {
    type Output = Taylor2;
    fn add(self, rhs: f64) -> Taylor2 {
        Taylor2::new(self.val + rhs, self.d1, self.d2)
    }
}

impl Sub<f64> for Taylor2 {
    type Output = Taylor2;
    fn sub(self, rhs: f64) -> Taylor2 {
        Taylor2::new(self.val - rhs, self.d1, self.d2)
    }
}

impl Mul<f64> for Taylor2 {
    type Output = Taylor2;
    #[inline]
    fn mul(self, rhs: f64) -> Taylor2 {
        Taylor2::new(self.val * rhs, self.d1 * rhs, self.d2 * rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn sin_of_scaled_time() {
        let t = Taylor2::seed(0.0);
        let y = (t * 2.0).sin();
        assert_eq!(y.to_array(), [0.0, 2.0, -0.0]);
    }

    #[test]
    fn exponential_gate_at_zero() {
        let t = Taylor2::seed(0.0);
        let g = Taylor2::constant(1.0) - (-t).exp();
        assert_eq!(g.to_array(), [0.0, 1.0, -1.0]);
    }

    #[test]
    fn softplus_is_stable_for_large_arguments() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus_inv(softplus(0.3)) - 0.3).abs() < 1e-15);
        assert!((softplus(softplus_inv(1.4999)) - 1.4999).abs() < 1e-15);
    }

    #[test]
    fn third_derivatives_match_finite_differences() {
        let kinds = [
            UnaryKind::Exp,
            UnaryKind::Log,
            UnaryKind::Sin,
            UnaryKind::Cos,
            UnaryKind::Tanh,
            UnaryKind::Softplus,
            UnaryKind::Sigmoid,
            UnaryKind::Atan,
            UnaryKind::Recip,
            UnaryKind::Powf(2.5),
        ];
        let x = 0.7;
        let h = 1e-5;
        for k in kinds {
            let d = k.derivs(x);
            let plus = k.derivs(x + h);
            let minus = k.derivs(x - h);
            for order in 0..3 {
                let fd = (plus[order] - minus[order]) / (2.0 * h);
                assert!(
                    close(d[order + 1], fd, 1e-7),
                    "{} order {}: {} vs {}",
                    k.name(),
                    order + 1,
                    d[order + 1],
                    fd
                );
            }
        }
    }

    #[test]
    fn atan2_matches_quadrant_and_derivatives() {
        // (cos t, sin t) traces the unit circle: atan2 = t, d1 = 1, d2 = 0.
        let t = Taylor2::seed(2.5);
        let a = t.sin().atan2(t.cos());
        assert!(close(a.val, 2.5, 1e-14));
        assert!(close(a.d1, 1.0, 1e-14));
        assert!(a.d2.abs() < 1e-14);
    }

    fn triple() -> impl Strategy<Value = Taylor2> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| Taylor2::new(a, b, c))
    }

    proptest! {
        #[test]
        fn product_is_associative(a in triple(), b in triple(), c in triple()) {
            let l = (a * b) * c;
            let r = a * (b * c);
            for (x, y) in l.to_array().into_iter().zip(r.to_array()) {
                prop_assert!(close(x, y, 1e-12));
            }
        }

        #[test]
        fn exp_log_round_trip(v in 0.1..5.0f64, d1 in -2.0..2.0f64, d2 in -2.0..2.0f64) {
            let x = Taylor2::new(v, d1, d2);
            let y = x.ln().exp();
            for (p, q) in y.to_array().into_iter().zip(x.to_array()) {
                prop_assert!(close(p, q, 1e-12));
            }
        }
    }
}
