//! Differentiation engine.
//!
//! Models are written once against the [`Tracer`] trait and can then be run in
//! two ways:
//!
//! * [`ForwardTracer`] evaluates them on [`Taylor2`] values, producing the
//!   output together with its exact first and second time derivatives.
//! * [`Tape`] records the same computation as a graph whose nodes hold Taylor
//!   triples, so a reverse sweep yields gradients with respect to the
//!   trainable parameters of expressions that contain time derivatives.

mod tape;
mod taylor;

use nalgebra::DMatrix;

pub use tape::{NodeId, Tape};
pub use taylor::{sigmoid, softplus, softplus_inv, Taylor2, UnaryKind};

use crate::error::{Error, Result};

/// Builder interface shared by the forward evaluator and the recording tape.
///
/// Parameters are referenced by their index in the flat parameter vector and
/// are constant in time.
pub trait Tracer {
    type V: Copy;

    /// The independent variable, seeded as `(t, 1, 0)`.
    fn time(&mut self, t: f64) -> Self::V;
    fn constant(&mut self, c: f64) -> Self::V;
    fn param(&mut self, index: usize) -> Self::V;
    fn value(&self, a: Self::V) -> Taylor2;

    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn scale(&mut self, a: Self::V, c: f64) -> Self::V;
    fn unary(&mut self, kind: UnaryKind, a: Self::V) -> Self::V;

    /// `sum_i params[weights + i] * inputs[i] (+ params[bias])`.
    ///
    /// A fused sum of products; equivalent to the corresponding chain of
    /// `mul`/`add` calls.
    fn affine(&mut self, weights: usize, inputs: &[Self::V], bias: Option<usize>) -> Self::V;

    /// Extracts the `order`-th Taylor coefficient of `a` as a time-constant
    /// value, e.g. `component(r, 2)` is `r''` usable in further algebra.
    fn component(&mut self, a: Self::V, order: usize) -> Self::V;

    fn neg(&mut self, a: Self::V) -> Self::V {
        self.scale(a, -1.0)
    }

    fn offset(&mut self, a: Self::V, c: f64) -> Self::V {
        let c = self.constant(c);
        self.add(a, c)
    }

    fn div(&mut self, a: Self::V, b: Self::V) -> Self::V {
        let inv = self.unary(UnaryKind::Recip, b);
        self.mul(a, inv)
    }

    fn square(&mut self, a: Self::V) -> Self::V {
        self.mul(a, a)
    }

    fn exp(&mut self, a: Self::V) -> Self::V {
        self.unary(UnaryKind::Exp, a)
    }
    fn ln(&mut self, a: Self::V) -> Self::V {
        self.unary(UnaryKind::Log, a)
    }
    fn sin(&mut self, a: Self::V) -> Self::V {
        self.unary(UnaryKind::Sin, a)
    }
    fn cos(&mut self, a: Self::V) -> Self::V {
        self.unary(UnaryKind::Cos, a)
    }
    /// `(sin a, cos a)`; implementations may share the evaluation.
    fn sin_cos(&mut self, a: Self::V) -> (Self::V, Self::V) {
        (self.sin(a), self.cos(a))
    }
    fn tanh(&mut self, a: Self::V) -> Self::V {
        self.unary(UnaryKind::Tanh, a)
    }
    fn softplus(&mut self, a: Self::V) -> Self::V {
        self.unary(UnaryKind::Softplus, a)
    }
    fn sigmoid(&mut self, a: Self::V) -> Self::V {
        self.unary(UnaryKind::Sigmoid, a)
    }
    fn powf(&mut self, a: Self::V, p: f64) -> Self::V {
        self.unary(UnaryKind::Powf(p), a)
    }

    /// Four-quadrant arctangent built from `atan` of a bounded ratio plus a
    /// constant branch offset.
    fn atan2(&mut self, y: Self::V, x: Self::V) -> Self::V {
        let (yv, xv) = (self.value(y).val, self.value(x).val);
        if xv.abs() >= yv.abs() {
            let ratio = self.div(y, x);
            let base = self.unary(UnaryKind::Atan, ratio);
            if xv < 0.0 {
                let branch = if yv >= 0.0 {
                    std::f64::consts::PI
                } else {
                    -std::f64::consts::PI
                };
                self.offset(base, branch)
            } else {
                base
            }
        } else {
            let ratio = self.div(x, y);
            let base = self.unary(UnaryKind::Atan, ratio);
            let neg = self.neg(base);
            let quarter = std::f64::consts::FRAC_PI_2.copysign(yv);
            self.offset(neg, quarter)
        }
    }
}

/// Evaluates traced programs directly on Taylor triples.
pub struct ForwardTracer<'p> {
    params: &'p [f64],
}

impl<'p> ForwardTracer<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        ForwardTracer { params }
    }
}

impl Tracer for ForwardTracer<'_> {
    type V = Taylor2;

    fn time(&mut self, t: f64) -> Taylor2 {
        Taylor2::seed(t)
    }
    fn constant(&mut self, c: f64) -> Taylor2 {
        Taylor2::constant(c)
    }
    fn param(&mut self, index: usize) -> Taylor2 {
        Taylor2::constant(self.params[index])
    }
    fn value(&self, a: Taylor2) -> Taylor2 {
        a
    }
    fn add(&mut self, a: Taylor2, b: Taylor2) -> Taylor2 {
        a + b
    }
    fn sub(&mut self, a: Taylor2, b: Taylor2) -> Taylor2 {
        a - b
    }
    fn mul(&mut self, a: Taylor2, b: Taylor2) -> Taylor2 {
        a * b
    }
    fn scale(&mut self, a: Taylor2, c: f64) -> Taylor2 {
        a * c
    }
    fn unary(&mut self, kind: UnaryKind, a: Taylor2) -> Taylor2 {
        a.apply(kind)
    }
    fn sin_cos(&mut self, a: Taylor2) -> (Taylor2, Taylor2) {
        let (s, c) = a.val.sin_cos();
        (a.compose(s, c, -s), a.compose(c, -s, -c))
    }
    fn affine(&mut self, weights: usize, inputs: &[Taylor2], bias: Option<usize>) -> Taylor2 {
        let w = &self.params[weights..weights + inputs.len()];
        let mut acc = Taylor2::constant(bias.map_or(0.0, |b| self.params[b]));
        for (wi, x) in w.iter().zip(inputs) {
            acc.val += wi * x.val;
            acc.d1 += wi * x.d1;
            acc.d2 += wi * x.d2;
        }
        acc
    }
    fn component(&mut self, a: Taylor2, order: usize) -> Taylor2 {
        Taylor2::constant(a.to_array()[order])
    }
}

/// A scalar-input program with vector output, traceable by any [`Tracer`].
pub trait TimeProgram {
    fn trace<T: Tracer>(&self, tr: &mut T, t: f64) -> Vec<T::V>;
}

/// Evaluates `program` at time `t`, returning every output with its exact
/// first and second time derivatives.
pub fn eval_with_time_derivs<P: TimeProgram>(
    program: &P,
    params: &[f64],
    t: f64,
) -> Result<Vec<Taylor2>> {
    let mut tr = ForwardTracer::new(params);
    let out = program.trace(&mut tr, t);
    if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite program output {bad:?} at t = {t}")));
    }
    Ok(out)
}

/// Gradient of the scalar (value component of the) first output of
/// `program` at `t` with respect to all parameters.
pub fn grad<P: TimeProgram>(program: &P, params: &[f64], t: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new(params);
    let out = program.trace(&mut tape, t);
    let first = *out
        .first()
        .ok_or_else(|| Error::InvalidParameter("program has no outputs".into()))?;
    tape.gradient(first)
}

/// Stacks parameter gradients of every program output (value component) at
/// every time point: row `i * n_out + c` is output `c` at `t_points[i]`.
pub fn jacobian_rows<P: TimeProgram>(
    program: &P,
    params: &[f64],
    t_points: &[f64],
) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut tape = Tape::new(params);
    for &t in t_points {
        tape.clear();
        let outputs = program.trace(&mut tape, t);
        for &o in &outputs {
            let mut g = vec![0.0; params.len()];
            tape.backward(&[(o, [1.0, 0.0, 0.0])], &mut g)?;
            rows.push(g);
        }
    }
    let n_rows = rows.len();
    Ok(DMatrix::from_fn(n_rows, params.len(), |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct SinProgram {
        omega: f64,
    }

    impl TimeProgram for SinProgram {
        fn trace<T: Tracer>(&self, tr: &mut T, t: f64) -> Vec<T::V> {
            let t = tr.time(t);
            let arg = tr.scale(t, self.omega);
            vec![tr.sin(arg)]
        }
    }

    /// f = p0 * t^2 + exp(p1 * t)
    struct Poly;

    impl TimeProgram for Poly {
        fn trace<T: Tracer>(&self, tr: &mut T, t: f64) -> Vec<T::V> {
            let t = tr.time(t);
            let p0 = tr.param(0);
            let p1 = tr.param(1);
            let t2 = tr.square(t);
            let a = tr.mul(p0, t2);
            let bt = tr.mul(p1, t);
            let b = tr.exp(bt);
            vec![tr.add(a, b)]
        }
    }

    #[test]
    fn sin_program_derivatives() {
        let out = eval_with_time_derivs(&SinProgram { omega: 2.0 }, &[], 0.0).unwrap();
        assert_eq!(out[0].val, 0.0);
        assert_eq!(out[0].d1, 2.0);
        assert_eq!(out[0].d2, 0.0);
    }

    #[test]
    fn closed_form_parameter_gradient() {
        let params = [0.3, -0.4];
        let t = 1.5;
        let g = grad(&Poly, &params, t).unwrap();
        assert!((g[0] - t * t).abs() < 1e-15);
        assert!((g[1] - t * (params[1] * t).exp()).abs() < 1e-15);
    }

    #[test]
    fn jacobian_of_single_output_is_its_gradient() {
        let params = [0.3, -0.4];
        let j = jacobian_rows(&Poly, &params, &[0.8]).unwrap();
        let g = grad(&Poly, &params, 0.8).unwrap();
        assert_eq!(j.nrows(), 1);
        assert_eq!(j.row(0).iter().copied().collect::<Vec<_>>(), g);
    }

    #[test]
    fn log_of_negative_is_a_domain_error() {
        struct BadLog;
        impl TimeProgram for BadLog {
            fn trace<T: Tracer>(&self, tr: &mut T, t: f64) -> Vec<T::V> {
                let t = tr.time(t);
                let n = tr.neg(t);
                vec![tr.ln(n)]
            }
        }
        assert!(eval_with_time_derivs(&BadLog, &[], 1.0).is_err());
        let err = grad(&BadLog, &[], 1.0).unwrap_err();
        assert!(err.to_string().contains("log"), "{err}");
    }
}
