//! Trunk networks, initial-condition gates and the exact-IC embedding.
//!
//! The trunk produces a latent pair `(ρ̃(t), θ̃(t))`. The gate `g` (with
//! `g(0) = 0`) embeds it as
//!
//! ```text
//! ρ̂(t) = ρ0 + g(t) ρ̃(t),    r(t) = r_min + softplus(ρ̂(t))
//! θ̂(t) = θ0 + g(t) θ̃(t),    θ(t) = θ̂(t)
//! ```
//!
//! so `r(0) = r0` and `θ(0) = θ0` hold for any parameter values.

mod params;

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

pub use params::{init_params, ParamVector};

use crate::autodiff::{sigmoid, softplus, softplus_inv, ForwardTracer, Taylor2, TimeProgram, Tracer};
use crate::error::{Error, Result};

pub const MLP_HIDDEN: usize = 128;
pub const MLP_LAYERS: usize = 3;
pub const BAND_SIZE: usize = 16;
pub const N_FREQUENCIES: usize = 2 * BAND_SIZE;
/// Fourier feature dimension: a sine and a cosine per frequency.
pub const N_FEATURES: usize = 2 * N_FREQUENCIES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateKind {
    #[serde(rename = "exp")]
    Exponential,
    #[serde(rename = "linear")]
    Linear,
}

impl GateKind {
    pub const ALL: [GateKind; 2] = [GateKind::Exponential, GateKind::Linear];

    pub fn id(self) -> &'static str {
        match self {
            GateKind::Exponential => "exp",
            GateKind::Linear => "linear",
        }
    }

    pub fn trace<T: Tracer>(self, tr: &mut T, t: T::V) -> T::V {
        match self {
            GateKind::Exponential => {
                let neg_t = tr.neg(t);
                let decay = tr.exp(neg_t);
                let neg_decay = tr.neg(decay);
                tr.offset(neg_decay, 1.0)
            }
            GateKind::Linear => t,
        }
    }

    pub fn value(self, t: f64) -> f64 {
        self.eval(t).val
    }

    /// `g(t)` with its first two time derivatives.
    pub fn eval(self, t: f64) -> Taylor2 {
        let mut tr = ForwardTracer::new(&[]);
        let tn = tr.time(t);
        self.trace(&mut tr, tn)
    }

    /// `g(0) = 0`, `g'(0) != 0` and `g > 0` on a uniform grid of `n` points
    /// covering `(0, t_final]`.
    pub fn is_admissible(self, t_final: f64, n: usize) -> bool {
        let at0 = self.eval(0.0);
        if at0.val != 0.0 || at0.d1 == 0.0 {
            return false;
        }
        (1..=n).all(|i| self.value(t_final * i as f64 / n as f64) > 0.0)
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for GateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" | "exponential" => Ok(GateKind::Exponential),
            "linear" => Ok(GateKind::Linear),
            _ => Err(Error::Parse {
                what: "gate".into(),
                msg: format!("unknown gate `{s}` (expected exp|linear)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrunkKind {
    /// Three tanh hidden layers of width 128.
    #[serde(rename = "baseline")]
    BaselineMlp,
    #[serde(rename = "fixed_fourier")]
    FixedFourier,
    /// Fourier features whose frequencies are trainable.
    #[serde(rename = "adaptive_fourier")]
    AdaptiveFourier,
}

impl TrunkKind {
    pub const ALL: [TrunkKind; 3] = [TrunkKind::BaselineMlp, TrunkKind::FixedFourier, TrunkKind::AdaptiveFourier];

    pub fn id(self) -> &'static str {
        match self {
            TrunkKind::BaselineMlp => "baseline",
            TrunkKind::FixedFourier => "fixed_fourier",
            TrunkKind::AdaptiveFourier => "adaptive_fourier",
        }
    }

    pub fn is_spectral(self) -> bool {
        !matches!(self, TrunkKind::BaselineMlp)
    }

    pub fn layout(self) -> Layout {
        match self {
            TrunkKind::BaselineMlp => Layout::mlp(),
            TrunkKind::FixedFourier => Layout::fourier(false),
            TrunkKind::AdaptiveFourier => Layout::fourier(true),
        }
    }

    pub fn n_params(self) -> usize {
        self.layout().len
    }

    /// Latent outputs `(ρ̃, θ̃)` at time node `t`.
    pub fn trace<T: Tracer>(self, tr: &mut T, t: T::V) -> [T::V; 2] {
        let lay = self.layout();
        match self {
            TrunkKind::BaselineMlp => {
                let mut h: Vec<T::V> = Vec::with_capacity(MLP_HIDDEN);
                let mut next: Vec<T::V> = Vec::with_capacity(MLP_HIDDEN);
                h.push(t);
                let mut fan_in = 1;
                for layer in &lay.hidden {
                    next.clear();
                    for u in 0..MLP_HIDDEN {
                        let z = tr.affine(layer.weights + u * fan_in, &h, Some(layer.bias + u));
                        next.push(tr.tanh(z));
                    }
                    std::mem::swap(&mut h, &mut next);
                    fan_in = MLP_HIDDEN;
                }
                let rho = tr.affine(lay.head_w, &h, Some(lay.head_b));
                let theta = tr.affine(lay.head_w + MLP_HIDDEN, &h, Some(lay.head_b + 1));
                [rho, theta]
            }
            TrunkKind::FixedFourier | TrunkKind::AdaptiveFourier => {
                let omegas = standard_omegas();
                let mut feats: Vec<T::V> = Vec::with_capacity(N_FEATURES);
                let mut cosines: Vec<T::V> = Vec::with_capacity(N_FREQUENCIES);
                for (i, &w) in omegas.iter().enumerate() {
                    let arg = match lay.omega {
                        Some(off) => {
                            let w = tr.param(off + i);
                            tr.mul(w, t)
                        }
                        None => tr.scale(t, w),
                    };
                    let (s, c) = tr.sin_cos(arg);
                    feats.push(s);
                    cosines.push(c);
                }
                feats.extend_from_slice(&cosines);
                let rho = tr.affine(lay.head_w, &feats, Some(lay.head_b));
                let theta = tr.affine(lay.head_w + N_FEATURES, &feats, Some(lay.head_b + 1));
                [rho, theta]
            }
        }
    }
}

impl fmt::Display for TrunkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TrunkKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(TrunkKind::BaselineMlp),
            "fixed_fourier" => Ok(TrunkKind::FixedFourier),
            "adaptive_fourier" => Ok(TrunkKind::AdaptiveFourier),
            _ => Err(Error::Parse {
                what: "model".into(),
                msg: format!("unknown model `{s}` (expected baseline|fixed_fourier|adaptive_fourier)"),
            }),
        }
    }
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseOffsets {
    pub weights: usize,
    pub bias: usize,
}

/// Frozen parameter layout: trunk weights/biases, head `W` (row-major, one
/// row per output), head `b`, then trainable frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub hidden: Vec<DenseOffsets>,
    pub head_w: usize,
    pub head_b: usize,
    pub omega: Option<usize>,
    pub len: usize,
}

impl Layout {
    fn mlp() -> Self {
        let mut hidden = Vec::with_capacity(MLP_LAYERS);
        let mut off = 0;
        let mut fan_in = 1;
        for _ in 0..MLP_LAYERS {
            let weights = off;
            let bias = weights + MLP_HIDDEN * fan_in;
            hidden.push(DenseOffsets { weights, bias });
            off = bias + MLP_HIDDEN;
            fan_in = MLP_HIDDEN;
        }
        let head_w = off;
        let head_b = head_w + 2 * MLP_HIDDEN;
        Layout {
            hidden,
            head_w,
            head_b,
            omega: None,
            len: head_b + 2,
        }
    }

    fn fourier(adaptive: bool) -> Self {
        let head_b = 2 * N_FEATURES;
        let omega = adaptive.then_some(head_b + 2);
        Layout {
            hidden: Vec::new(),
            head_w: 0,
            head_b,
            omega,
            len: head_b + 2 + if adaptive { N_FREQUENCIES } else { 0 },
        }
    }
}

/// Two geometric frequency bands; the shared endpoint 5.0 appears in both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyBands {
    pub low: (f64, f64),
    pub high: (f64, f64),
}

impl FrequencyBands {
    pub const fn standard() -> Self {
        FrequencyBands {
            low: (0.5, 5.0),
            high: (5.0, 15.0),
        }
    }

    pub fn omegas(&self) -> [f64; N_FREQUENCIES] {
        let mut out = [0.0; N_FREQUENCIES];
        out[..BAND_SIZE].copy_from_slice(&geomspace(self.low.0, self.low.1));
        out[BAND_SIZE..].copy_from_slice(&geomspace(self.high.0, self.high.1));
        out
    }
}

fn standard_omegas() -> &'static [f64; N_FREQUENCIES] {
    static OMEGAS: LazyLock<[f64; N_FREQUENCIES]> = LazyLock::new(|| FrequencyBands::standard().omegas());
    &OMEGAS
}

/// Log-uniform spacing with exact endpoints.
fn geomspace(a: f64, b: f64) -> [f64; BAND_SIZE] {
    let (la, lb) = (a.ln(), b.ln());
    let mut out = [0.0; BAND_SIZE];
    for (j, w) in out.iter_mut().enumerate() {
        *w = (la + (lb - la) * j as f64 / (BAND_SIZE - 1) as f64).exp();
    }
    out[0] = a;
    out[BAND_SIZE - 1] = b;
    out
}

/// Initial state of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcSpec {
    pub r0: f64,
    pub theta0: f64,
    pub rdot0: f64,
    pub thetadot0: f64,
}

impl Default for IcSpec {
    fn default() -> Self {
        IcSpec {
            r0: 1.5,
            theta0: 1.0,
            rdot0: 0.0,
            thetadot0: 0.0,
        }
    }
}

impl IcSpec {
    pub fn state(&self) -> crate::dynamics::State {
        crate::dynamics::State::new(self.r0, self.theta0, self.rdot0, self.thetadot0)
    }

    /// `softplus⁻¹(r0 - r_min)`: the latent radius reproducing `r0` exactly.
    pub fn rho0(&self, r_min: f64) -> Result<f64> {
        if !(self.r0 > r_min) {
            return Err(Error::InvalidParameter(format!(
                "r0 = {} must exceed r_min = {r_min}",
                self.r0
            )));
        }
        let guess = softplus_inv(self.r0 - r_min);
        if !guess.is_finite() {
            return Err(Error::InvalidParameter(format!("latent radius for r0 = {} is not finite", self.r0)));
        }
        // The inverse is only accurate to a few ulps; pick the neighbour that
        // reproduces r0 best in the forward direction.
        let miss = |x: f64| (r_min + softplus(x) - self.r0).abs();
        let mut rho0 = guess;
        let mut x = guess;
        for _ in 0..16 {
            x = x.next_down();
        }
        for _ in 0..33 {
            if miss(x) < miss(rho0) {
                rho0 = x;
            }
            x = x.next_up();
        }
        if !rho0.is_finite() {
            return Err(Error::InvalidParameter(format!("latent radius for r0 = {} is not finite", self.r0)));
        }
        Ok(rho0)
    }
}

/// All intermediate nodes of one model evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ModelTrace<V> {
    /// `(ρ̃, θ̃)`
    pub trunk: [V; 2],
    pub gate: V,
    /// `(ρ̂, θ̂)` before the softplus.
    pub gated: [V; 2],
    pub r: V,
    pub theta: V,
}

/// A trunk with its gate and initial-condition embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub trunk: TrunkKind,
    pub gate: GateKind,
    pub ic: IcSpec,
    pub r_min: f64,
    rho0: f64,
}

impl Model {
    pub fn new(trunk: TrunkKind, gate: GateKind, ic: IcSpec, r_min: f64) -> Result<Self> {
        let rho0 = ic.rho0(r_min)?;
        Ok(Model {
            trunk,
            gate,
            ic,
            r_min,
            rho0,
        })
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn n_params(&self) -> usize {
        self.trunk.n_params()
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        let expected = self.n_params();
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: params.len(),
            });
        }
        Ok(())
    }

    pub fn trace<T: Tracer>(&self, tr: &mut T, t: f64) -> ModelTrace<T::V> {
        let tn = tr.time(t);
        let trunk = self.trunk.trace(tr, tn);
        let gate = self.gate.trace(tr, tn);
        let gated_rho = tr.mul(gate, trunk[0]);
        let rho_hat = tr.offset(gated_rho, self.rho0);
        let gated_theta = tr.mul(gate, trunk[1]);
        let theta_hat = tr.offset(gated_theta, self.ic.theta0);
        let sp = tr.softplus(rho_hat);
        let r = tr.offset(sp, self.r_min);
        ModelTrace {
            trunk,
            gate,
            gated: [rho_hat, theta_hat],
            r,
            theta: theta_hat,
        }
    }

    /// `(r, θ)` with exact time derivatives.
    pub fn eval(&self, params: &[f64], t: f64) -> Result<(Taylor2, Taylor2)> {
        self.check_params(params)?;
        let mut tr = ForwardTracer::new(params);
        let out = self.trace(&mut tr, t);
        if !out.r.is_finite() || !out.theta.is_finite() {
            return Err(Error::Domain(format!("non-finite model output at t = {t}")));
        }
        Ok((out.r, out.theta))
    }

    /// Trunk outputs `(ρ̃, θ̃)` at `t`.
    pub fn trunk_eval(&self, params: &[f64], t: f64) -> Result<[Taylor2; 2]> {
        self.check_params(params)?;
        let mut tr = ForwardTracer::new(params);
        let tn = tr.time(t);
        Ok(self.trunk.trace(&mut tr, tn))
    }

    /// Initial velocity implied by the trunk: `(σ(ρ0) g'(0) ρ̃(0), g'(0) θ̃(0))`.
    pub fn induced_initial_velocity(&self, params: &[f64]) -> Result<(f64, f64)> {
        let [rho, theta] = self.trunk_eval(params, 0.0)?;
        let g1 = self.gate.eval(0.0).d1;
        Ok((sigmoid(self.rho0) * g1 * rho.val, g1 * theta.val))
    }

    /// Predicted states on a time grid.
    pub fn trajectory(&self, params: &[f64], times: &[f64]) -> Result<crate::dynamics::Trajectory> {
        let states = times
            .iter()
            .map(|&t| {
                let (r, th) = self.eval(params, t)?;
                Ok(crate::dynamics::State::new(r.val, th.val, r.d1, th.d1))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::dynamics::Trajectory {
            times: times.to_vec(),
            states,
        })
    }
}

impl TimeProgram for Model {
    fn trace<T: Tracer>(&self, tr: &mut T, t: f64) -> Vec<T::V> {
        let out = Model::trace(self, tr, t);
        vec![out.r, out.theta]
    }
}

/// The gated latent pair `(ρ̂ - ρ0, θ̂ - θ0) = g(t) (ρ̃, θ̃)` of a model.
pub struct GatedOutputs<'a>(pub &'a Model);

impl TimeProgram for GatedOutputs<'_> {
    fn trace<T: Tracer>(&self, tr: &mut T, t: f64) -> Vec<T::V> {
        let out = self.0.trace(tr, t);
        let rho = tr.offset(out.gated[0], -self.0.rho0);
        let theta = tr.offset(out.gated[1], -self.0.ic.theta0);
        vec![rho, theta]
    }
}

/// The raw trunk pair `(ρ̃, θ̃)` of a model.
pub struct TrunkOutputs<'a>(pub &'a Model);

impl TimeProgram for TrunkOutputs<'_> {
    fn trace<T: Tracer>(&self, tr: &mut T, t: f64) -> Vec<T::V> {
        let tn = tr.time(t);
        self.0.trunk.trace(tr, tn).to_vec()
    }
}
