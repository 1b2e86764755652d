//! Composite loss, collocation sampling and the Adam training loop.

mod adam;

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, OptimizerState};

use crate::autodiff::{ForwardTracer, NodeId, Tape, TimeProgram, Tracer};
use crate::dynamics::{ChannelDerivs, PhysicsParams};
use crate::error::{Error, Result};
use crate::models::{IcSpec, Model, ParamVector};
use crate::rng::{stream_rng_at, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_phys: f64,
    pub lambda_ic: f64,
    pub n_updates: usize,
    pub learning_rate: f64,
    pub n_coll: usize,
    /// Initial-condition points. The velocity penalty is deterministic at
    /// `t = 0`, so it is evaluated once; the count is kept for the record.
    pub n_ic: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_phys: 1.0,
            lambda_ic: 50.0,
            n_updates: 5000,
            learning_rate: 1e-3,
            n_coll: 2000,
            n_ic: 20,
            seed: 0,
            adam: AdamConfig::default(),
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_phys >= 0.0 && self.lambda_ic >= 0.0) {
            return Err(Error::InvalidParameter("loss weights must be non-negative".into()));
        }
        if self.n_updates == 0 || self.n_coll == 0 || self.log_every == 0 {
            return Err(Error::InvalidParameter(
                "n_updates, n_coll and log_every must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::InvalidParameter("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// `n` uniform draws on `[0, t_final]` for one iteration.
///
/// Iteration `iter` reads its own window of the collocation stream, so a batch
/// depends only on `(seed, iter, n)`.
pub fn sample_collocation(seed: u64, iter: u64, n: usize, t_final: f64) -> Vec<f64> {
    // An f64 draw consumes two 32-bit words.
    let mut rng = stream_rng_at(seed, Stream::Collocation, iter, 2 * n as u64);
    (0..n).map(|_| t_final * rng.random::<f64>()).collect()
}

/// Residual of the equations of motion and its partials with respect to
/// `(r, r', r'', θ, θ', θ'')`.
fn residual_with_partials(r: [f64; 3], th: [f64; 3], p: &PhysicsParams) -> ([f64; 2], [[f64; 6]; 2]) {
    let [r0, r1, r2] = r;
    let [t0, t1, t2] = th;
    let (s, c) = t0.sin_cos();
    let km = p.k / p.m;
    let crm = p.c_r / p.m;
    let res_r = r2 - r0 * t1 * t1 + km * (r0 - p.l0) - p.g_grav * c + crm * r1;
    let res_t = t2 + 2.0 * r1 * t1 / r0 + p.g_grav * s / r0 + p.c_theta * t1;
    let inv_r = 1.0 / r0;
    let inv_r2 = inv_r * inv_r;
    let d_r = [km - t1 * t1, crm, 1.0, p.g_grav * s, -2.0 * r0 * t1, 0.0];
    let d_t = [
        -(2.0 * r1 * t1 + p.g_grav * s) * inv_r2,
        2.0 * t1 * inv_r,
        0.0,
        p.g_grav * c * inv_r,
        2.0 * r1 * inv_r + p.c_theta,
        1.0,
    ];
    ([res_r, res_t], [d_r, d_t])
}

/// Residual of `model` as a traceable program with outputs `[R_r, R_θ]`.
pub struct ResidualProgram<'a> {
    pub model: &'a Model,
    pub physics: &'a PhysicsParams,
}

impl TimeProgram for ResidualProgram<'_> {
    fn trace<T: Tracer>(&self, tr: &mut T, t: f64) -> Vec<T::V> {
        let p = self.physics;
        let out = self.model.trace(tr, t);
        let [r0, r1, r2] = [0, 1, 2].map(|k| tr.component(out.r, k));
        let [t0, t1, t2] = [0, 1, 2].map(|k| tr.component(out.theta, k));

        let t1sq = tr.square(t1);
        let centripetal = tr.mul(r0, t1sq);
        let stretch = tr.offset(r0, -p.l0);
        let spring = tr.scale(stretch, p.k / p.m);
        let cos_t = tr.cos(t0);
        let grav_r = tr.scale(cos_t, p.g_grav);
        let damp_r = tr.scale(r1, p.c_r / p.m);
        let a = tr.sub(r2, centripetal);
        let a = tr.add(a, spring);
        let a = tr.sub(a, grav_r);
        let res_r = tr.add(a, damp_r);

        let rt = tr.mul(r1, t1);
        let coriolis = tr.div(rt, r0);
        let coriolis = tr.scale(coriolis, 2.0);
        let sin_t = tr.sin(t0);
        let gs = tr.div(sin_t, r0);
        let grav_t = tr.scale(gs, p.g_grav);
        let damp_t = tr.scale(t1, p.c_theta);
        let b = tr.add(t2, coriolis);
        let b = tr.add(b, grav_t);
        let res_t = tr.add(b, damp_t);
        vec![res_r, res_t]
    }
}

/// Residual `[R_r, R_θ]` at `t` from forward Taylor evaluation.
pub fn residual_at(model: &Model, params: &[f64], t: f64, p: &PhysicsParams) -> Result<[f64; 2]> {
    let (r, th) = model.eval(params, t)?;
    let u = ChannelDerivs {
        r: r.to_array(),
        theta: th.to_array(),
    };
    let res = crate::dynamics::residual(&u, p)?;
    if !(res[0].is_finite() && res[1].is_finite()) {
        return Err(Error::NonFinite { op: "residual" });
    }
    Ok(res)
}

/// Mean over the batch of `|R(t_i)|^2`.
pub fn physics_loss(model: &Model, params: &[f64], t_batch: &[f64], p: &PhysicsParams) -> Result<f64> {
    if t_batch.is_empty() {
        return Err(Error::InvalidParameter("empty collocation batch".into()));
    }
    let mut sum = 0.0;
    for &t in t_batch {
        let [a, b] = residual_at(model, params, t, p)?;
        sum += a * a + b * b;
    }
    Ok(sum / t_batch.len() as f64)
}

/// Squared distance between the induced and the target initial velocity.
pub fn ic_velocity_loss(model: &Model, params: &[f64], ic: &IcSpec) -> Result<f64> {
    let (vr, vt) = model.induced_initial_velocity(params)?;
    Ok((vr - ic.rdot0).powi(2) + (vt - ic.thetadot0).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub phys: f64,
    pub ic: f64,
}

/// Weighted loss on a given batch. The velocity penalty is skipped
/// (reported as zero) when its weight is zero.
pub fn total_loss(
    model: &Model,
    params: &[f64],
    t_batch: &[f64],
    p: &PhysicsParams,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let phys = physics_loss(model, params, t_batch, p)?;
    let ic = if cfg.lambda_ic != 0.0 {
        ic_velocity_loss(model, params, &model.ic)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        total: cfg.lambda_phys * phys + cfg.lambda_ic * ic,
        phys,
        ic,
    })
}

/// Loss and its parameter gradient.
///
/// Each collocation point is recorded on a fresh tape; the residual and its
/// partials are formed from the recorded `(r, θ)` triples and pulled back as
/// adjoint seeds, accumulating into `grad` (which is overwritten).
pub fn loss_and_grad(
    model: &Model,
    params: &[f64],
    t_batch: &[f64],
    p: &PhysicsParams,
    cfg: &TrainConfig,
    grad: &mut [f64],
) -> Result<LossBreakdown> {
    model.check_params(params)?;
    if t_batch.is_empty() {
        return Err(Error::InvalidParameter("empty collocation batch".into()));
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut tape = Tape::new(params);
    let weight = cfg.lambda_phys / t_batch.len() as f64;
    let mut phys = 0.0;
    for &t in t_batch {
        tape.clear();
        let out = model.trace(&mut tape, t);
        let (r, th) = (tape.value(out.r).to_array(), tape.value(out.theta).to_array());
        let (res, d) = residual_with_partials(r, th, p);
        if !(res[0].is_finite() && res[1].is_finite()) {
            return Err(Error::NonFinite { op: "residual" });
        }
        phys += res[0] * res[0] + res[1] * res[1];
        if weight != 0.0 {
            let mut seed = [0.0; 6];
            for (k, s) in seed.iter_mut().enumerate() {
                *s = 2.0 * weight * (res[0] * d[0][k] + res[1] * d[1][k]);
            }
            let seeds = [(out.r, [seed[0], seed[1], seed[2]]), (out.theta, [seed[3], seed[4], seed[5]])];
            tape.backward(&seeds, grad)?;
        }
    }
    phys /= t_batch.len() as f64;

    let mut ic = 0.0;
    if cfg.lambda_ic != 0.0 {
        tape.clear();
        let out = model.trace(&mut tape, 0.0);
        let er = tape.value(out.r).d1 - model.ic.rdot0;
        let et = tape.value(out.theta).d1 - model.ic.thetadot0;
        ic = er * er + et * et;
        let s = 2.0 * cfg.lambda_ic;
        let seeds: [(NodeId, [f64; 3]); 2] = [(out.r, [0.0, s * er, 0.0]), (out.theta, [0.0, s * et, 0.0])];
        tape.backward(&seeds, grad)?;
    }
    let total = cfg.lambda_phys * phys + cfg.lambda_ic * ic;
    if !total.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    Ok(LossBreakdown { total, phys, ic })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iter: usize,
    pub loss: f64,
    pub phys_loss: f64,
    pub ic_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { iter: usize, reason: String },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: ParamVector,
    /// Loss at iterations `0, log_every, 2 log_every, ...` before the update,
    /// and the loss of the final parameters at `iter = n_updates`.
    pub loss_curve: Vec<LossPoint>,
    pub status: RunStatus,
}

/// Runs `cfg.n_updates` Adam iterations from `init`.
///
/// A non-finite loss or gradient stops the run; the result then carries the
/// last finite parameters and an `Aborted` status.
pub fn train_run(
    model: &Model,
    physics: &PhysicsParams,
    cfg: &TrainConfig,
    init: ParamVector,
) -> Result<TrainResult> {
    physics.validate()?;
    cfg.validate()?;
    model.check_params(init.as_slice())?;
    let mut params = init;
    let mut state = OptimizerState::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut curve = Vec::with_capacity(cfg.n_updates / cfg.log_every + 2);

    for iter in 0..cfg.n_updates {
        let batch = sample_collocation(cfg.seed, iter as u64, cfg.n_coll, physics.t_final);
        let step = loss_and_grad(model, params.as_slice(), &batch, physics, cfg, &mut grad).and_then(|l| {
            adam_step(&mut state, params.as_mut_slice(), &grad, cfg.learning_rate, &cfg.adam)?;
            Ok(l)
        });
        match step {
            Ok(l) => {
                if iter % cfg.log_every == 0 {
                    debug!("iter {iter}: loss {:.6e}", l.total);
                    curve.push(LossPoint {
                        iter,
                        loss: l.total,
                        phys_loss: l.phys,
                        ic_loss: l.ic,
                    });
                }
            }
            Err(e) => {
                warn!("run aborted at iteration {iter}: {e}");
                return Ok(TrainResult {
                    params,
                    loss_curve: curve,
                    status: RunStatus::Aborted {
                        iter,
                        reason: e.to_string(),
                    },
                });
            }
        }
    }

    let batch = sample_collocation(cfg.seed, cfg.n_updates as u64, cfg.n_coll, physics.t_final);
    let status = match total_loss(model, params.as_slice(), &batch, physics, cfg) {
        Ok(l) if l.total.is_finite() => {
            curve.push(LossPoint {
                iter: cfg.n_updates,
                loss: l.total,
                phys_loss: l.phys,
                ic_loss: l.ic,
            });
            RunStatus::Completed
        }
        Ok(_) => RunStatus::Aborted {
            iter: cfg.n_updates,
            reason: "non-finite final loss".into(),
        },
        Err(e) => RunStatus::Aborted {
            iter: cfg.n_updates,
            reason: e.to_string(),
        },
    };
    Ok(TrainResult {
        params,
        loss_curve: curve,
        status,
    })
}

/// Residual at `t` evaluated through the traced program on Taylor values.
pub fn traced_residual(model: &Model, params: &[f64], t: f64, p: &PhysicsParams) -> [f64; 2] {
    let prog = ResidualProgram { model, physics: p };
    let mut tr = ForwardTracer::new(params);
    let out = prog.trace(&mut tr, t);
    [out[0].val, out[1].val]
}
