//! Trajectory error metrics against the reference solution.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use log::debug;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{solve_reference, uniform_grid, PhysicsParams, Trajectory};
use crate::error::{Error, Result};
use crate::models::{IcSpec, Model};

pub const N_EVAL: usize = 2000;

/// `atan2(sin(θ - θ_ref), cos(θ - θ_ref))`, in `(-π, π]`.
pub fn wrap_angle_diff(theta: f64, theta_ref: f64) -> f64 {
    let d = theta - theta_ref;
    d.sin().atan2(d.cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub rel_l2_u: f64,
    pub max_ae_u: f64,
    pub n_eval: usize,
}

fn check_grids(pred: &Trajectory, reference: &Trajectory) -> Result<()> {
    pred.validate()?;
    reference.validate()?;
    if pred.len() != reference.len() {
        return Err(Error::GridMismatch(format!(
            "{} predicted vs {} reference points",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::GridMismatch("empty grids".into()));
    }
    let scale = reference.times.last().map_or(1.0, |t| t.abs().max(1.0));
    if let Some((a, b)) = pred
        .times
        .iter()
        .zip(&reference.times)
        .find(|(a, b)| (*a - *b).abs() > 1e-12 * scale)
    {
        return Err(Error::GridMismatch(format!("time {a} vs {b}")));
    }
    Ok(())
}

/// ReL2E and MaxAE of the position pair `u = (r, θ)` with the angular error
/// wrapped. The normalizing norm uses the raw reference angle.
pub fn metrics(pred: &Trajectory, reference: &Trajectory) -> Result<MetricResult> {
    check_grids(pred, reference)?;
    let mut err_sq = 0.0;
    let mut ref_sq = 0.0;
    let mut max_ae: f64 = 0.0;
    for (p, q) in pred.states.iter().zip(&reference.states) {
        let er = p.r - q.r;
        let et = wrap_angle_diff(p.theta, q.theta);
        let e2 = er * er + et * et;
        err_sq += e2;
        ref_sq += q.r * q.r + q.theta * q.theta;
        max_ae = max_ae.max(e2.sqrt());
    }
    if !(ref_sq > 0.0) {
        return Err(Error::InsufficientData("reference trajectory has zero norm".into()));
    }
    let out = MetricResult {
        rel_l2_u: (err_sq / ref_sq).sqrt(),
        max_ae_u: max_ae,
        n_eval: pred.len(),
    };
    if !(out.rel_l2_u.is_finite() && out.max_ae_u.is_finite()) {
        return Err(Error::NonFinite { op: "metrics" });
    }
    Ok(out)
}

/// Predicted trajectory of a trained model on the reference grid, then its
/// metrics.
pub fn evaluate_model(model: &Model, params: &[f64], reference: &Trajectory) -> Result<MetricResult> {
    let pred = model.trajectory(params, &reference.times)?;
    metrics(&pred, reference)
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    physics: &'a PhysicsParams,
    ic: &'a IcSpec,
    n_eval: usize,
    solver: &'static str,
}

/// Content address of a reference trajectory: hex SHA-256 prefix of the
/// canonical JSON of everything that determines it.
pub fn reference_key(physics: &PhysicsParams, ic: &IcSpec, n_eval: usize) -> String {
    let material = KeyMaterial {
        physics,
        ic,
        n_eval,
        solver: "dop853/rtol=1e-10/atol=1e-12",
    };
    let json = serde_json::to_vec(&material).expect("plain data serializes");
    let digest = Sha256::digest(&json);
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Reference trajectories keyed by [`reference_key`], kept in memory and
/// optionally mirrored to a directory of JSON files.
#[derive(Debug, Default)]
pub struct ReferenceCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Arc<Trajectory>>>,
}

impl ReferenceCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        ReferenceCache {
            dir: Some(dir.into()),
            memory: Mutex::default(),
        }
    }

    /// Honors `STIFFGATE_CACHE` when set.
    pub fn from_env() -> Self {
        match std::env::var_os("STIFFGATE_CACHE") {
            Some(dir) if !dir.is_empty() => Self::with_dir(dir),
            _ => Self::in_memory(),
        }
    }

    pub fn get(&self, physics: &PhysicsParams, ic: &IcSpec, n_eval: usize) -> Result<(String, Arc<Trajectory>)> {
        let key = reference_key(physics, ic, n_eval);
        if let Some(traj) = self.memory.lock().expect("cache lock").get(&key) {
            return Ok((key, Arc::clone(traj)));
        }
        let traj = match self.load(&key)? {
            Some(t) => t,
            None => {
                debug!("integrating reference {key}");
                let grid = uniform_grid(physics.t_final, n_eval);
                let t = solve_reference(&ic.state(), physics, &grid)?;
                self.store(&key, &t)?;
                t
            }
        };
        let traj = Arc::new(traj);
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key.clone(), Arc::clone(&traj));
        Ok((key, traj))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("ref_{key}.json")))
    }

    fn load(&self, key: &str) -> Result<Option<Trajectory>> {
        let Some(path) = self.path(key) else {
            return Ok(None);
        };
        match fs::read(&path) {
            Ok(bytes) => {
                let t: Trajectory = serde_json::from_slice(&bytes)?;
                t.validate()?;
                Ok(Some(t))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn store(&self, key: &str, traj: &Trajectory) -> Result<()> {
        let Some(path) = self.path(key) else {
            return Ok(());
        };
        let dir = path.parent().expect("cache file has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        // Write-then-rename so concurrent readers never see a partial file.
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("json.{}.{n}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_vec(traj)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::State;
    use proptest::prelude::*;

    fn synthetic(n: usize) -> Trajectory {
        let times = uniform_grid(10.0, n);
        let states = times
            .iter()
            .map(|&t| State::new(1.5 + 0.1 * t.sin(), 1.0 + 0.3 * t, 0.1 * t.cos(), 0.3))
            .collect();
        Trajectory { times, states }
    }

    #[test]
    fn wrapped_differences() {
        assert_eq!(wrap_angle_diff(1.0, 1.0), 0.0);
        let expect = 6.4 - 2.0 * std::f64::consts::PI;
        assert!((wrap_angle_diff(3.2, -3.2) - expect).abs() < 1e-12);
        assert!((wrap_angle_diff(3.2, -3.2) - 0.116_814_7).abs() < 1e-7);
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let r = synthetic(50);
        let m = metrics(&r, &r).unwrap();
        assert_eq!((m.rel_l2_u, m.max_ae_u, m.n_eval), (0.0, 0.0, 50));
    }

    #[test]
    fn radial_shift_closed_form() {
        let reference = synthetic(200);
        let delta = 0.01;
        let mut pred = reference.clone();
        pred.states.iter_mut().for_each(|s| s.r += delta);
        let m = metrics(&pred, &reference).unwrap();
        let ref_norm = reference
            .states
            .iter()
            .map(|s| s.r * s.r + s.theta * s.theta)
            .sum::<f64>()
            .sqrt();
        assert!((m.max_ae_u - delta).abs() < 1e-12);
        let expect = delta * (200f64).sqrt() / ref_norm;
        assert!((m.rel_l2_u - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = synthetic(20);
        let b = synthetic(21);
        assert!(matches!(metrics(&a, &b), Err(Error::GridMismatch(_))));
        let mut c = a.clone();
        c.times[5] += 1e-3;
        assert!(matches!(metrics(&c, &a), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn max_dominates_rms() {
        let reference = synthetic(100);
        let mut pred = reference.clone();
        for (i, s) in pred.states.iter_mut().enumerate() {
            s.r += 0.01 * (i as f64 * 0.37).sin();
            s.theta -= 0.02 * (i as f64 * 0.11).cos();
        }
        let m = metrics(&pred, &reference).unwrap();
        let ref_norm = reference
            .states
            .iter()
            .map(|s| s.r * s.r + s.theta * s.theta)
            .sum::<f64>()
            .sqrt();
        let rms = m.rel_l2_u * ref_norm / (100f64).sqrt();
        assert!(m.max_ae_u >= rms);
    }

    #[test]
    fn cache_keys_depend_on_inputs() {
        let p = PhysicsParams::with_k(20.0);
        let ic = IcSpec::default();
        let k = reference_key(&p, &ic, N_EVAL);
        assert_eq!(k.len(), 32);
        assert_eq!(k, reference_key(&p, &ic, N_EVAL));
        assert_ne!(k, reference_key(&PhysicsParams::with_k(60.0), &ic, N_EVAL));
        assert_ne!(k, reference_key(&p, &ic, 1000));
    }

    #[test]
    fn disk_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = PhysicsParams::with_k(20.0);
        let ic = IcSpec::default();
        let (key, first) = ReferenceCache::with_dir(dir.path()).get(&p, &ic, 101).unwrap();
        assert!(dir.path().join(format!("ref_{key}.json")).exists());
        let (_, second) = ReferenceCache::with_dir(dir.path()).get(&p, &ic, 101).unwrap();
        assert_eq!(*first, *second);
        let (_, fresh) = ReferenceCache::in_memory().get(&p, &ic, 101).unwrap();
        assert_eq!(*first, *fresh);
    }

    proptest! {
        #[test]
        fn wrap_is_periodic_and_bounded(a in -20.0f64..20.0, b in -20.0f64..20.0, n in -3i32..3) {
            let d = wrap_angle_diff(a, b);
            prop_assert!(d > -std::f64::consts::PI - 1e-12 && d <= std::f64::consts::PI + 1e-12);
            let shifted = wrap_angle_diff(a + 2.0 * std::f64::consts::PI * n as f64, b);
            let gap = (d - shifted).abs();
            prop_assert!(gap < 1e-9 || (gap - 2.0 * std::f64::consts::PI).abs() < 1e-9);
        }

        // The ReL2E normalizer uses the raw reference angle, so only the
        // error side (and hence MaxAE) is winding invariant.
        #[test]
        fn common_winding_leaves_errors(n in -3i32..3) {
            let reference = synthetic(40);
            let mut pred = reference.clone();
            pred.states.iter_mut().for_each(|s| { s.r += 0.02; s.theta += 0.05; });
            let base = metrics(&pred, &reference).unwrap();
            let shift = 2.0 * std::f64::consts::PI * n as f64;
            let (mut p2, mut r2) = (pred.clone(), reference.clone());
            p2.states.iter_mut().for_each(|s| s.theta += shift);
            r2.states.iter_mut().for_each(|s| s.theta += shift);
            let moved = metrics(&p2, &r2).unwrap();
            prop_assert!((moved.max_ae_u - base.max_ae_u).abs() < 1e-9);
        }
    }
}
