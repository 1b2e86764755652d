//! The planar spring–pendulum in polar coordinates.
//!
//! ```text
//! r''     = r θ'^2 - (k/m)(r - L0) + g cos θ - (c_r/m) r'
//! θ''     = -2 r' θ' / r - (g/r) sin θ - c_θ θ'
//! ```

mod dop853;

use serde::{Deserialize, Serialize};

pub use dop853::{Dop853Options, Dop853Stats};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsParams {
    pub k: f64,
    pub m: f64,
    pub l0: f64,
    pub g_grav: f64,
    pub c_r: f64,
    pub c_theta: f64,
    pub r_min: f64,
    /// Time horizon `T`.
    pub t_final: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            k: 20.0,
            m: 1.0,
            l0: 1.0,
            g_grav: 9.81,
            c_r: 0.0,
            c_theta: 0.0,
            r_min: 1e-4,
            t_final: 10.0,
        }
    }
}

impl PhysicsParams {
    pub fn with_k(k: f64) -> Self {
        PhysicsParams {
            k,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("m", self.m),
            ("l0", self.l0),
            ("r_min", self.r_min),
            ("t_final", self.t_final),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("c_r", self.c_r), ("c_theta", self.c_theta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !self.g_grav.is_finite() {
            return Err(Error::InvalidParameter("g_grav must be finite".into()));
        }
        Ok(())
    }

    /// Radius at which gravity balances the spring with the mass at rest.
    pub fn equilibrium_radius(&self) -> f64 {
        self.l0 + self.m * self.g_grav / self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub r: f64,
    pub theta: f64,
    pub r_dot: f64,
    pub theta_dot: f64,
}

impl State {
    pub const fn new(r: f64, theta: f64, r_dot: f64, theta_dot: f64) -> Self {
        State {
            r,
            theta,
            r_dot,
            theta_dot,
        }
    }

    /// The mass hanging at rest at the spring's equilibrium length.
    pub fn equilibrium(p: &PhysicsParams) -> Self {
        State::new(p.equilibrium_radius(), 0.0, 0.0, 0.0)
    }

    fn to_array(self) -> [f64; 4] {
        [self.r, self.theta, self.r_dot, self.theta_dot]
    }

    fn from_array(a: [f64; 4]) -> Self {
        State::new(a[0], a[1], a[2], a[3])
    }
}

/// Value and first two time derivatives of both channels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelDerivs {
    pub r: [f64; 3],
    pub theta: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.states.len() {
            return Err(Error::InvalidParameter(format!(
                "trajectory has {} times but {} states",
                self.times.len(),
                self.states.len()
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("trajectory times must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// `n` equally spaced instants covering `[0, t_final]` inclusive.
pub fn uniform_grid(t_final: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let dt = t_final / (n - 1) as f64;
            let mut g: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
            g[n - 1] = t_final;
            g
        }
    }
}

/// Accelerations `(r'', θ'')` of the free dynamics.
pub fn rhs(s: &State, p: &PhysicsParams) -> Result<(f64, f64)> {
    if !(s.r > 0.0) {
        return Err(Error::Domain(format!("rhs requires r > 0, got r = {}", s.r)));
    }
    let r_ddot = s.r * s.theta_dot * s.theta_dot - (p.k / p.m) * (s.r - p.l0) + p.g_grav * s.theta.cos()
        - (p.c_r / p.m) * s.r_dot;
    let theta_ddot = -2.0 * s.r_dot * s.theta_dot / s.r - (p.g_grav / s.r) * s.theta.sin() - p.c_theta * s.theta_dot;
    Ok((r_ddot, theta_ddot))
}

/// ODE residual `[r'' - rhs_r, θ'' - rhs_θ]` of a candidate trajectory.
pub fn residual(u: &ChannelDerivs, p: &PhysicsParams) -> Result<[f64; 2]> {
    let s = State::new(u.r[0], u.theta[0], u.r[1], u.theta[1]);
    let (ar, at) = rhs(&s, p)?;
    Ok([u.r[2] - ar, u.theta[2] - at])
}

/// Total mechanical energy (kinetic + spring + gravitational, with the
/// gravitational potential measured from the pivot).
pub fn energy(s: &State, p: &PhysicsParams) -> f64 {
    0.5 * p.m * (s.r_dot * s.r_dot + s.r * s.r * s.theta_dot * s.theta_dot) + 0.5 * p.k * (s.r - p.l0).powi(2)
        - p.m * p.g_grav * s.r * s.theta.cos()
}

/// High-accuracy reference solution sampled at `grid` (which must start at 0).
pub fn solve_reference(s0: &State, p: &PhysicsParams, grid: &[f64]) -> Result<Trajectory> {
    solve_reference_with(s0, p, grid, &Dop853Options::default()).map(|(traj, _)| traj)
}

pub fn solve_reference_with(
    s0: &State,
    p: &PhysicsParams,
    grid: &[f64],
    opts: &Dop853Options,
) -> Result<(Trajectory, Dop853Stats)> {
    p.validate()?;
    if !(s0.r > p.r_min) {
        return Err(Error::InvalidParameter(format!(
            "initial radius {} must exceed r_min = {}",
            s0.r, p.r_min
        )));
    }
    match grid.first() {
        Some(0.0) => {}
        _ => return Err(Error::InvalidParameter("reference grid must start at t = 0".into())),
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("reference grid must be strictly increasing".into()));
    }
    if *grid.last().unwrap() > p.t_final * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "reference grid ends at {} beyond T = {}",
            grid.last().unwrap(),
            p.t_final
        )));
    }

    let f = |_t: f64, y: &[f64; 4]| -> Result<[f64; 4]> {
        let (ar, at) = rhs(&State::from_array(*y), p)?;
        Ok([y[2], y[3], ar, at])
    };
    let r_min = p.r_min;
    let guard = |t: f64, y: &[f64; 4]| -> Result<()> {
        if y[0] <= r_min {
            return Err(Error::RadialFloor { t, r: y[0], r_min });
        }
        Ok(())
    };
    let (ys, stats) = dop853::integrate(f, s0.to_array(), grid, opts, guard)?;
    let traj = Trajectory {
        times: grid.to_vec(),
        states: ys.into_iter().map(State::from_array).collect(),
    };
    Ok((traj, stats))
}
