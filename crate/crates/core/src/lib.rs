//! Physics-informed networks with exchangeable initial-condition gates on the
//! elastic pendulum.

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod diagnostics;
pub mod dynamics;
mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod harness;
pub mod models;
pub mod rng;
pub mod stats;
pub mod training;

pub use dynamics::{PhysicsParams, State, Trajectory};
pub use error::{Error, Result};
pub use models::{GateKind, IcSpec, Model, ParamVector, TrunkKind};
