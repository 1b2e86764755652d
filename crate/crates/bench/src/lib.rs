//! Shared fixtures for the criterion benchmarks.

use stiffgate::models::init_params;
use stiffgate::{GateKind, IcSpec, Model, PhysicsParams, TrunkKind};

/// A model at its seeded initialization with the default physics.
pub struct Fixture {
    pub model: Model,
    pub params: Vec<f64>,
    pub physics: PhysicsParams,
}

pub fn fixture(trunk: TrunkKind, gate: GateKind, k: f64) -> Fixture {
    let physics = PhysicsParams::with_k(k);
    let model = Model::new(trunk, gate, IcSpec::default(), physics.r_min).expect("default model");
    let mut params = init_params(trunk, 0).0;
    // move the zero heads off zero so every op does real work
    let end = trunk.layout().omega.unwrap_or(params.len());
    for (i, p) in params[..end].iter_mut().enumerate() {
        *p += 0.05 * ((i as f64) * 0.37).sin();
    }
    Fixture { model, params, physics }
}
