use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{default_n_eval, RunConfig};
use crate::dynamics::PhysicsParams;
use crate::error::{Error, Result};
use crate::models::{GateKind, IcSpec, TrunkKind};
use crate::training::TrainConfig;

/// Seed list for the cells matching every non-empty filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSeeds {
    #[serde(default)]
    pub models: Vec<TrunkKind>,
    #[serde(default)]
    pub gates: Vec<GateKind>,
    #[serde(default)]
    pub k_values: Vec<f64>,
    #[serde(default)]
    pub lambda_ic_values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl CellSeeds {
    fn matches(&self, model: TrunkKind, gate: GateKind, k: f64, lambda_ic: f64) -> bool {
        (self.models.is_empty() || self.models.contains(&model))
            && (self.gates.is_empty() || self.gates.contains(&gate))
            && (self.k_values.is_empty() || self.k_values.contains(&k))
            && (self.lambda_ic_values.is_empty() || self.lambda_ic_values.contains(&lambda_ic))
    }
}

/// Cartesian sweep over models, gates, stiffness, IC weight and seeds.
/// `physics.k`, `train.lambda_ic` and `train.seed` are overridden per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub models: Vec<TrunkKind>,
    pub gates: Vec<GateKind>,
    pub k_values: Vec<f64>,
    pub lambda_ic_values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// First match wins; unmatched cells use `seeds`.
    #[serde(default)]
    pub cell_seeds: Vec<CellSeeds>,
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default)]
    pub ic: IcSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
}

impl SweepSpec {
    pub fn seeds_for(&self, model: TrunkKind, gate: GateKind, k: f64, lambda_ic: f64) -> &[u64] {
        self.cell_seeds
            .iter()
            .find(|c| c.matches(model, gate, k, lambda_ic))
            .map_or(&self.seeds, |c| &c.seeds)
    }
}

/// Run list ordered by `(model, gate, k, λ_IC, seed)`, deduplicated by run id.
pub fn expand_sweep(spec: &SweepSpec) -> Result<Vec<RunConfig>> {
    let mut runs = Vec::new();
    for &model in &spec.models {
        for &gate in &spec.gates {
            for &k in &spec.k_values {
                for &lambda_ic in &spec.lambda_ic_values {
                    for &seed in spec.seeds_for(model, gate, k, lambda_ic) {
                        let mut cfg = RunConfig {
                            model,
                            gate,
                            physics: spec.physics,
                            ic: spec.ic,
                            train: spec.train,
                            n_eval: spec.n_eval,
                        };
                        cfg.physics.k = k;
                        cfg.train.lambda_ic = lambda_ic;
                        cfg.train.seed = seed;
                        cfg.validate()?;
                        runs.push(cfg);
                    }
                }
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::InvalidParameter("sweep expands to no runs".into()));
    }
    runs.sort_by(|a, b| {
        a.model
            .cmp(&b.model)
            .then(a.gate.cmp(&b.gate))
            .then(a.physics.k.total_cmp(&b.physics.k))
            .then(a.train.lambda_ic.total_cmp(&b.train.lambda_ic))
            .then(a.train.seed.cmp(&b.train.seed))
    });
    let mut seen = HashSet::new();
    runs.retain(|r| seen.insert(r.run_id()));
    Ok(runs)
}
