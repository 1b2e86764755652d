//! Experiment orchestration: single runs, sweeps over
//! `(model, gate, k, λ_IC, seed)`, result records and aggregated reports.

mod records;
mod report;
mod sweep;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use records::{append_record, read_records, run_sweep, RecordStatus, RunRecord, SweepSummary};
pub use report::{
    aggregate, emit_figure_data, table1_observations, write_cells_csv, write_figure_csv, write_report,
    write_table1_csv, CellSummary, FigureRow, FigureVariant, MetricSummary,
};
pub use sweep::{expand_sweep, CellSeeds, SweepSpec};

use crate::dynamics::PhysicsParams;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, MetricResult, ReferenceCache, N_EVAL};
use crate::models::{init_params, GateKind, IcSpec, Model, TrunkKind};
use crate::training::{train_run, RunStatus, TrainConfig, TrainResult};

fn default_n_eval() -> usize {
    N_EVAL
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: TrunkKind,
    pub gate: GateKind,
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default)]
    pub ic: IcSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
}

impl RunConfig {
    pub fn new(model: TrunkKind, gate: GateKind) -> Self {
        RunConfig {
            model,
            gate,
            physics: PhysicsParams::default(),
            ic: IcSpec::default(),
            train: TrainConfig::default(),
            n_eval: N_EVAL,
        }
    }

    /// Hex of the first 16 bytes of SHA-256 over the canonical JSON.
    pub fn run_id(&self) -> String {
        let json = serde_json::to_vec(self).expect("plain data serializes");
        Sha256::digest(&json)[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.train.validate()?;
        if self.n_eval < 2 {
            return Err(Error::InvalidParameter(format!("n_eval must be >= 2, got {}", self.n_eval)));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<Model> {
        Model::new(self.model, self.gate, self.ic, self.physics.r_min)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub config: RunConfig,
    pub train: TrainResult,
    /// Present iff the run completed and evaluated.
    pub metrics: Option<MetricResult>,
    pub ref_cache_key: Option<String>,
    pub status: RecordStatus,
    /// Why the run was aborted, if it was.
    pub reason: Option<String>,
    pub wall_time: f64,
}

impl RunOutcome {
    pub fn record(&self) -> RunRecord {
        RunRecord {
            run_id: self.run_id.clone(),
            model: self.config.model,
            gate: self.config.gate,
            k: self.config.physics.k,
            lambda_ic: self.config.train.lambda_ic,
            seed: self.config.train.seed,
            rel_l2_u: self.metrics.as_ref().map(|m| m.rel_l2_u),
            max_ae_u: self.metrics.as_ref().map(|m| m.max_ae_u),
            final_loss: self.train.loss_curve.last().map(|p| p.loss),
            status: self.status,
            wall_time: self.wall_time,
        }
    }
}

/// Trains and evaluates one configuration.
pub fn execute_run(cfg: &RunConfig, cache: &ReferenceCache) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let run_id = cfg.run_id();
    let model = cfg.build_model()?;
    let init = init_params(cfg.model, cfg.train.seed);
    let train = train_run(&model, &cfg.physics, &cfg.train, init)?;

    let (mut metrics, mut key, mut reason) = (None, None, None);
    match &train.status {
        RunStatus::Completed => {
            let evaluated = cache
                .get(&cfg.physics, &cfg.ic, cfg.n_eval)
                .and_then(|(k, traj)| Ok((k, evaluate_model(&model, train.params.as_slice(), &traj)?)));
            match evaluated {
                Ok((k, m)) => {
                    key = Some(k);
                    metrics = Some(m);
                }
                Err(e) => {
                    warn!("run {run_id}: evaluation failed: {e}");
                    reason = Some(format!("evaluation failed: {e}"));
                }
            }
        }
        RunStatus::Aborted { reason: r, .. } => reason = Some(r.clone()),
    }
    let status = if metrics.is_some() {
        RecordStatus::Ok
    } else {
        RecordStatus::Aborted
    };
    let wall_time = start.elapsed().as_secs_f64();
    info!(
        "run {run_id} {} {} k={} lambda_ic={} seed={}: {:?} in {wall_time:.1}s",
        cfg.model, cfg.gate, cfg.physics.k, cfg.train.lambda_ic, cfg.train.seed, status
    );
    Ok(RunOutcome {
        run_id,
        config: cfg.clone(),
        train,
        metrics,
        ref_cache_key: key,
        status,
        reason,
        wall_time,
    })
}

#[derive(Serialize)]
struct Environment {
    package_version: &'static str,
    os: &'static str,
    arch: &'static str,
    threads: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    config: &'a RunConfig,
    status: RecordStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
    train_status: &'a RunStatus,
    n_params: usize,
    wall_time: f64,
    environment: Environment,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    rel_l2_u: f64,
    max_ae_u: f64,
    n_eval: usize,
    ref_cache_key: &'a str,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json`, `loss_curve.csv`, `params.bin` and, for completed
/// runs, `metrics.json` into `dir`.
pub fn write_run_artifacts(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        run_id: &outcome.run_id,
        config: &outcome.config,
        status: outcome.status,
        reason: outcome.reason.as_deref(),
        train_status: &outcome.train.status,
        n_params: outcome.train.params.len(),
        wall_time: outcome.wall_time,
        environment: Environment {
            package_version: env!("CARGO_PKG_VERSION"),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            threads: rayon::current_num_threads(),
        },
    };
    write_file(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;

    let curve_path = dir.join("loss_curve.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &outcome.train.loss_curve {
        w.serialize(p).map_err(|e| csv_error(&curve_path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(&curve_path, e.into_error()))?;
    let bytes = if bytes.is_empty() {
        b"iter,loss,phys_loss,ic_loss\n".to_vec()
    } else {
        bytes
    };
    write_file(&curve_path, &bytes)?;

    write_file(&dir.join("params.bin"), &outcome.train.params.to_bytes())?;

    let metrics_path = dir.join("metrics.json");
    match (&outcome.metrics, &outcome.ref_cache_key) {
        (Some(m), Some(key)) => {
            let file = MetricsFile {
                rel_l2_u: m.rel_l2_u,
                max_ae_u: m.max_ae_u,
                n_eval: m.n_eval,
                ref_cache_key: key,
            };
            let mut bytes = serde_json::to_vec_pretty(&file)?;
            bytes.write_all(b"\n").expect("writing to a Vec");
            write_file(&metrics_path, &bytes)?;
        }
        _ => {
            if metrics_path.exists() {
                fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
            }
        }
    }
    Ok(())
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        what: path.display().to_string(),
        msg: e.to_string(),
    }
}
