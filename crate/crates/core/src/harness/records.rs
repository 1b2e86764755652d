use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{csv_error, execute_run, write_run_artifacts, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::ReferenceCache;
use crate::models::{GateKind, TrunkKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Aborted,
}

/// One line of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub model: TrunkKind,
    pub gate: GateKind,
    pub k: f64,
    pub lambda_ic: f64,
    pub seed: u64,
    pub rel_l2_u: Option<f64>,
    pub max_ae_u: Option<f64>,
    pub final_loss: Option<f64>,
    pub status: RecordStatus,
    pub wall_time: f64,
}

const HEADER: &str = "run_id,model,gate,k,lambda_ic,seed,rel_l2_u,max_ae_u,final_loss,status,wall_time\n";

/// Reads every record of a results file.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let rec: RunRecord = rec.map_err(|e| csv_error(path, e))?;
        if (rec.status == RecordStatus::Ok) != (rec.rel_l2_u.is_some() && rec.max_ae_u.is_some()) {
            return Err(Error::Parse {
                what: path.display().to_string(),
                msg: format!("run {}: metrics must be present exactly for ok runs", rec.run_id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Appends one record under an exclusive file lock, writing the header
/// first if the file is new or empty.
pub fn append_record(path: &Path, record: &RunRecord) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.lock().map_err(|e| Error::io(path, e))?;
    let result = (|| {
        let len = file.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(record).map_err(|e| csv_error(path, e))?;
        let mut bytes = if len == 0 { HEADER.as_bytes().to_vec() } else { Vec::new() };
        bytes.extend(w.into_inner().map_err(|e| Error::io(path, e.into_error()))?);
        file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        file.flush().map_err(|e| Error::io(path, e))
    })();
    file.unlock().map_err(|e| Error::io(path, e))?;
    result
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSummary {
    pub executed: usize,
    pub skipped: usize,
    pub aborted: usize,
    pub failed: usize,
    pub results_path: PathBuf,
}

/// Runs every configuration not yet recorded in `out_dir/runs.csv` on a pool
/// of `workers` threads. Per-run artifacts go to `out_dir/runs/<run_id>/`.
pub fn run_sweep(runs: &[RunConfig], out_dir: &Path, workers: usize, cache: &ReferenceCache) -> Result<SweepSummary> {
    fs::create_dir_all(out_dir.join("runs")).map_err(|e| Error::io(out_dir, e))?;
    let results_path = out_dir.join("runs.csv");
    let done: HashSet<String> = match File::open(&results_path) {
        Ok(_) => read_records(&results_path)?.into_iter().map(|r| r.run_id).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashSet::new(),
        Err(e) => return Err(Error::io(&results_path, e)),
    };
    let todo: Vec<&RunConfig> = runs.iter().filter(|r| !done.contains(&r.run_id())).collect();
    let skipped = runs.len() - todo.len();
    info!("{} runs to execute, {skipped} already recorded", todo.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let writer = Mutex::new(());
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        todo.par_iter()
            .map(|cfg| {
                let outcome = execute_run(cfg, cache)?;
                write_run_artifacts(&out_dir.join("runs").join(&outcome.run_id), &outcome)?;
                let _guard = writer.lock().expect("results writer lock");
                append_record(&results_path, &outcome.record())?;
                Ok(outcome.status == RecordStatus::Aborted)
            })
            .collect()
    });

    let mut summary = SweepSummary {
        skipped,
        results_path,
        ..Default::default()
    };
    let mut first_err = None;
    for o in outcomes {
        match o {
            Ok(aborted) => {
                summary.executed += 1;
                summary.aborted += usize::from(aborted);
            }
            Err(e) => {
                warn!("run failed: {e}");
                summary.failed += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) if summary.executed == 0 => Err(e),
        _ => Ok(summary),
    }
}
