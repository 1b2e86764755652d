use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{csv_error, RecordStatus, RunRecord};
use crate::error::{Error, Result};
use crate::models::{GateKind, TrunkKind};
use crate::stats::{mean_ci95, setting_name, Metric, Observation, StatTestResult, Winner};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Absent for cells with fewer than two completed runs.
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model: TrunkKind,
    pub gate: GateKind,
    pub k: f64,
    pub lambda_ic: f64,
    pub n_ok: usize,
    pub n_aborted: usize,
    pub rel_l2_u: Option<MetricSummary>,
    pub max_ae_u: Option<MetricSummary>,
    /// Fewer than two completed runs.
    pub flagged: bool,
}

impl CellSummary {
    pub fn metric(&self, metric: Metric) -> Option<&MetricSummary> {
        match metric {
            Metric::RelL2U => self.rel_l2_u.as_ref(),
            Metric::MaxAeU => self.max_ae_u.as_ref(),
        }
    }
}

fn summarize(values: &[f64]) -> Result<Option<MetricSummary>> {
    Ok(match values.len() {
        0 => None,
        1 => Some(MetricSummary {
            mean: values[0],
            ci_lo: None,
            ci_hi: None,
        }),
        _ => {
            let ci = mean_ci95(values)?;
            Some(MetricSummary {
                mean: ci.mean,
                ci_lo: Some(ci.lo),
                ci_hi: Some(ci.hi),
            })
        }
    })
}

/// Groups records by `(model, gate, k, λ_IC)`; aborted runs are counted but
/// excluded from the statistics. Seeds enter in ascending order, so the
/// result does not depend on record order.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<CellSummary>> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.model
            .cmp(&b.model)
            .then(a.gate.cmp(&b.gate))
            .then(a.k.total_cmp(&b.k))
            .then(a.lambda_ic.total_cmp(&b.lambda_ic))
            .then(a.seed.cmp(&b.seed))
            .then(a.run_id.cmp(&b.run_id))
    });
    let same_cell = |a: &RunRecord, b: &RunRecord| {
        a.model == b.model && a.gate == b.gate && a.k.to_bits() == b.k.to_bits() && a.lambda_ic.to_bits() == b.lambda_ic.to_bits()
    };
    let mut cells = Vec::new();
    for group in sorted.chunk_by(|a, b| same_cell(a, b)) {
        let first = group[0];
        let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.status == RecordStatus::Ok).collect();
        let rel: Vec<f64> = ok.iter().filter_map(|r| r.rel_l2_u).collect();
        let max: Vec<f64> = ok.iter().filter_map(|r| r.max_ae_u).collect();
        let flagged = ok.len() < 2;
        if flagged {
            warn!(
                "cell {} {} k={} lambda_ic={} has {} completed runs",
                first.model,
                first.gate,
                first.k,
                first.lambda_ic,
                ok.len()
            );
        }
        cells.push(CellSummary {
            model: first.model,
            gate: first.gate,
            k: first.k,
            lambda_ic: first.lambda_ic,
            n_ok: ok.len(),
            n_aborted: group.len() - ok.len(),
            rel_l2_u: summarize(&rel)?,
            max_ae_u: summarize(&max)?,
            flagged,
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FigureVariant {
    #[serde(rename = "all")]
    All,
    #[serde(rename = "noBaselineLinear")]
    NoBaselineLinear,
    #[serde(rename = "spectralOnly")]
    SpectralOnly,
}

impl FigureVariant {
    pub const ALL: [FigureVariant; 3] = [FigureVariant::All, FigureVariant::NoBaselineLinear, FigureVariant::SpectralOnly];

    pub fn id(self) -> &'static str {
        match self {
            FigureVariant::All => "all",
            FigureVariant::NoBaselineLinear => "noBaselineLinear",
            FigureVariant::SpectralOnly => "spectralOnly",
        }
    }

    pub fn includes(self, model: TrunkKind, gate: GateKind) -> bool {
        match self {
            FigureVariant::All => true,
            FigureVariant::NoBaselineLinear => !(model == TrunkKind::BaselineMlp && gate == GateKind::Linear),
            FigureVariant::SpectralOnly => model.is_spectral(),
        }
    }
}

impl fmt::Display for FigureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FigureVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FigureVariant::ALL.into_iter().find(|v| v.id() == s).ok_or_else(|| Error::Parse {
            what: "figure variant".into(),
            msg: format!("unknown variant `{s}` (expected all|noBaselineLinear|spectralOnly)"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub model: TrunkKind,
    pub gate: GateKind,
    pub k: f64,
    pub mean: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n: usize,
}

/// Rows of one figure panel, in cell order.
pub fn emit_figure_data(cells: &[CellSummary], variant: FigureVariant, metric: Metric) -> Vec<FigureRow> {
    cells
        .iter()
        .filter(|c| variant.includes(c.model, c.gate))
        .filter_map(|c| {
            c.metric(metric).map(|s| FigureRow {
                model: c.model,
                gate: c.gate,
                k: c.k,
                mean: s.mean,
                ci_lo: s.ci_lo,
                ci_hi: s.ci_hi,
                n: c.n_ok,
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, header: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    let mut bytes = format!("{header}\n").into_bytes();
    bytes.extend(w.into_inner().map_err(|e| Error::io(path, e.into_error()))?);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_figure_csv(path: &Path, rows: &[FigureRow]) -> Result<()> {
    write_csv(path, "model,gate,k,mean,ci_lo,ci_hi,n", rows)
}

#[derive(Serialize)]
struct CellRow {
    model: TrunkKind,
    gate: GateKind,
    k: f64,
    lambda_ic: f64,
    n_ok: usize,
    n_aborted: usize,
    rel_l2_u_mean: Option<f64>,
    rel_l2_u_ci_lo: Option<f64>,
    rel_l2_u_ci_hi: Option<f64>,
    max_ae_u_mean: Option<f64>,
    max_ae_u_ci_lo: Option<f64>,
    max_ae_u_ci_hi: Option<f64>,
    flagged: bool,
}

pub fn write_cells_csv(path: &Path, cells: &[CellSummary]) -> Result<()> {
    let rows = cells.iter().map(|c| CellRow {
        model: c.model,
        gate: c.gate,
        k: c.k,
        lambda_ic: c.lambda_ic,
        n_ok: c.n_ok,
        n_aborted: c.n_aborted,
        rel_l2_u_mean: c.rel_l2_u.map(|s| s.mean),
        rel_l2_u_ci_lo: c.rel_l2_u.and_then(|s| s.ci_lo),
        rel_l2_u_ci_hi: c.rel_l2_u.and_then(|s| s.ci_hi),
        max_ae_u_mean: c.max_ae_u.map(|s| s.mean),
        max_ae_u_ci_lo: c.max_ae_u.and_then(|s| s.ci_lo),
        max_ae_u_ci_hi: c.max_ae_u.and_then(|s| s.ci_hi),
        flagged: c.flagged,
    });
    write_csv(
        path,
        "model,gate,k,lambda_ic,n_ok,n_aborted,rel_l2_u_mean,rel_l2_u_ci_lo,rel_l2_u_ci_hi,\
         max_ae_u_mean,max_ae_u_ci_lo,max_ae_u_ci_hi,flagged",
        rows,
    )
}

/// Writes `cells.csv` and one `{metric}__{variant}.csv` per metric and
/// variant. With several IC weights in the records, `lambda_ic` selects one.
pub fn write_report(records: &[RunRecord], out_dir: &Path, lambda_ic: Option<f64>) -> Result<Vec<PathBuf>> {
    let mut lambdas: Vec<f64> = records.iter().map(|r| r.lambda_ic).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let chosen = match lambda_ic {
        Some(l) => l,
        None => match lambdas.as_slice() {
            [l] => *l,
            [] => return Err(Error::InsufficientData("no run records".into())),
            many => {
                return Err(Error::InvalidParameter(format!(
                    "records hold several IC weights {many:?}; choose one"
                )))
            }
        },
    };
    let selected: Vec<RunRecord> = records.iter().filter(|r| r.lambda_ic == chosen).cloned().collect();
    if selected.is_empty() {
        return Err(Error::InsufficientData(format!("no records with lambda_ic = {chosen}")));
    }
    let cells = aggregate(&selected)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let path = out_dir.join("cells.csv");
    write_cells_csv(&path, &cells)?;
    written.push(path);
    for metric in [Metric::RelL2U, Metric::MaxAeU] {
        for variant in FigureVariant::ALL {
            let path = out_dir.join(format!("{metric}__{variant}.csv"));
            write_figure_csv(&path, &emit_figure_data(&cells, variant, metric))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Completed runs of `model` as per-metric observations for the gate
/// comparison table.
pub fn table1_observations(records: &[RunRecord], model: TrunkKind) -> Vec<Observation> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.model == model && r.status == RecordStatus::Ok) {
        for (metric, value) in [(Metric::MaxAeU, r.max_ae_u), (Metric::RelL2U, r.rel_l2_u)] {
            if let Some(value) = value {
                out.push(Observation {
                    setting: setting_name(r.lambda_ic),
                    k: r.k,
                    metric,
                    gate: r.gate,
                    seed: r.seed,
                    value,
                });
            }
        }
    }
    out
}

#[derive(Serialize)]
struct Table1Row<'a> {
    setting: &'a str,
    k: f64,
    metric: Metric,
    winner: &'static str,
    n: usize,
    mean_a: f64,
    mean_b: f64,
    frac_win: f64,
    p_raw: f64,
    p_holm: f64,
    p_one_sided: f64,
}

pub fn write_table1_csv(path: &Path, rows: &[StatTestResult]) -> Result<()> {
    let rows = rows.iter().map(|r| Table1Row {
        setting: &r.setting,
        k: r.k,
        metric: r.metric,
        winner: match r.winner {
            Some(Winner::A) => "A",
            Some(Winner::B) => "B",
            None => "none",
        },
        n: r.n,
        mean_a: r.mean_a,
        mean_b: r.mean_b,
        frac_win: r.frac_win,
        p_raw: r.p_raw,
        p_holm: r.p_holm,
        p_one_sided: r.p_one_sided,
    });
    write_csv(
        path,
        "setting,k,metric,winner,n,mean_a,mean_b,frac_win,p_raw,p_holm,p_one_sided",
        rows,
    )
}
