//! Paired gate comparisons: Wilcoxon signed-rank tests, Holm step-down
//! adjustment and Student-t confidence intervals.

mod student_t;
mod wilcoxon;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

pub use student_t::{student_t_cdf, student_t_quantile};
pub use wilcoxon::{wilcoxon_signed_rank, PMethod, WilcoxonResult};

use crate::error::{Error, Result};
use crate::models::GateKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "max_ae_u")]
    MaxAeU,
    #[serde(rename = "rel_l2_u")]
    RelL2U,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::MaxAeU, Metric::RelL2U];

    pub fn id(self) -> &'static str {
        match self {
            Metric::MaxAeU => "max_ae_u",
            Metric::RelL2U => "rel_l2_u",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_ae_u" => Ok(Metric::MaxAeU),
            "rel_l2_u" => Ok(Metric::RelL2U),
            _ => Err(Error::Parse {
                what: "metric".into(),
                msg: format!("unknown metric `{s}` (expected rel_l2_u|max_ae_u)"),
            }),
        }
    }
}

/// Setting label used in the gate-comparison table.
pub fn setting_name(lambda_ic: f64) -> String {
    if lambda_ic == 0.0 {
        "noIC".to_string()
    } else if lambda_ic.fract() == 0.0 {
        format!("lIC{}", lambda_ic as i64)
    } else {
        format!("lIC{lambda_ic}")
    }
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let adj = ((m - rank) as f64 * p_values[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// `mean ± t_{0.975, n-1} s / sqrt(n)`.
pub fn mean_ci95(values: &[f64]) -> Result<MeanCi> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("confidence interval needs n >= 2, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = student_t_quantile(0.975, (n - 1) as f64)? * (var / n as f64).sqrt();
    Ok(MeanCi {
        mean,
        lo: mean - half,
        hi: mean + half,
    })
}

/// Per-seed metric values of two gates, paired by seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub seeds: Vec<u64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSample {
    /// Pairs the seeds present in both maps; unmatched seeds are reported.
    pub fn from_maps(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> (Self, Vec<u64>) {
        let mut s = PairedSample {
            seeds: Vec::new(),
            a: Vec::new(),
            b: Vec::new(),
        };
        let mut unmatched = Vec::new();
        for (seed, va) in a {
            match b.get(seed) {
                Some(vb) => {
                    s.seeds.push(*seed);
                    s.a.push(*va);
                    s.b.push(*vb);
                }
                None => unmatched.push(*seed),
            }
        }
        unmatched.extend(b.keys().filter(|k| !a.contains_key(k)));
        (s, unmatched)
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub setting: String,
    pub k: f64,
    pub metric: Metric,
    /// Gate with the lower mean; `None` when the two samples are identical.
    pub winner: Option<Winner>,
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Fraction of seeds where the winner is strictly lower.
    pub frac_win: f64,
    pub frac_loss: f64,
    pub frac_tie: f64,
    pub p_raw: f64,
    pub p_holm: f64,
    pub p_one_sided: f64,
    pub n_zero: usize,
    pub degenerate: bool,
}

/// Compares gate A with gate B on one paired sample. `p_holm` is left equal
/// to `p_raw` until a family adjustment is applied.
pub fn compare_pair(setting: &str, k: f64, metric: Metric, sample: &PairedSample) -> Result<StatTestResult> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::InsufficientData("no paired seeds".into()));
    }
    let mean_a = sample.a.iter().sum::<f64>() / n as f64;
    let mean_b = sample.b.iter().sum::<f64>() / n as f64;
    let w = wilcoxon_signed_rank(&sample.a, &sample.b)?;
    let winner = if w.degenerate {
        None
    } else if mean_a < mean_b {
        Some(Winner::A)
    } else if mean_b < mean_a {
        Some(Winner::B)
    } else {
        None
    };
    let (mut lower_a, mut lower_b, mut ties) = (0usize, 0usize, 0usize);
    for (x, y) in sample.a.iter().zip(&sample.b) {
        if x < y {
            lower_a += 1;
        } else if y < x {
            lower_b += 1;
        } else {
            ties += 1;
        }
    }
    let (win, loss) = match winner {
        Some(Winner::B) => (lower_b, lower_a),
        _ => (lower_a, lower_b),
    };
    let frac = |c: usize| c as f64 / n as f64;
    Ok(StatTestResult {
        setting: setting.to_string(),
        k,
        metric,
        winner,
        n,
        mean_a,
        mean_b,
        frac_win: frac(win),
        frac_loss: frac(loss),
        frac_tie: frac(ties),
        p_raw: w.p_two_sided,
        p_holm: w.p_two_sided,
        p_one_sided: w.p_one_sided,
        n_zero: w.n_zero,
        degenerate: w.degenerate,
    })
}

/// One metric value of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub setting: String,
    pub k: f64,
    pub metric: Metric,
    pub gate: GateKind,
    pub seed: u64,
    pub value: f64,
}

/// One row per `(setting, k, metric)` with A = exponential and B = linear
/// gate, Holm-adjusted across all rows of the same setting.
pub fn gate_comparison_table(observations: &[Observation]) -> Result<Vec<StatTestResult>> {
    type Cell = (String, u64, Metric);
    type Pair = (BTreeMap<u64, f64>, BTreeMap<u64, f64>);
    let mut cells: BTreeMap<Cell, Pair> = BTreeMap::new();
    for o in observations {
        let entry = cells
            .entry((o.setting.clone(), o.k.to_bits(), o.metric))
            .or_default();
        let side = match o.gate {
            GateKind::Exponential => &mut entry.0,
            GateKind::Linear => &mut entry.1,
        };
        if side.insert(o.seed, o.value).is_some() {
            return Err(Error::InvalidParameter(format!(
                "duplicate observation for setting {} k {} {} gate {} seed {}",
                o.setting, o.k, o.metric, o.gate, o.seed
            )));
        }
    }

    let mut rows: Vec<StatTestResult> = Vec::new();
    for ((setting, k_bits, metric), (a, b)) in &cells {
        let k = f64::from_bits(*k_bits);
        let (sample, unmatched) = PairedSample::from_maps(a, b);
        if !unmatched.is_empty() {
            warn!("{setting} k={k} {metric}: seeds {unmatched:?} lack a partner gate and are dropped");
        }
        match compare_pair(setting, k, *metric, &sample) {
            Ok(r) => rows.push(r),
            Err(e) => warn!("{setting} k={k} {metric}: row omitted ({e})"),
        }
    }
    rows.sort_by(|x, y| {
        x.setting
            .cmp(&y.setting)
            .then(x.k.total_cmp(&y.k))
            .then(x.metric.cmp(&y.metric))
    });

    let mut start = 0;
    while start < rows.len() {
        let end = start + rows[start..].iter().take_while(|r| r.setting == rows[start].setting).count();
        let raw: Vec<f64> = rows[start..end].iter().map(|r| r.p_raw).collect();
        for (r, p) in rows[start..end].iter_mut().zip(holm_adjust(&raw)?) {
            r.p_holm = p;
        }
        start = end;
    }
    Ok(rows)
}
