use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by the exact distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
    /// Every difference is zero.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Number of non-zero differences used.
    pub n: usize,
    pub n_zero: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_two_sided: f64,
    /// Tail in the direction of the sample with the smaller mean.
    pub p_one_sided: f64,
    /// `P(W+ <= observed)`: evidence that `a` tends to be below `b`.
    pub p_lower: f64,
    /// `P(W+ >= observed)`: evidence that `a` tends to be above `b`.
    pub p_upper: f64,
    pub method: PMethod,
    pub degenerate: bool,
}

/// Midranks of `|d|`, doubled so that they are integers.
fn doubled_midranks(abs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; doubled midrank = i + j + 2
        for &p in &idx[i..=j] {
            ranks[p] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Number of sign assignments giving each doubled W+ value.
fn subset_sum_counts(ranks: &[u64]) -> Vec<u64> {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Paired Wilcoxon signed-rank test on `d = a - b`. Zero differences are
/// dropped, tied magnitudes get midranks. The null distribution is exact
/// (ties included) for up to 25 non-zero differences, otherwise a
/// tie-corrected normal approximation without continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InsufficientData("signed-rank test on an empty sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "wilcoxon_signed_rank" });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    let n_zero = a.len() - n;
    let mean_a = a.iter().sum::<f64>() / a.len() as f64;
    let mean_b = b.iter().sum::<f64>() / b.len() as f64;

    if n == 0 {
        return Ok(WilcoxonResult {
            n,
            n_zero,
            w_plus: 0.0,
            w_minus: 0.0,
            p_two_sided: 1.0,
            p_one_sided: 1.0,
            p_lower: 1.0,
            p_upper: 1.0,
            method: PMethod::Degenerate,
            degenerate: true,
        });
    }

    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_midranks(&abs);
    let w2_plus: u64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| *r).sum();
    let total2: u64 = ranks.iter().sum();
    let w_plus = w2_plus as f64 / 2.0;
    let w_minus = (total2 - w2_plus) as f64 / 2.0;

    let (p_lower, p_upper, method) = if n <= EXACT_MAX_N {
        let counts = subset_sum_counts(&ranks);
        let all = 2f64.powi(n as i32);
        let lower: u64 = counts[..=w2_plus as usize].iter().sum();
        let upper: u64 = counts[w2_plus as usize..].iter().sum();
        (lower as f64 / all, upper as f64 / all, PMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            tie_term += t * t * t - t;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (w_plus - mean) / var.sqrt();
        (normal_cdf(z), normal_cdf(-z), PMethod::Normal)
    };

    let p_two_sided = (2.0 * p_lower.min(p_upper)).min(1.0);
    // a below b means negative differences, i.e. a small W+.
    let p_one_sided = if mean_a < mean_b {
        p_lower
    } else if mean_b < mean_a {
        p_upper
    } else {
        p_lower.min(p_upper)
    };
    Ok(WilcoxonResult {
        n,
        n_zero,
        w_plus,
        w_minus,
        p_two_sided,
        p_one_sided: p_one_sided.min(1.0),
        p_lower: p_lower.min(1.0),
        p_upper: p_upper.min(1.0),
        method,
        degenerate: false,
    })
}
