//! Wilcoxon signed-rank test and pairwise monitor comparison matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::eval::EvalSetting;
use crate::report::ReportRow;

/// Largest sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 25;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Signed-rank summary of a set of paired differences with zeros removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRanks {
    /// Number of non-zero differences.
    pub n: usize,
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Sizes of groups of tied absolute differences (only groups > 1).
    pub tie_groups: Vec<usize>,
    /// Average rank of every non-zero difference, ascending.
    pub ranks: Vec<f64>,
}

impl SignedRanks {
    pub fn from_differences(diffs: &[f64]) -> Self {
        let mut nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
        nonzero.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let n = nonzero.len();
        let mut w_plus = 0.0;
        let mut tie_groups = Vec::new();
        let mut ranks = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && nonzero[j].abs() == nonzero[i].abs() {
                j += 1;
            }
            // 1-based ranks i+1..=j share their average.
            let rank = (i + 1 + j) as f64 / 2.0;
            w_plus += rank * nonzero[i..j].iter().filter(|&&d| d > 0.0).count() as f64;
            ranks.extend(std::iter::repeat_n(rank, j - i));
            if j - i > 1 {
                tie_groups.push(j - i);
            }
            i = j;
        }
        SignedRanks {
            n,
            w_plus,
            tie_groups,
            ranks,
        }
    }

    pub fn has_ties(&self) -> bool {
        !self.tie_groups.is_empty()
    }

    /// Upper bound of the statistic, `n(n+1)/2`.
    pub fn max_statistic(&self) -> f64 {
        (self.n * (self.n + 1)) as f64 / 2.0
    }
}

/// Number of sign assignments reaching each doubled rank sum. Average
/// ranks are multiples of 1/2, so doubling makes them integers.
fn doubled_sum_counts(doubled: &[usize]) -> Vec<u64> {
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in doubled {
        reach += r;
        for s in (r..=reach).rev() {
            counts[s] += counts[s - r];
        }
    }
    counts
}

fn doubled(ranks: &[f64]) -> Vec<usize> {
    ranks.iter().map(|r| (2.0 * r).round() as usize).collect()
}

/// Exact `P(W+ >= w)` under the null, conditional on the given ranks
/// (which may contain tie averages).
pub fn exact_upper_tail_ranks(ranks: &[f64], w: f64) -> f64 {
    let counts = doubled_sum_counts(&doubled(ranks));
    let start = (2.0 * w).round().max(0.0) as usize;
    let hits: u64 = counts.iter().skip(start).sum();
    hits as f64 / 2f64.powi(ranks.len() as i32)
}

/// Exact `P(W+ <= w)` under the null, conditional on the given ranks.
pub fn exact_lower_tail_ranks(ranks: &[f64], w: f64) -> f64 {
    if w < 0.0 {
        return 0.0;
    }
    let counts = doubled_sum_counts(&doubled(ranks));
    let end = ((2.0 * w).round() as usize).min(counts.len() - 1);
    let hits: u64 = counts[..=end].iter().sum();
    hits as f64 / 2f64.powi(ranks.len() as i32)
}

fn untied(n: usize) -> Vec<f64> {
    (1..=n).map(|r| r as f64).collect()
}

/// Exact `P(W+ >= w)` for `n` untied ranks.
pub fn exact_upper_tail(n: usize, w: f64) -> f64 {
    exact_upper_tail_ranks(&untied(n), w)
}

/// Exact `P(W+ <= w)` for `n` untied ranks.
pub fn exact_lower_tail(n: usize, w: f64) -> f64 {
    exact_lower_tail_ranks(&untied(n), w)
}

/// Normal approximation of `P(W+ >= w)` with tie-corrected variance and a
/// 0.5 continuity correction.
pub fn normal_upper_tail(ranks: &SignedRanks) -> f64 {
    let n = ranks.n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie_adj: f64 = ranks
        .tie_groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_adj;
    let z = (ranks.w_plus - mean - 0.5) / var.sqrt();
    Normal::standard().sf(z).clamp(0.0, 1.0)
}

/// One-sided p-value for "values_a tend to exceed values_b".
///
/// Zero differences are dropped; if none remain the result is `None`.
/// Up to [`EXACT_MAX_N`] differences the exact null distribution of the
/// observed (possibly tie-averaged) ranks is used, the normal approximation
/// beyond that.
pub fn wilcoxon_one_sided(values_a: &[f64], values_b: &[f64]) -> Result<Option<f64>> {
    if values_a.len() != values_b.len() {
        return Err(Error::usage(format!(
            "paired samples differ in length ({} vs {})",
            values_a.len(),
            values_b.len()
        )));
    }
    if values_a.iter().chain(values_b).any(|v| !v.is_finite()) {
        return Err(Error::usage("paired samples must be finite"));
    }
    let diffs: Vec<f64> = values_a.iter().zip(values_b).map(|(a, b)| a - b).collect();
    Ok(signed_rank_p_value(&diffs))
}

pub fn signed_rank_p_value(diffs: &[f64]) -> Option<f64> {
    let ranks = SignedRanks::from_differences(diffs);
    if ranks.n == 0 {
        return None;
    }
    if ranks.n <= EXACT_MAX_N {
        Some(exact_upper_tail_ranks(&ranks.ranks, ranks.w_plus))
    } else {
        Some(normal_upper_tail(&ranks))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Recall,
    Precision,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Precision => "precision",
        }
    }

    pub fn of(self, row: &ReportRow) -> Option<f64> {
        match self {
            Metric::Recall => row.recall,
            Metric::Precision => row.precision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellColor {
    /// Row monitor significantly better than column monitor.
    Green,
    /// Column monitor significantly better than row monitor.
    Red,
    White,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    pub monitors: Vec<String>,
    pub metric: Metric,
    pub setting: EvalSetting,
    /// `p_values[i][j]` is the one-sided p-value for "monitor i > monitor j".
    pub p_values: Vec<Vec<Option<f64>>>,
    pub alpha: f64,
    /// Scenarios entering the comparison.
    pub scenarios: usize,
}

impl ComparisonMatrix {
    pub fn color(&self, i: usize, j: usize) -> CellColor {
        let sig = |p: Option<f64>| p.is_some_and(|p| p <= self.alpha);
        if i == j {
            CellColor::White
        } else if sig(self.p_values[i][j]) {
            CellColor::Green
        } else if sig(self.p_values[j][i]) {
            CellColor::Red
        } else {
            CellColor::White
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("monitor");
        for m in &self.monitors {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (i, m) in self.monitors.iter().enumerate() {
            out.push_str(m);
            for p in &self.p_values[i] {
                out.push(',');
                match p {
                    Some(p) => write!(out, "{p}").unwrap(),
                    None => out.push_str("NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "### {} {} (one-sided Wilcoxon, row > column, alpha = {}, {} scenarios)\n\n|   |",
            self.setting.as_str().to_uppercase(),
            self.metric.as_str(),
            self.alpha,
            self.scenarios
        );
        for m in &self.monitors {
            write!(out, " {m} |").unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.monitors.len()));
        out.push('\n');
        for (i, m) in self.monitors.iter().enumerate() {
            write!(out, "| **{m}** |").unwrap();
            for j in 0..self.monitors.len() {
                let cell = if i == j {
                    "-".to_owned()
                } else {
                    let p = match self.p_values[i][j] {
                        Some(p) => format_p(p),
                        None => "NA".to_owned(),
                    };
                    match self.color(i, j) {
                        CellColor::Green => format!("{p} (green)"),
                        CellColor::Red => format!("{p} (red)"),
                        CellColor::White => p,
                    }
                };
                write!(out, " {cell} |").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn format_p(p: f64) -> String {
    if p != 0.0 && p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

/// Builds the pairwise matrix for one metric and setting.
///
/// Monitors keep their order of first appearance. Every monitor needs
/// exactly one row per scenario. Scenarios where either monitor's metric is
/// undefined are left out of that pair's test.
pub fn comparison_matrix(rows: &[ReportRow], metric: Metric, setting: EvalSetting) -> Result<ComparisonMatrix> {
    let rows: Vec<&ReportRow> = rows.iter().filter(|r| r.setting == setting).collect();
    let mut monitors: Vec<String> = Vec::new();
    for r in &rows {
        if !monitors.contains(&r.monitor) {
            monitors.push(r.monitor.clone());
        }
    }
    if monitors.is_empty() {
        return Err(Error::usage(format!("no reports for setting {setting}")));
    }
    let scenarios: BTreeSet<&str> = rows.iter().map(|r| r.scenario.as_str()).collect();
    let mut grid: BTreeMap<(&str, &str), Option<f64>> = BTreeMap::new();
    for r in &rows {
        if grid
            .insert((r.monitor.as_str(), r.scenario.as_str()), metric.of(r))
            .is_some()
        {
            return Err(Error::usage(format!(
                "duplicate {setting} report for monitor {} on scenario {}",
                r.monitor, r.scenario
            )));
        }
    }
    let mut columns: Vec<Vec<Option<f64>>> = Vec::with_capacity(monitors.len());
    for m in &monitors {
        let mut col = Vec::with_capacity(scenarios.len());
        for s in &scenarios {
            let v = grid
                .get(&(m.as_str(), *s))
                .ok_or_else(|| Error::usage(format!("missing {setting} report for monitor {m} on scenario {s}")))?;
            col.push(*v);
        }
        columns.push(col);
    }

    let k = monitors.len();
    let mut p_values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let (a, b): (Vec<f64>, Vec<f64>) = columns[i]
                .iter()
                .zip(&columns[j])
                .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                .unzip();
            p_values[i][j] = wilcoxon_one_sided(&a, &b)?;
        }
    }
    Ok(ComparisonMatrix {
        monitors,
        metric,
        setting,
        p_values,
        alpha: DEFAULT_ALPHA,
        scenarios: scenarios.len(),
    })
}

/// Mean and sample standard deviation (n - 1); the deviation is `None`
/// below two values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}
