//! Clustering metrics and discrete information diagnostics.
//!
//! Logarithms are natural. NMI uses the geometric-mean normalization
//! `I / sqrt(H(pred) · H(truth))`; when both labelings are constant it is 1,
//! and when only one entropy vanishes it is 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::sennet::CoefficientMatrix;

/// Joint counts of two labelings after compacting each to `0..k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[p][t]`, predicted classes by true classes.
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub n: usize,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &l in labels {
        map.entry(l).or_insert(0usize);
    }
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    (labels.iter().map(|l| map[l]).collect(), map.len())
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        check_lengths(pred, truth)?;
        let (p, kp) = compact(pred);
        let (t, kt) = compact(truth);
        let mut counts = vec![vec![0usize; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..kt).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(ContingencyTable { counts, row_sums, col_sums, n: pred.len() })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_sums.len(), self.col_sums.len())
    }
}

/// Minimum-cost assignment of rows to columns of a square matrix;
/// `perm[i]` is the column given to row `i`.
pub fn optimal_assignment(cost: &Matrix) -> Result<(Vec<usize>, f64)> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::dims("optimal_assignment", "square cost matrix", format!("{:?}", cost.shape())));
    }
    cost.ensure_finite("assignment cost")?;
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // Shortest augmenting paths with potentials; indices are 1-based, 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let total = perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok((perm, total))
}

/// Best fraction of matches over bijections between predicted and true labels.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.n == 0 {
        return Err(Error::Config("accuracy of empty labelings".into()));
    }
    let (kp, kt) = table.shape();
    let k = kp.max(kt);
    let cost = Matrix::from_fn(k, k, |i, j| if i < kp && j < kt { -(table.counts[i][j] as f64) } else { 0.0 });
    let (_, total) = optimal_assignment(&cost)?;
    Ok(-total / table.n as f64)
}

fn entropy_of_counts(counts: &[usize], n: usize) -> f64 {
    let nf = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / nf;
            -p * p.ln()
        })
        .sum()
}

fn mi_of_table(t: &ContingencyTable) -> f64 {
    let nf = t.n as f64;
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let pij = c as f64 / nf;
                mi += pij * (c as f64 * nf / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Plug-in entropy in nats.
pub fn entropy(labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let c: Vec<usize> = counts.into_values().collect();
    entropy_of_counts(&c, labels.len())
}

/// Plug-in mutual information in nats.
pub fn discrete_mi(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    if t.n == 0 {
        return Ok(0.0);
    }
    Ok(mi_of_table(&t))
}

pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    if t.n == 0 {
        return Err(Error::Config("nmi of empty labelings".into()));
    }
    let hp = entropy_of_counts(&t.row_sums, t.n);
    let ht = entropy_of_counts(&t.col_sums, t.n);
    let (kp, kt) = t.shape();
    if kp == 1 && kt == 1 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    Ok((mi_of_table(&t) / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index by pair counting. Identical partitions score 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    if t.n < 2 {
        return Err(Error::Config("ari needs at least 2 samples".into()));
    }
    let index: f64 = t.counts.iter().flatten().map(|&c| choose2(c)).sum();
    let a: f64 = t.row_sums.iter().map(|&c| choose2(c)).sum();
    let b: f64 = t.col_sums.iter().map(|&c| choose2(c)).sum();
    let expected = a * b / choose2(t.n);
    let max = 0.5 * (a + b);
    let denom = max - expected;
    if denom == 0.0 {
        // Both partitions trivial in the same way (all singletons or one block).
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspacePreserving {
    /// Mean same-cluster share of coefficient mass over non-empty columns.
    pub rate: f64,
    /// Columns with no non-zero coefficient.
    pub skipped: usize,
}

/// For each column `j`, the share of `Σ_i |c_ij|` that comes from points in
/// the same cluster as `j`, averaged over columns with non-zero mass.
pub fn subspace_preserving_rate(c: &CoefficientMatrix, truth: &[usize]) -> Result<SubspacePreserving> {
    let m = c.matrix();
    let n = m.rows();
    if truth.len() != n {
        return Err(Error::LengthMismatch { left: n, right: truth.len() });
    }
    let mut same = vec![0.0; n];
    let mut total = vec![0.0; n];
    for i in 0..n {
        for (j, &v) in m.row(i).iter().enumerate() {
            let a = v.abs();
            total[j] += a;
            if truth[i] == truth[j] {
                same[j] += a;
            }
        }
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for j in 0..n {
        if total[j] > 0.0 {
            sum += same[j] / total[j];
            counted += 1;
        }
    }
    Ok(SubspacePreserving { rate: if counted > 0 { sum / counted as f64 } else { 0.0 }, skipped: n - counted })
}

/// One evaluation row. The bias diagnostics are absent without bias labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub mi_pred_bias: Option<f64>,
    pub mi_true_bias: Option<f64>,
    pub n: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "acc,nmi,ari,mi_pred_bias,mi_true_bias,n";

    pub fn compute(pred: &[usize], truth: &[usize], bias: Option<&[usize]>) -> Result<Self> {
        let (mi_pred_bias, mi_true_bias) = match bias {
            Some(b) => (Some(discrete_mi(pred, b)?), Some(discrete_mi(truth, b)?)),
            None => (None, None),
        };
        let report = MetricsReport {
            acc: accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
            ari: ari(pred, truth)?,
            mi_pred_bias,
            mi_true_bias,
            n: pred.len(),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.acc)
            && (0.0..=1.0).contains(&self.nmi)
            && (-1.0..=1.0).contains(&self.ari)
            && self.mi_pred_bias.is_none_or(|v| v.is_finite() && v >= 0.0)
            && self.mi_true_bias.is_none_or(|v| v.is_finite() && v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("metrics out of range: {self:?}")))
        }
    }

    /// Fields in header order; absent diagnostics are empty cells.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.acc,
            self.nmi,
            self.ari,
            opt(self.mi_pred_bias),
            opt(self.mi_true_bias),
            self.n
        )
    }
}
