//! Recovery scores comparing an estimate with the planted truth.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::HashMap;

/// 0/1 indicator of the nonzero entries.
pub fn support_pattern(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|x| if x != 0.0 { 1.0 } else { 0.0 })
}

fn normalize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

fn padded_rows(m: &DMatrix<f64>, rows: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, m.ncols());
    out.rows_mut(0, m.nrows()).copy_from(m);
    out
}

/// Minimum total cost of matching every row to a distinct column of a
/// square cost matrix.
fn min_assignment(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    assert!(n <= 20, "exact assignment limited to 20 rows");
    let mut best = vec![f64::INFINITY; 1 << n];
    best[0] = 0.0;
    for mask in 0..(1usize << n) {
        let row = mask.count_ones() as usize;
        if row >= n || !best[mask].is_finite() {
            continue;
        }
        for col in 0..n {
            if mask & (1 << col) == 0 {
                let next = mask | (1 << col);
                best[next] = best[next].min(best[mask] + cost[row][col]);
            }
        }
    }
    best[(1 << n) - 1]
}

/// RMSE between row-normalized structure matrices (components × views),
/// minimized over row permutations and sign flips of the estimate. The
/// smaller matrix is padded with zero rows.
pub fn structure_rmse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    assert_eq!(estimate.ncols(), truth.ncols(), "structure matrices need the same views");
    let rows = estimate.nrows().max(truth.nrows());
    let e = normalize_rows(&padded_rows(estimate, rows));
    let t = normalize_rows(&padded_rows(truth, rows));
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|a| {
            (0..rows)
                .map(|b| {
                    let plus = (e.row(a) - t.row(b)).norm_squared();
                    let minus = (e.row(a) + t.row(b)).norm_squared();
                    plus.min(minus)
                })
                .collect()
        })
        .collect();
    let total = min_assignment(&cost);
    if rows == 0 || e.ncols() == 0 {
        return 0.0;
    }
    (total / (rows * e.ncols()) as f64).sqrt()
}

/// Angle between two lines, in `[0, π/2]`.
pub fn angular_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    (a.dot(b).abs() / denom).clamp(0.0, 1.0).acos()
}

/// True when `estimate` is strictly closer to the joint direction `v4` than
/// to each individual direction and to the noise direction.
pub fn joint_direction_accuracy(estimate: &DVector<f64>, directions: &[DVector<f64>; 4], noise: &DVector<f64>) -> bool {
    let to_joint = angular_distance(estimate, &directions[3]);
    directions[..3]
        .iter()
        .chain(std::iter::once(noise))
        .all(|d| to_joint < angular_distance(estimate, d))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Mcc {
    pub value: f64,
    /// A confusion-matrix margin was empty; `value` is then 0.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn of(predicted: impl Iterator<Item = bool>, actual: impl Iterator<Item = bool>) -> Self {
        let mut c = Confusion::default();
        for (p, a) in predicted.zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn mcc(&self) -> Mcc {
        let [tp, fp, tn, fn_] = [self.tp, self.fp, self.tn, self.fn_].map(|x| x as f64);
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if denom == 0.0 {
            return Mcc {
                value: 0.0,
                degenerate: true,
            };
        }
        Mcc {
            value: (tp * tn - fp * fn_) / denom.sqrt(),
            degenerate: false,
        }
    }
}

/// MCC of the binarized support of `estimate` against `truth` (items ×
/// components), after matching each true component to a distinct estimated
/// one. Missing estimated components count as all-zero.
pub fn loading_mcc(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Mcc {
    assert_eq!(estimate.nrows(), truth.nrows(), "loadings need the same items");
    let kt = truth.ncols();
    let ke = estimate.ncols().max(kt);
    let mut est = DMatrix::zeros(estimate.nrows(), ke);
    est.columns_mut(0, estimate.ncols()).copy_from(estimate);
    let mut best: Option<Mcc> = None;
    let mut chosen = Vec::with_capacity(kt);
    let mut used = vec![false; ke];
    search(&est, truth, &mut chosen, &mut used, &mut best);
    best.expect("at least one matching")
}

fn search(est: &DMatrix<f64>, truth: &DMatrix<f64>, chosen: &mut Vec<usize>, used: &mut [bool], best: &mut Option<Mcc>) {
    if chosen.len() == truth.ncols() {
        let pred = chosen.iter().flat_map(|&e| est.column(e).iter().map(|&x| x != 0.0).collect::<Vec<_>>());
        let act = (0..truth.ncols()).flat_map(|t| truth.column(t).iter().map(|&x| x != 0.0).collect::<Vec<_>>());
        let m = Confusion::of(pred, act).mcc();
        if best.is_none_or(|b| m.value > b.value) {
            *best = Some(m);
        }
        return;
    }
    for e in 0..est.ncols() {
        if !used[e] {
            used[e] = true;
            chosen.push(e);
            search(est, truth, chosen, used, best);
            chosen.pop();
            used[e] = false;
        }
    }
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let pairs = |x: usize| (x * x.saturating_sub(1) / 2) as f64;
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ra: HashMap<usize, usize> = HashMap::new();
    let mut rb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let sa: f64 = ra.values().map(|&v| pairs(v)).sum();
    let sb: f64 = rb.values().map(|&v| pairs(v)).sum();
    let total = pairs(n);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = (sa + sb) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}
