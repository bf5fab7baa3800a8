use std::collections::BTreeMap;

use crate::cluster::ClusterAssignment;
use crate::error::{shape_err, Result};

/// Maximum-weight perfect matching on a square integer weight matrix
/// (Kuhn–Munkres with potentials, O(n³)). Returns the column for each row.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0);
    // minimize cost = max - weight, 1-based arrays with a sentinel at 0
    let cost = |i: usize, j: usize| max - weights[i - 1][j - 1];
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
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
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn compact(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &x in ids {
        let next = map.len();
        map.entry(x).or_insert(next);
    }
    (ids.iter().map(|x| map[x]).collect(), map.len())
}

/// Square contingency table: entry `[c][t]` counts points in predicted cluster
/// `c` with truth class `t`, after compacting both label sets to `0..n`.
pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<Vec<Vec<i64>>> {
    if pred.len() != truth.len() {
        return shape_err(format!("{} predictions for {} truth labels", pred.len(), truth.len()));
    }
    let (p, kp) = compact(pred);
    let (t, kt) = compact(truth);
    let n = kp.max(kt);
    let mut table = vec![vec![0i64; n]; n];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    Ok(table)
}

/// Fraction of points agreeing with the truth under the best cluster-to-class bijection.
pub fn matched_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let assign = max_weight_assignment(&table);
    let matched: i64 = assign.iter().enumerate().map(|(r, &c)| table[r][c]).sum();
    Ok(matched as f64 / pred.len() as f64)
}

pub fn clustering_accuracy<T>(pred: &ClusterAssignment<T>, truth: &[usize]) -> Result<f64> {
    matched_accuracy(&pred.ids, truth)
}
