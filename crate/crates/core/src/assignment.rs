//! Rectangular linear assignment by the Hungarian method (shortest
//! augmenting paths with potentials), `O(n² m)` for `n ≤ m`.

use crate::error::{Error, Result};

/// Assignment maximizing `Σ_i weight[i][col(i)]` over injective row → column
/// maps. Requires `rows ≤ cols`. Ties resolve towards lower column indices.
/// Returns the column per row and the total weight.
pub fn max_weight_assignment(weight: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = weight.len();
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let m = weight[0].len();
    if weight.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("ragged weight matrix".into()));
    }
    if n > m {
        return Err(Error::Dimension(format!("{n} rows cannot be matched into {m} columns")));
    }
    if weight.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("assignment weights must be finite".into()));
    }
    // Minimize the negated weights; index 0 is a sentinel.
    let cost = |i: usize, j: usize| -weight[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
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
            for j in 0..=m {
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
    let mut col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    let total = col.iter().enumerate().map(|(i, &j)| weight[i][j]).sum();
    Ok((col, total))
}
