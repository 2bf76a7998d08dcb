//! Independent oracles shared by the integration tests. Nothing here calls
//! the library routine it is used to check.
#![allow(dead_code)]

use dynworst::processes::{AdaptedProcess, DensityProcess};
use dynworst::space::FiniteFilteredSpace;
use dynworst::utility::DualFiniteUtility;
use itertools::Itertools;

/// Every adapted process whose outcome paths are a permutation of `x`'s
/// (uniform spaces only), deduplicated.
pub fn class_oracle(space: &FiniteFilteredSpace, x: &AdaptedProcess) -> Vec<AdaptedProcess> {
    let m = space.outcome_count();
    let mut out: Vec<AdaptedProcess> = Vec::new();
    for perm in (0..m).permutations(m) {
        let rows: Vec<Vec<f64>> = (x.start()..=x.end()).map(|s| perm.iter().map(|&w| x.value(s, w)).collect()).collect();
        if let Ok(y) = AdaptedProcess::new(space, x.start(), rows) {
            if !out.contains(&y) {
                out.push(y);
            }
        }
    }
    out
}

/// `E(Σ_s X_s Δa_s | F_t)` per `F_t`-atom, summed outcome by outcome.
pub fn pairing_oracle(space: &FiniteFilteredSpace, x: &AdaptedProcess, a: &DensityProcess, t: usize, end: usize) -> Vec<f64> {
    (0..space.atom_count(t))
        .map(|k| {
            let atom = space.atom(t, k);
            let mass: f64 = atom.iter().map(|&w| space.prob(w)).sum();
            atom.iter()
                .map(|&w| space.prob(w) * (t..=end).map(|s| x.value(s, w) * a.increment(s, w)).sum::<f64>())
                .sum::<f64>()
                / mass
        })
        .collect()
}

/// `E(Σ_s Δa_s | F_t) - 1` per `F_t`-atom, and the most negative increment.
pub fn density_residual(space: &FiniteFilteredSpace, a: &DensityProcess) -> f64 {
    let t = a.start();
    let mut worst: f64 = 0.0;
    for k in 0..space.atom_count(t) {
        let atom = space.atom(t, k);
        let mass: f64 = atom.iter().map(|&w| space.prob(w)).sum();
        let tail: f64 =
            atom.iter().map(|&w| space.prob(w) * (t..=a.end()).map(|s| a.increment(s, w)).sum::<f64>()).sum::<f64>() / mass;
        worst = worst.max((tail - 1.0).abs());
    }
    for s in t..=a.end() {
        for w in 0..space.outcome_count() {
            worst = worst.max(-a.increment(s, w));
        }
    }
    worst
}

/// The per-atom penalty program `min c·x s.t. G x ≥ h` on the `F_t`-atom
/// `k`, built from scratch: one variable per `(s, F_s-atom inside k)`.
pub fn penalty_lp(
    space: &FiniteFilteredSpace,
    u: &DualFiniteUtility,
    a: &DensityProcess,
    k: usize,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let t = u.start();
    let atom = space.atom(t, k);
    let mass: f64 = atom.iter().map(|&w| space.prob(w)).sum();
    let mut cells: Vec<(usize, Vec<usize>)> = Vec::new();
    for s in t..=u.end() {
        for j in 0..space.atom_count(s) {
            let cell = space.atom(s, j);
            if cell.iter().all(|w| atom.contains(w)) {
                cells.push((s, cell.to_vec()));
            }
        }
    }
    let coeffs = |d: &DensityProcess| -> Vec<f64> {
        cells.iter().map(|(s, cell)| cell.iter().map(|&w| space.prob(w) * d.increment(*s, w)).sum::<f64>() / mass).collect()
    };
    let mut g = Vec::new();
    let mut h = Vec::new();
    for (d, gamma) in u.scenarios().iter().zip(u.penalties()) {
        if gamma.get(k).is_finite() {
            g.push(coeffs(d));
            h.push(gamma.get(k));
        }
    }
    (coeffs(a), g, h)
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Minimum of `c·x` over the vertices of `{G x ≥ h, |x_j| ≤ bound}`.
pub fn vertex_minimum(c: &[f64], g: &[Vec<f64>], h: &[f64], bound: f64) -> Option<f64> {
    let n = c.len();
    let mut rows: Vec<(Vec<f64>, f64)> = g.iter().cloned().zip(h.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), -bound));
        e[j] = -1.0;
        rows.push((e, -bound));
    }
    let tol = 1e-9 * (1.0 + bound);
    let mut best: Option<f64> = None;
    for active in (0..rows.len()).combinations(n) {
        let a = active.iter().map(|&i| rows[i].0.clone()).collect();
        let b = active.iter().map(|&i| rows[i].1).collect();
        let Some(x) = solve(a, b) else { continue };
        if rows.iter().all(|(r, rhs)| r.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() >= rhs - tol) {
            let v: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

/// Whether `min c·x, G x ≥ h` (assumed feasible) is unbounded below: some
/// recession direction `G d ≥ 0` has `c·d < 0`.
pub fn unbounded(c: &[f64], g: &[Vec<f64>]) -> bool {
    let zeros = vec![0.0; g.len()];
    vertex_minimum(c, g, &zeros, 1.0).is_some_and(|v| v < -1e-9)
}
