//! Small dense linear programs.
//!
//! [`simplex_minimize`] is a two-phase tableau simplex with Bland's rule,
//! meant for the handful of variables that appear in per-atom penalty
//! problems. [`box_vertex_minimum`] and [`has_descent_direction`] are
//! brute-force vertex enumerations used as independent oracles.

use itertools::Itertools;

const PIVOT_EPS: f64 = 1e-11;
const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Self { coeffs, relation, rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let p = self.rows[r][q];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[q];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        let f = self.obj[q];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
        self.basis[r] = q;
    }

    /// Runs Bland's rule over the allowed columns. Returns false when unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        for _ in 0..MAX_ITERATIONS {
            let Some(q) = (0..allowed).find(|&j| self.obj[j] < -PIVOT_EPS) else {
                return true;
            };
            let mut best: Option<(f64, usize)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][q];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((ratio, i)),
                        Some((br, bi)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                            if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                                Some((ratio, i))
                            } else {
                                Some((br, bi))
                            }
                        }
                    };
                }
            }
            match best {
                Some((_, r)) => self.pivot(r, q),
                None => return false,
            }
        }
        // Bland's rule terminates; reaching this means numerical cycling.
        false
    }
}

/// Minimizes `c · x` over `x ≥ 0` subject to `constraints`.
pub fn simplex_minimize(c: &[f64], constraints: &[Constraint]) -> LpOutcome {
    let n = c.len();
    let mut normalized: Vec<Constraint> = Vec::with_capacity(constraints.len());
    for con in constraints {
        assert_eq!(con.coeffs.len(), n, "constraint width must match the objective");
        if con.rhs < 0.0 {
            let relation = match con.relation {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
            normalized.push(Constraint::new(con.coeffs.iter().map(|v| -v).collect(), relation, -con.rhs));
        } else {
            normalized.push(con.clone());
        }
    }
    let m = normalized.len();
    let slack_count = normalized.iter().filter(|c| c.relation != Relation::Eq).count();
    let art_count = normalized.iter().filter(|c| c.relation != Relation::Le).count();
    let art_start = n + slack_count;
    let width = art_start + art_count;

    let mut rows = vec![vec![0.0; width + 1]; m];
    let mut basis = vec![0; m];
    let (mut next_slack, mut next_art) = (n, art_start);
    for (i, con) in normalized.iter().enumerate() {
        rows[i][..n].copy_from_slice(&con.coeffs);
        rows[i][width] = con.rhs;
        match con.relation {
            Relation::Le => {
                rows[i][next_slack] = 1.0;
                basis[i] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                rows[i][next_slack] = -1.0;
                next_slack += 1;
                rows[i][next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
            Relation::Eq => {
                rows[i][next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
        }
    }

    // Phase 1: minimize the sum of artificials.
    let mut obj = vec![0.0; width + 1];
    for v in obj.iter_mut().take(width).skip(art_start) {
        *v = 1.0;
    }
    for (i, row) in rows.iter().enumerate() {
        if basis[i] >= art_start {
            for (o, v) in obj.iter_mut().zip(row) {
                *o -= v;
            }
        }
    }
    let mut tab = Tableau { rows, obj, basis, width };
    if art_count > 0 {
        tab.optimize(width);
        let scale = 1.0 + normalized.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
        if -tab.obj[width] > 1e-9 * scale {
            return LpOutcome::Infeasible;
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= art_start {
                match (0..art_start).find(|&j| tab.rows[i][j].abs() > PIVOT_EPS) {
                    Some(q) => {
                        tab.pivot(i, q);
                        i += 1;
                    }
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    // Phase 2.
    let mut obj = vec![0.0; width + 1];
    obj[..n].copy_from_slice(c);
    for (i, row) in tab.rows.iter().enumerate() {
        let cb = if tab.basis[i] < n { c[tab.basis[i]] } else { 0.0 };
        if cb != 0.0 {
            for (o, v) in obj.iter_mut().zip(row) {
                *o -= cb * v;
            }
        }
    }
    tab.obj = obj;
    if !tab.optimize(art_start) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rhs(i).max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal { x, value }
}

/// Minimizes `c · x` subject to `G x ≥ h` and `-bound ≤ x ≤ bound`, with
/// free variables split into positive and negative parts.
pub fn box_minimize(c: &[f64], g: &[Vec<f64>], h: &[f64], bound: f64) -> LpOutcome {
    let n = c.len();
    let split = |row: &[f64]| -> Vec<f64> { row.iter().copied().chain(row.iter().map(|v| -v)).collect() };
    let mut constraints: Vec<Constraint> =
        g.iter().zip(h).map(|(row, &rhs)| Constraint::new(split(row), Relation::Ge, rhs)).collect();
    for j in 0..2 * n {
        let mut e = vec![0.0; 2 * n];
        e[j] = 1.0;
        constraints.push(Constraint::new(e, Relation::Le, bound));
    }
    match simplex_minimize(&split(c), &constraints) {
        LpOutcome::Optimal { x, .. } => {
            let x: Vec<f64> = (0..n).map(|j| x[j] - x[n + j]).collect();
            let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
            LpOutcome::Optimal { x, value }
        }
        other => other,
    }
}

/// Solves a square system by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for i in col + 1..n {
            let f = a[i][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[i][k] -= f * a[col][k];
                }
                b[i] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Exhaustive vertex enumeration for `min c·x, G x ≥ h, |x_j| ≤ bound`.
/// Returns `None` when no vertex is feasible. Exponential; for oracles only.
pub fn box_vertex_minimum(c: &[f64], g: &[Vec<f64>], h: &[f64], bound: f64) -> Option<(Vec<f64>, f64)> {
    let n = c.len();
    // All constraints as `row · x ≥ rhs`.
    let mut all: Vec<(Vec<f64>, f64)> = g.iter().cloned().zip(h.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        all.push((e.clone(), -bound));
        e[j] = -1.0;
        all.push((e, -bound));
    }
    let tol = 1e-9 * (1.0 + bound);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for active in (0..all.len()).combinations(n) {
        let a = active.iter().map(|&i| all[i].0.clone()).collect();
        let b = active.iter().map(|&i| all[i].1).collect();
        let Some(x) = solve_square(a, b) else { continue };
        let feasible = all.iter().all(|(row, rhs)| row.iter().zip(&x).map(|(r, v)| r * v).sum::<f64>() >= rhs - tol);
        if feasible {
            let value: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
            if best.as_ref().map_or(true, |(_, v)| value < *v) {
                best = Some((x, value));
            }
        }
    }
    best
}

/// Whether some direction `d` with `G d ≥ 0` strictly decreases `c·d`,
/// i.e. whether `min c·x s.t. G x ≥ h` is unbounded below once feasible.
/// Decided by vertex enumeration over the unit box.
pub fn has_descent_direction(c: &[f64], g: &[Vec<f64>], tol: f64) -> bool {
    let zeros = vec![0.0; g.len()];
    match box_vertex_minimum(c, g, &zeros, 1.0) {
        Some((_, v)) => v < -tol,
        None => false,
    }
}
