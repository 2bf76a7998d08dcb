//! Rearrangement classes and the max-correlation functional.
//!
//! Two adapted processes are rearrangements of each other when their path
//! vectors have the same distribution. On a finite space we realize this by
//! permuting paths among outcomes of equal probability; on uniform spaces
//! this is exactly equality in law.

use crate::assignment::max_weight_assignment;
use crate::error::{Error, Result};
use crate::processes::{pairing, AdaptedProcess, DensityProcess};
use crate::space::{ConditionalValue, FiniteFilteredSpace};

/// Default cap on the number of class members.
pub const DEFAULT_CLASS_CAP: usize = 100_000;
/// Tolerance for identifying two paths (or two probability levels).
pub const PATH_TOL: f64 = 1e-12;
/// Search nodes visited per allowed member before giving up.
const NODES_PER_MEMBER: usize = 1_000;

fn same_path(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= PATH_TOL)
}

/// Distribution of the path vector `(X_t, ..., X_T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLaw {
    /// Distinct paths in lexicographic order with their masses.
    pub atoms: Vec<(Vec<f64>, f64)>,
}

impl PathLaw {
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.atoms.len() == other.atoms.len()
            && self
                .atoms
                .iter()
                .zip(&other.atoms)
                .all(|((p, m), (q, n))| same_path(p, q) && (m - n).abs() <= tol)
    }
}

pub fn path_law(space: &FiniteFilteredSpace, x: &AdaptedProcess) -> PathLaw {
    let mut paths: Vec<(Vec<f64>, f64)> = (0..space.outcome_count()).map(|w| (x.path(w), space.prob(w))).collect();
    paths.sort_by(|a, b| a.0.iter().zip(&b.0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
    for (p, m) in paths {
        match atoms.last_mut() {
            Some((q, n)) if same_path(q, &p) => *n += m,
            _ => atoms.push((p, m)),
        }
    }
    PathLaw { atoms }
}

/// Groups outcomes by probability level, in order of first appearance.
pub fn probability_levels(space: &FiniteFilteredSpace) -> Vec<Vec<usize>> {
    let mut levels: Vec<Vec<usize>> = Vec::new();
    for w in 0..space.outcome_count() {
        match levels.iter_mut().find(|l| (space.prob(l[0]) - space.prob(w)).abs() <= PATH_TOL) {
            Some(l) => l.push(w),
            None => levels.push(vec![w]),
        }
    }
    levels
}

#[derive(Debug, Clone, PartialEq)]
pub struct RearrangementClass {
    pub representative: AdaptedProcess,
    /// Every adapted rearrangement, in enumeration order.
    pub members: Vec<AdaptedProcess>,
    /// Position of the representative in `members`.
    pub representative_index: usize,
    /// True when probabilities are not all equal, so that paths were only
    /// permuted within probability levels (sufficient for equal law, not necessary).
    pub level_grouped: bool,
}

impl RearrangementClass {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

struct Search<'a> {
    space: &'a FiniteFilteredSpace,
    start: usize,
    types: Vec<Vec<f64>>,
    level_of: Vec<usize>,
    /// counts[level][type]
    counts: Vec<Vec<usize>>,
    assigned: Vec<usize>,
    /// value fixed on each (time, atom) together with how many outcomes fixed it
    fixed: Vec<Vec<(f64, usize)>>,
    out: Vec<Vec<usize>>,
    cap: usize,
    nodes: usize,
}

impl Search<'_> {
    fn fits(&self, w: usize, ty: usize) -> bool {
        let path = &self.types[ty];
        path.iter().enumerate().all(|(i, v)| {
            let s = self.start + i;
            let (val, n) = self.fixed[i][self.space.atom_of(s, w)];
            n == 0 || (val - v).abs() <= PATH_TOL
        })
    }

    fn place(&mut self, w: usize, ty: usize, add: bool) {
        for i in 0..self.types[ty].len() {
            let s = self.start + i;
            let k = self.space.atom_of(s, w);
            let slot = &mut self.fixed[i][k];
            if add {
                if slot.1 == 0 {
                    slot.0 = self.types[ty][i];
                }
                slot.1 += 1;
            } else {
                slot.1 -= 1;
            }
        }
    }

    fn run(&mut self, w: usize) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.cap.saturating_mul(NODES_PER_MEMBER) {
            return Err(Error::CapExceeded {
                what: "rearrangement search nodes".into(),
                count: self.nodes as u128,
                cap: self.cap.saturating_mul(NODES_PER_MEMBER) as u128,
            });
        }
        if w == self.assigned.len() {
            if self.out.len() >= self.cap {
                return Err(Error::CapExceeded {
                    what: "rearrangement class".into(),
                    count: self.out.len() as u128 + 1,
                    cap: self.cap as u128,
                });
            }
            self.out.push(self.assigned.clone());
            return Ok(());
        }
        let level = self.level_of[w];
        for ty in 0..self.types.len() {
            if self.counts[level][ty] == 0 || !self.fits(w, ty) {
                continue;
            }
            self.counts[level][ty] -= 1;
            self.assigned[w] = ty;
            self.place(w, ty, true);
            let r = self.run(w + 1);
            self.place(w, ty, false);
            self.counts[level][ty] += 1;
            r?;
        }
        Ok(())
    }
}

/// All adapted processes whose paths are a permutation of `x`'s paths among
/// outcomes of equal probability. Members are distinct and listed in a
/// deterministic order.
pub fn enumerate_class(space: &FiniteFilteredSpace, x: &AdaptedProcess, cap: usize) -> Result<RearrangementClass> {
    let m = space.outcome_count();
    let levels = probability_levels(space);
    let mut level_of = vec![0; m];
    for (l, ws) in levels.iter().enumerate() {
        for &w in ws {
            level_of[w] = l;
        }
    }
    let mut types: Vec<Vec<f64>> = Vec::new();
    let mut type_of = vec![0; m];
    for w in 0..m {
        let p = x.path(w);
        type_of[w] = match types.iter().position(|q| same_path(q, &p)) {
            Some(i) => i,
            None => {
                types.push(p);
                types.len() - 1
            }
        };
    }
    let mut counts = vec![vec![0; types.len()]; levels.len()];
    for w in 0..m {
        counts[level_of[w]][type_of[w]] += 1;
    }
    let fixed = (x.start()..=x.end()).map(|s| vec![(0.0, 0); space.atom_count(s)]).collect();
    let mut search = Search {
        space,
        start: x.start(),
        types,
        level_of,
        counts,
        assigned: vec![0; m],
        fixed,
        out: Vec::new(),
        cap,
        nodes: 0,
    };
    search.run(0)?;
    let Search { types, out, .. } = search;
    let members: Vec<AdaptedProcess> = out
        .iter()
        .map(|assign| {
            let rows = (0..x.window_len()).map(|i| (0..m).map(|w| types[assign[w]][i]).collect()).collect();
            AdaptedProcess::new(space, x.start(), rows)
        })
        .collect::<Result<_>>()?;
    let representative_index = out
        .iter()
        .position(|a| a == &type_of)
        .ok_or_else(|| Error::NotAdapted { time: x.start(), atom: 0 })?;
    Ok(RearrangementClass {
        representative: x.clone(),
        members,
        representative_index,
        level_grouped: levels.len() > 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxCorrelation {
    /// `Ψ_a(X̂)` per `F_t`-atom.
    pub value: ConditionalValue,
    /// Index into the class of the first member attaining the value on each atom.
    pub argmax: Vec<usize>,
    pub class_size: usize,
}

/// `Ψ_a` over an already enumerated class.
pub fn max_correlation_over(
    space: &FiniteFilteredSpace,
    a: &DensityProcess,
    class: &RearrangementClass,
) -> Result<MaxCorrelation> {
    let (t, end) = (class.representative.start(), class.representative.end());
    let atoms = space.atom_count(t);
    let mut best = vec![f64::NEG_INFINITY; atoms];
    let mut argmax = vec![0; atoms];
    for (idx, member) in class.members.iter().enumerate() {
        let p = pairing(space, member, a, t, end)?;
        for k in 0..atoms {
            if p.get(k) > best[k] {
                best[k] = p.get(k);
                argmax[k] = idx;
            }
        }
    }
    Ok(MaxCorrelation { value: ConditionalValue::new(space, t, best)?, argmax, class_size: class.len() })
}

/// `Ψ_a(X̂) = ess sup_{X̃ ∼ X̂} ≺X̃, a≻_{t,T}` with `t` the start of `X̂`'s window.
pub fn max_correlation(
    space: &FiniteFilteredSpace,
    a: &DensityProcess,
    x: &AdaptedProcess,
    cap: usize,
) -> Result<MaxCorrelation> {
    max_correlation_over(space, a, &enumerate_class(space, x, cap)?)
}

/// Upper bound on `Ψ_a(X̂)` that drops adaptedness: per `F_t`-atom and
/// probability level, paths of that level are matched to the atom's
/// outcomes by a maximum-weight assignment.
pub fn lap_upper_bound(space: &FiniteFilteredSpace, a: &DensityProcess, x: &AdaptedProcess) -> Result<ConditionalValue> {
    let (t, end) = (x.start(), x.end());
    if a.start() > t || a.end() < end {
        return Err(Error::WindowMismatch("density must cover the process window".into()));
    }
    let levels = probability_levels(space);
    let values = (0..space.atom_count(t))
        .map(|k| {
            let atom = space.atom(t, k);
            let pb = space.atom_prob(t, k);
            let mut total = 0.0;
            for level in &levels {
                let rows: Vec<usize> = atom.iter().copied().filter(|w| level.contains(w)).collect();
                if rows.is_empty() {
                    continue;
                }
                let weight: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&w| {
                        level
                            .iter()
                            .map(|&src| {
                                (t..=end).map(|s| x.value(s, src) * a.increment(s, w)).sum::<f64>() * space.prob(w) / pb
                            })
                            .collect()
                    })
                    .collect();
                total += max_weight_assignment(&weight)?.1;
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    ConditionalValue::new(space, t, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComonotoneCertificate {
    /// `Ψ_{a0}(X̃^i) - ≺X̃^i, a0≻` per member and atom (nonnegative).
    pub member_residuals: Vec<Vec<f64>>,
    /// `Ψ_{a0}(Σ X̃^i) - ≺Σ X̃^i, a0≻` per atom.
    pub sum_residuals: Vec<f64>,
    pub member_condition: bool,
    pub sum_condition: bool,
}

impl ComonotoneCertificate {
    pub fn is_comonotone(&self) -> bool {
        self.member_condition && self.sum_condition
    }
}

/// Checks whether each member and their sum attain `Ψ_{a0}`.
pub fn is_comonotone(
    space: &FiniteFilteredSpace,
    a0: &DensityProcess,
    family: &[AdaptedProcess],
    tol: f64,
    cap: usize,
) -> Result<ComonotoneCertificate> {
    let first = family.first().ok_or(Error::EmptyFamily)?;
    let (t, end) = (first.start(), first.end());
    let residual = |x: &AdaptedProcess| -> Result<Vec<f64>> {
        let psi = max_correlation(space, a0, x, cap)?.value;
        let p = pairing(space, x, a0, t, end)?;
        Ok(psi.values().iter().zip(p.values()).map(|(a, b)| a - b).collect())
    };
    let member_residuals = family.iter().map(residual).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&AdaptedProcess> = family.iter().collect();
    let sum_residuals = residual(&AdaptedProcess::sum(&refs)?)?;
    let member_condition = member_residuals.iter().flatten().all(|r| *r <= tol);
    let sum_condition = sum_residuals.iter().all(|r| *r <= tol);
    Ok(ComonotoneCertificate { member_residuals, sum_residuals, member_condition, sum_condition })
}
