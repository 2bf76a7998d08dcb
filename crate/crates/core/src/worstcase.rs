//! Worst scenarios and worst-case portfolios.
//!
//! A worst-case portfolio maximizes `Ψ((1/n) Σ X̃^i)` over rearrangements
//! `X̃^i ∼ X^i`. Everything here works atom-wise: suprema are taken per
//! `F_t`-atom, and whether one tuple attains all atoms at once is reported
//! separately.

pub mod preservation;

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::processes::{pairing, AdaptedProcess, DensityProcess};
use crate::rearrange::{enumerate_class, is_comonotone, max_correlation, max_correlation_over, ComonotoneCertificate, RearrangementClass, DEFAULT_CLASS_CAP};
use crate::sample;
use crate::space::{ConditionalValue, Event, FiniteFilteredSpace};
use crate::utility::{penalty, DualFiniteUtility, UtilityFunction, UtilityProcess};

/// Default cap on the number of enumerated tuples.
pub const DEFAULT_PRODUCT_CAP: u128 = 1_000_000;
/// Relative tolerance used to decide that a tuple attains the supremum.
pub const ATTAIN_TOL: f64 = 1e-12;
/// Candidate tuples examined when searching for a comonotone tuple.
pub const COMONOTONE_SEARCH_CAP: usize = 10_000;
/// Tolerance of the verification harnesses.
pub const VERIFY_TOL: f64 = 1e-9;
const CHUNK: u64 = 2048;

/// `n ≥ 1` adapted processes on a common window.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    members: Vec<AdaptedProcess>,
}

impl Portfolio {
    pub fn new(members: Vec<AdaptedProcess>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyFamily)?;
        if members.iter().any(|x| x.start() != first.start() || x.end() != first.end()) {
            return Err(Error::WindowMismatch("portfolio members must share a window".into()));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[AdaptedProcess] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn start(&self) -> usize {
        self.members[0].start()
    }

    pub fn end(&self) -> usize {
        self.members[0].end()
    }

    pub fn mean(&self) -> AdaptedProcess {
        let refs: Vec<&AdaptedProcess> = self.members.iter().collect();
        AdaptedProcess::mean(&refs).expect("members share a window")
    }

    pub fn restrict(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(self.members.iter().map(|x| x.restrict(start, end)).collect::<Result<_>>()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    pub class_cap: usize,
    pub product_cap: u128,
    /// Worker threads for tuple enumeration; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { class_cap: DEFAULT_CLASS_CAP, product_cap: DEFAULT_PRODUCT_CAP, workers: None }
    }
}

impl SearchConfig {
    pub fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        match self.workers {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::InvalidValue(format!("cannot start {n} workers: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

fn check_utility_window(u: &UtilityFunction, start: usize, end: usize) -> Result<()> {
    if u.start() != start || u.end() != end {
        return Err(Error::WindowMismatch(format!(
            "utility on [{}, {}] for a portfolio on [{start}, {end}]",
            u.start(),
            u.end()
        )));
    }
    Ok(())
}

pub fn enumerate_classes(space: &FiniteFilteredSpace, marginals: &Portfolio, cap: usize) -> Result<Vec<RearrangementClass>> {
    marginals.members.iter().map(|x| enumerate_class(space, x, cap)).collect()
}

// ---------------------------------------------------------------------------
// Average risk and worst scenario

/// `F(a) = (1/n) Σ_i Ψ_a(X^i) + φ^#(a)` over already enumerated classes.
pub fn average_risk_over(
    space: &FiniteFilteredSpace,
    a: &DensityProcess,
    classes: &[RearrangementClass],
    u: &DualFiniteUtility,
) -> Result<ConditionalValue> {
    let n = classes.len() as f64;
    let mut total = vec![0.0; space.atom_count(u.start())];
    for class in classes {
        let psi = max_correlation_over(space, a, class)?.value;
        for (t, v) in total.iter_mut().zip(psi.values()) {
            *t += v / n;
        }
    }
    let pen = penalty(space, u, a, None)?.value;
    let values = total.iter().zip(pen.values()).map(|(x, p)| if p.is_finite() { x + p } else { f64::NEG_INFINITY }).collect();
    ConditionalValue::new(space, u.start(), values)
}

pub fn average_risk(
    space: &FiniteFilteredSpace,
    a: &DensityProcess,
    marginals: &Portfolio,
    u: &DualFiniteUtility,
    cap: usize,
) -> Result<ConditionalValue> {
    average_risk_over(space, a, &enumerate_classes(space, marginals, cap)?, u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstScenario {
    /// Candidates glued per `F_t`-atom at their maximizers.
    pub density: DensityProcess,
    pub value: ConditionalValue,
    /// Candidate chosen on each atom (first maximizer in list order).
    pub choice: Vec<usize>,
    /// First candidate attaining the maximum on every atom, if any.
    pub single_candidate: Option<usize>,
    /// Average risk of every candidate, in list order.
    pub candidate_values: Vec<ConditionalValue>,
    /// True unless the utility is coherent and the candidates are its scenarios,
    /// in which case the maximum over candidates is the supremum over all densities.
    pub lower_bound_only: bool,
}

pub fn worst_scenario_over(
    space: &FiniteFilteredSpace,
    candidates: &[DensityProcess],
    classes: &[RearrangementClass],
    u: &DualFiniteUtility,
) -> Result<WorstScenario> {
    if candidates.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let values: Vec<ConditionalValue> =
        candidates.iter().map(|a| average_risk_over(space, a, classes, u)).collect::<Result<_>>()?;
    let atoms = space.atom_count(u.start());
    let mut choice = vec![0; atoms];
    for (k, c) in choice.iter_mut().enumerate() {
        for j in 1..values.len() {
            if values[j].get(k) > values[*c].get(k) {
                *c = j;
            }
        }
    }
    let best: Vec<f64> = (0..atoms).map(|k| values[choice[k]].get(k)).collect();
    let single_candidate = (0..values.len()).find(|&j| (0..atoms).all(|k| values[j].get(k) >= best[k]));
    let parts: Vec<&DensityProcess> = candidates.iter().collect();
    let density = DensityProcess::glue(space, &parts, &choice)?;
    let lower_bound_only = !(u.is_coherent() && candidates == u.scenarios());
    Ok(WorstScenario {
        density,
        value: ConditionalValue::new(space, u.start(), best)?,
        choice,
        single_candidate,
        candidate_values: values,
        lower_bound_only,
    })
}

/// Maximizes the average risk function over a finite candidate family.
pub fn worst_scenario(
    space: &FiniteFilteredSpace,
    candidates: &[DensityProcess],
    marginals: &Portfolio,
    u: &DualFiniteUtility,
    cap: usize,
) -> Result<WorstScenario> {
    worst_scenario_over(space, candidates, &enumerate_classes(space, marginals, cap)?, u)
}

// ---------------------------------------------------------------------------
// Brute-force worst portfolio

/// Evaluates `Ψ` of the mean of a tuple of candidates, one per marginal.
enum TupleEvaluator<'a> {
    /// For dual-finite utilities `Ψ(Y) = max_j (≺Y, a_j≻ + γ_j)` is linear in
    /// each scenario, so pairings are precomputed per candidate:
    /// `table[i][member][j][atom]`.
    Linear { table: Vec<Vec<Vec<Vec<f64>>>>, gammas: Vec<Vec<f64>> },
    General { space: &'a FiniteFilteredSpace, u: &'a UtilityFunction, candidates: &'a [Vec<AdaptedProcess>] },
}

impl<'a> TupleEvaluator<'a> {
    fn new(space: &'a FiniteFilteredSpace, u: &'a UtilityFunction, candidates: &'a [Vec<AdaptedProcess>]) -> Result<Self> {
        match u {
            UtilityFunction::DualFinite(d) => {
                let table = candidates
                    .iter()
                    .map(|set| {
                        set.iter()
                            .map(|x| {
                                d.scenarios()
                                    .iter()
                                    .map(|a| Ok(pairing(space, x, a, d.start(), d.end())?.values().to_vec()))
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let gammas = d.penalties().iter().map(|g| g.values().to_vec()).collect();
                Ok(Self::Linear { table, gammas })
            }
            _ => Ok(Self::General { space, u, candidates }),
        }
    }

    fn eval(&self, tuple: &[usize], atoms: usize) -> Vec<f64> {
        match self {
            Self::Linear { table, gammas } => {
                let n = tuple.len() as f64;
                (0..atoms)
                    .map(|k| {
                        let mut best = f64::NEG_INFINITY;
                        for (j, g) in gammas.iter().enumerate() {
                            if g[k] == f64::NEG_INFINITY {
                                continue;
                            }
                            let mut s = 0.0;
                            for (i, &m) in tuple.iter().enumerate() {
                                s += table[i][m][j][k];
                            }
                            let v = s / n + g[k];
                            if v > best {
                                best = v;
                            }
                        }
                        best
                    })
                    .collect()
            }
            Self::General { space, u, candidates } => {
                let refs: Vec<&AdaptedProcess> = tuple.iter().enumerate().map(|(i, &m)| &candidates[i][m]).collect();
                let mean = AdaptedProcess::mean(&refs).expect("candidates share a window");
                u.insurance_evaluate(space, &mean).expect("window checked").values().to_vec()
            }
        }
    }
}

fn decode(mut idx: u64, sizes: &[usize], out: &mut [usize]) {
    for i in (0..sizes.len()).rev() {
        out[i] = (idx % sizes[i] as u64) as usize;
        idx /= sizes[i] as u64;
    }
}

fn attains(value: &[f64], sup: &[f64]) -> bool {
    value.iter().zip(sup).all(|(v, s)| *v >= *s - ATTAIN_TOL * (1.0 + s.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseResult {
    /// Atom-wise maximum of `Ψ(mean)` over all tuples.
    pub sup_value: ConditionalValue,
    /// First tuple (in enumeration order) attaining the maximum on every atom.
    pub attaining_tuple: Option<Portfolio>,
    pub attaining_index: Option<Vec<usize>>,
    pub attained_uniformly: bool,
    /// Per atom, the first tuple attaining that atom's maximum.
    pub per_atom_argmax: Vec<Vec<usize>>,
    pub search_size: u128,
}

/// Brute force over the product of candidate sets (one set per marginal).
pub fn worst_portfolio_over(
    space: &FiniteFilteredSpace,
    candidates: &[Vec<AdaptedProcess>],
    u: &UtilityFunction,
    cfg: &SearchConfig,
) -> Result<WorstCaseResult> {
    if candidates.is_empty() || candidates.iter().any(|c| c.is_empty()) {
        return Err(Error::EmptyFamily);
    }
    check_utility_window(u, candidates[0][0].start(), candidates[0][0].end())?;
    let sizes: Vec<usize> = candidates.iter().map(|c| c.len()).collect();
    let total = sizes.iter().try_fold(1u128, |acc, &s| acc.checked_mul(s as u128)).unwrap_or(u128::MAX);
    if total > cfg.product_cap {
        return Err(Error::CapExceeded { what: "worst-portfolio tuples".into(), count: total, cap: cfg.product_cap });
    }
    let total = total as u64;
    let atoms = space.atom_count(u.start());
    let eval = TupleEvaluator::new(space, u, candidates)?;
    let chunks = total.div_ceil(CHUNK);

    let scan = |c: u64| -> (Vec<f64>, Vec<u64>) {
        let mut best = vec![f64::NEG_INFINITY; atoms];
        let mut arg = vec![u64::MAX; atoms];
        let mut tuple = vec![0; sizes.len()];
        for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
            decode(idx, &sizes, &mut tuple);
            let v = eval.eval(&tuple, atoms);
            for k in 0..atoms {
                if v[k] > best[k] {
                    best[k] = v[k];
                    arg[k] = idx;
                }
            }
        }
        (best, arg)
    };
    let merge = |(mut b1, mut a1): (Vec<f64>, Vec<u64>), (b2, a2): (Vec<f64>, Vec<u64>)| {
        for k in 0..b1.len() {
            if b2[k] > b1[k] || b2[k] == b1[k] && a2[k] < a1[k] {
                b1[k] = b2[k];
                a1[k] = a2[k];
            }
        }
        (b1, a1)
    };
    let (sup, arg, first) = cfg.run(|| {
        let (sup, arg) = (0..chunks)
            .into_par_iter()
            .map(scan)
            .reduce(|| (vec![f64::NEG_INFINITY; atoms], vec![u64::MAX; atoms]), merge);
        let first = (0..chunks).into_par_iter().find_map_first(|c| {
            let mut tuple = vec![0; sizes.len()];
            (c * CHUNK..((c + 1) * CHUNK).min(total)).find(|&idx| {
                decode(idx, &sizes, &mut tuple);
                attains(&eval.eval(&tuple, atoms), &sup)
            })
        });
        (sup, arg, first)
    })?;

    let per_atom_argmax = arg
        .iter()
        .map(|&idx| {
            let mut t = vec![0; sizes.len()];
            decode(idx, &sizes, &mut t);
            t
        })
        .collect();
    let attaining_index = first.map(|idx| {
        let mut t = vec![0; sizes.len()];
        decode(idx, &sizes, &mut t);
        t
    });
    let attaining_tuple = attaining_index
        .as_ref()
        .map(|t| Portfolio::new(t.iter().enumerate().map(|(i, &m)| candidates[i][m].clone()).collect()))
        .transpose()?;
    Ok(WorstCaseResult {
        sup_value: ConditionalValue::new(space, u.start(), sup)?,
        attained_uniformly: attaining_tuple.is_some(),
        attaining_tuple,
        attaining_index,
        per_atom_argmax,
        search_size: total as u128,
    })
}

/// Every tuple of the product (in enumeration order, at most `limit`) whose
/// `Ψ(mean)` reaches `sup` on every atom.
pub fn attaining_tuples(
    space: &FiniteFilteredSpace,
    candidates: &[Vec<AdaptedProcess>],
    u: &UtilityFunction,
    sup: &ConditionalValue,
    cfg: &SearchConfig,
    limit: usize,
) -> Result<Vec<Vec<usize>>> {
    if candidates.is_empty() || candidates.iter().any(|c| c.is_empty()) {
        return Err(Error::EmptyFamily);
    }
    check_utility_window(u, candidates[0][0].start(), candidates[0][0].end())?;
    let sizes: Vec<usize> = candidates.iter().map(|c| c.len()).collect();
    let total = sizes.iter().try_fold(1u128, |acc, &s| acc.checked_mul(s as u128)).unwrap_or(u128::MAX);
    if total > cfg.product_cap {
        return Err(Error::CapExceeded { what: "worst-portfolio tuples".into(), count: total, cap: cfg.product_cap });
    }
    let eval = TupleEvaluator::new(space, u, candidates)?;
    let mut out = Vec::new();
    let mut tuple = vec![0; sizes.len()];
    for idx in 0..total as u64 {
        decode(idx, &sizes, &mut tuple);
        if attains(&eval.eval(&tuple, sup.len()), sup.values()) {
            out.push(tuple.clone());
            if out.len() >= limit {
                break;
            }
        }
    }
    Ok(out)
}

/// `ess sup_{X̃^i ∼ X^i} Ψ((1/n) Σ X̃^i)` by enumerating the product of rearrangement classes.
pub fn worst_portfolio_bruteforce(
    space: &FiniteFilteredSpace,
    marginals: &Portfolio,
    u: &UtilityFunction,
    cfg: &SearchConfig,
) -> Result<WorstCaseResult> {
    let classes = enumerate_classes(space, marginals, cfg.class_cap)?;
    let candidates: Vec<Vec<AdaptedProcess>> = classes.into_iter().map(|c| c.members).collect();
    worst_portfolio_over(space, &candidates, u, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCheck {
    pub sup_value: ConditionalValue,
    pub value: ConditionalValue,
    /// `max_k (sup - value)`; nonnegative up to rounding.
    pub gap: f64,
    pub is_worst: bool,
    pub search_size: u128,
}

/// Whether `portfolio` attains the worst-case supremum on every atom.
pub fn check_worst_portfolio(
    space: &FiniteFilteredSpace,
    portfolio: &Portfolio,
    u: &UtilityFunction,
    cfg: &SearchConfig,
    tol: f64,
) -> Result<WorstCheck> {
    let res = worst_portfolio_bruteforce(space, portfolio, u, cfg)?;
    let value = u.insurance_evaluate(space, &portfolio.mean())?;
    let gap = res.sup_value.values().iter().zip(value.values()).map(|(s, v)| s - v).fold(f64::NEG_INFINITY, f64::max);
    Ok(WorstCheck { is_worst: gap <= tol, sup_value: res.sup_value, value, gap, search_size: res.search_size })
}

// ---------------------------------------------------------------------------
// Worst-case duality

#[derive(Debug, Clone, PartialEq)]
pub enum ComonotoneOutcome {
    /// No `a0`-comonotone tuple among the first `tried` candidates (tuples of
    /// members that attain `Ψ_{a0}` individually).
    NotApplicable { tried: usize, truncated: bool },
    Found {
        tuple: Vec<usize>,
        certificate: ComonotoneCertificate,
        /// `Ψ(mean)` of the comonotone tuple.
        value: ConditionalValue,
        /// `max_k (sup - value)`.
        gap: f64,
        attains: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    /// Brute-force supremum over rearrangements.
    pub lhs: ConditionalValue,
    /// Maximum of the average risk over the scenarios.
    pub rhs: ConditionalValue,
    pub max_residual: f64,
    pub equality_holds: bool,
    pub worst: WorstCaseResult,
    pub scenario: WorstScenario,
    pub comonotone: ComonotoneOutcome,
}

/// For a coherent dual-finite utility, checks that the worst-case value over
/// rearrangements equals the maximal average risk over scenarios, and that an
/// `a0`-comonotone tuple (for the worst scenario `a0`), if one exists, is a
/// worst-case portfolio.
pub fn verify_worst_case_duality(
    space: &FiniteFilteredSpace,
    marginals: &Portfolio,
    u: &DualFiniteUtility,
    cfg: &SearchConfig,
    tol: f64,
) -> Result<DualityReport> {
    if !u.is_coherent() {
        return Err(Error::InvalidUtility("worst-case duality is only exact for coherent utilities".into()));
    }
    let classes = enumerate_classes(space, marginals, cfg.class_cap)?;
    let candidates: Vec<Vec<AdaptedProcess>> = classes.iter().map(|c| c.members.clone()).collect();
    let uf = UtilityFunction::DualFinite(u.clone());
    let worst = worst_portfolio_over(space, &candidates, &uf, cfg)?;
    let scenario = worst_scenario_over(space, u.scenarios(), &classes, u)?;
    let lhs = worst.sup_value.clone();
    let rhs = scenario.value.clone();
    let max_residual = lhs.max_abs_diff(&rhs);

    let a0 = &scenario.density;
    let (t, end) = (marginals.start(), marginals.end());
    // Members attaining Ψ_{a0} on every atom, per class.
    let mut attaining = Vec::with_capacity(classes.len());
    for class in &classes {
        let psi = max_correlation_over(space, a0, class)?.value;
        let mut set = Vec::new();
        for (idx, m) in class.members.iter().enumerate() {
            let p = pairing(space, m, a0, t, end)?;
            if psi.values().iter().zip(p.values()).all(|(s, v)| s - v <= tol) {
                set.push(idx);
            }
        }
        attaining.push(set);
    }
    let mut tried = 0;
    let mut found = None;
    if attaining.iter().all(|s| !s.is_empty()) {
        for tuple in attaining.iter().map(|s| s.iter().copied()).multi_cartesian_product() {
            if tried == COMONOTONE_SEARCH_CAP {
                break;
            }
            tried += 1;
            let members: Vec<&AdaptedProcess> = tuple.iter().enumerate().map(|(i, &m)| &classes[i].members[m]).collect();
            let sum = AdaptedProcess::sum(&members)?;
            let psi = max_correlation(space, a0, &sum, cfg.class_cap)?.value;
            let p = pairing(space, &sum, a0, t, end)?;
            if psi.values().iter().zip(p.values()).all(|(s, v)| s - v <= tol) {
                found = Some(tuple);
                break;
            }
        }
    }
    let comonotone = match found {
        None => ComonotoneOutcome::NotApplicable { tried, truncated: tried == COMONOTONE_SEARCH_CAP },
        Some(tuple) => {
            let family: Vec<AdaptedProcess> =
                tuple.iter().enumerate().map(|(i, &m)| classes[i].members[m].clone()).collect();
            let certificate = is_comonotone(space, a0, &family, tol, cfg.class_cap)?;
            let value = uf.insurance_evaluate(space, &Portfolio::new(family)?.mean())?;
            let gap = lhs.values().iter().zip(value.values()).map(|(s, v)| s - v).fold(f64::NEG_INFINITY, f64::max);
            ComonotoneOutcome::Found { tuple, attains: gap <= tol, certificate, value, gap }
        }
    };
    Ok(DualityReport { equality_holds: max_residual <= tol, lhs, rhs, max_residual, worst, scenario, comonotone })
}

// ---------------------------------------------------------------------------
// PSD-matrix portfolios

fn check_psd(b: &[Vec<f64>], dim: usize, index: usize) -> Result<()> {
    if b.len() != dim || b.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension(format!("matrix {index} must be {dim}×{dim}")));
    }
    for i in 0..dim {
        for j in 0..i {
            if (b[i][j] - b[j][i]).abs() > 1e-12 {
                return Err(Error::NotPsd(format!("matrix {index} is not symmetric at ({i}, {j})")));
            }
        }
    }
    let m = nalgebra::DMatrix::from_fn(dim, dim, |i, j| b[i][j]);
    let min = m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(Error::NotPsd(format!("matrix {index} has eigenvalue {min}")));
    }
    Ok(())
}

/// `X^i(ω) = 1_{C1}(ω) B_i Δa(ω) + shift_i`, with `Δa(ω)` the increment path
/// over `a`'s window. Each `B_i` must be symmetric positive semidefinite and
/// the result must be adapted.
pub fn build_psd_portfolio(
    space: &FiniteFilteredSpace,
    a: &DensityProcess,
    matrices: &[Vec<Vec<f64>>],
    shifts: &[Vec<f64>],
    c1: &Event,
) -> Result<Portfolio> {
    let dim = a.window_len();
    if matrices.len() != shifts.len() || matrices.is_empty() {
        return Err(Error::Dimension("one shift per matrix, at least one matrix".into()));
    }
    let mut members = Vec::with_capacity(matrices.len());
    for (i, (b, shift)) in matrices.iter().zip(shifts).enumerate() {
        check_psd(b, dim, i)?;
        if shift.len() != dim {
            return Err(Error::Dimension(format!("shift {i} must have length {dim}")));
        }
        let rows = (0..dim)
            .map(|r| {
                (0..space.outcome_count())
                    .map(|w| {
                        let ind = if c1.contains(w) { 1.0 } else { 0.0 };
                        let lin: f64 = (0..dim).map(|c| b[r][c] * a.increment(a.start() + c, w)).sum();
                        ind * lin + shift[r]
                    })
                    .collect()
            })
            .collect();
        members.push(AdaptedProcess::new(space, a.start(), rows)?);
    }
    Portfolio::new(members)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageWorstRow {
    pub t: usize,
    pub check: WorstCheck,
}

/// Checks whether the restriction of `portfolio` to `[t, T]` is a worst
/// portfolio of `Ψ_{t,T}` for each member of the utility process.
pub fn verify_psd_portfolio(
    space: &FiniteFilteredSpace,
    portfolio: &Portfolio,
    up: &UtilityProcess,
    cfg: &SearchConfig,
    tol: f64,
) -> Result<Vec<StageWorstRow>> {
    (up.start().max(portfolio.start())..=up.end())
        .map(|t| {
            let restricted = portfolio.restrict(t, portfolio.end())?;
            Ok(StageWorstRow { t, check: check_worst_portfolio(space, &restricted, up.member(t)?, cfg, tol)? })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Matrices acting on paths

pub type Matrix = Vec<Vec<f64>>;

/// `(A X)(ω) = A · (X_t(ω), ..., X_T(ω))`; errors if the result is not adapted.
pub fn apply_matrix(space: &FiniteFilteredSpace, a: &Matrix, x: &AdaptedProcess) -> Result<AdaptedProcess> {
    let dim = x.window_len();
    if a.len() != dim || a.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension(format!("matrix must be {dim}×{dim}")));
    }
    let rows = (0..dim)
        .map(|r| (0..space.outcome_count()).map(|w| (0..dim).map(|c| a[r][c] * x.value(x.start() + c, w)).sum()).collect())
        .collect();
    AdaptedProcess::new(space, x.start(), rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSup {
    pub value: ConditionalValue,
    /// First maximizing matrix per atom.
    pub per_atom_argmax: Vec<usize>,
    /// First matrix attaining the maximum on every atom.
    pub uniform: Option<usize>,
}

impl MatrixSup {
    /// The directedness needed for a single maximizing matrix; reported as
    /// failed when no matrix attains every atom.
    pub fn directed(&self) -> bool {
        self.uniform.is_some()
    }
}

/// `ess sup_{A ∈ C} Ψ(A X)`.
pub fn matrix_sup(
    space: &FiniteFilteredSpace,
    u: &UtilityFunction,
    x: &AdaptedProcess,
    matrices: &[Matrix],
) -> Result<MatrixSup> {
    if matrices.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let values: Vec<ConditionalValue> =
        matrices.iter().map(|a| u.insurance_evaluate(space, &apply_matrix(space, a, x)?)).collect::<Result<_>>()?;
    let atoms = values[0].len();
    let mut arg = vec![0; atoms];
    for (k, c) in arg.iter_mut().enumerate() {
        for j in 1..values.len() {
            if values[j].get(k) > values[*c].get(k) {
                *c = j;
            }
        }
    }
    let best: Vec<f64> = (0..atoms).map(|k| values[arg[k]].get(k)).collect();
    let uniform = (0..values.len()).find(|&j| attains(values[j].values(), &best));
    Ok(MatrixSup { value: ConditionalValue::new(space, u.start(), best)?, per_atom_argmax: arg, uniform })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixConclusion {
    pub lhs: ConditionalValue,
    pub rhs: ConditionalValue,
    /// `max_k (lhs - rhs)`.
    pub max_violation: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCompareReport {
    pub seed: u64,
    pub samples: usize,
    /// `A (1, ..., 1) = (1, ..., 1)`.
    pub unit_eigenvector: bool,
    pub nonnegative: bool,
    /// Sampled: `φ(AX) ≥ 0 ⇒ φ(X) ≥ 0`.
    pub acceptance: bool,
    /// `A Σ X̃^i ≤ Σ X̄^i` pointwise.
    pub dominance: bool,
    /// Present only when every hypothesis holds.
    pub conclusion: Option<MatrixConclusion>,
}

impl MatrixCompareReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.unit_eigenvector && self.nonnegative && self.acceptance && self.dominance
    }
}

/// Checks the hypotheses under which `Ψ(A mean X̃) ≤ Ψ(A mean X̄)` and, when
/// all of them hold, the inequality itself. The acceptance implication is
/// sampled: random `X` are shifted so that `φ(AX) = 0`, plus the two
/// portfolio means as probes.
pub fn matrix_compare(
    space: &FiniteFilteredSpace,
    a: &Matrix,
    u: &UtilityFunction,
    x_tilde: &Portfolio,
    x_bar: &Portfolio,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<MatrixCompareReport> {
    let (t, end) = (u.start(), u.end());
    let dim = end + 1 - t;
    if a.len() != dim || a.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension(format!("matrix must be {dim}×{dim}")));
    }
    check_utility_window(u, x_tilde.start(), x_tilde.end())?;
    check_utility_window(u, x_bar.start(), x_bar.end())?;
    if x_tilde.len() != x_bar.len() {
        // The dominance hypothesis compares sums, the conclusion means.
        return Err(Error::Dimension("both portfolios need the same number of members".into()));
    }
    let unit_eigenvector = a.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    let nonnegative = a.iter().flatten().all(|v| *v >= 0.0);

    let mut rng = sample::rng(seed);
    let mut probes: Vec<AdaptedProcess> = (0..samples)
        .map(|_| {
            let scale: f64 = rng.gen_range(0.5..3.0);
            sample::random_adapted(&mut rng, space, t, end, -scale, scale)
        })
        .collect();
    probes.push(x_tilde.mean().neg());
    probes.push(x_bar.mean().neg());
    let mut acceptance = true;
    if unit_eigenvector {
        for x in &probes {
            let level = u.evaluate(space, &apply_matrix(space, a, x)?)?;
            // Shift so that φ(A X') = 0; A fixes constants in time.
            let shifted = x.add_conditional(space, &level.neg())?;
            let check = u.evaluate(space, &shifted)?;
            if check.values().iter().any(|v| *v < -tol) {
                acceptance = false;
                break;
            }
        }
    } else {
        acceptance = false;
    }

    let sum_tilde = apply_matrix(space, a, &x_tilde.mean())?;
    let sum_bar = x_bar.mean();
    let dominance = sum_tilde.le(&sum_bar, tol)?;

    let mut report =
        MatrixCompareReport { seed, samples, unit_eigenvector, nonnegative, acceptance, dominance, conclusion: None };
    if report.hypotheses_hold() {
        let lhs = u.insurance_evaluate(space, &sum_tilde)?;
        let rhs = u.insurance_evaluate(space, &apply_matrix(space, a, &sum_bar)?)?;
        let max_violation = lhs.values().iter().zip(rhs.values()).map(|(l, r)| l - r).fold(f64::NEG_INFINITY, f64::max);
        report.conclusion = Some(MatrixConclusion { holds: max_violation <= tol, lhs, rhs, max_violation });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::EntropicUtility;

    fn tree() -> FiniteFilteredSpace {
        FiniteFilteredSpace::uniform(4, vec![vec![vec![0, 1, 2, 3]], vec![vec![0], vec![1], vec![2], vec![3]]]).unwrap()
    }

    #[test]
    fn constant_marginals_give_the_mean_constant() {
        let space = tree();
        let mut rng = sample::rng(2);
        let u = sample::random_coherent_utility(&mut rng, &space, 0, 1, 2).unwrap();
        let p = Portfolio::new(vec![
            AdaptedProcess::constant(&space, 0, 1, 1.0),
            AdaptedProcess::constant(&space, 0, 1, 3.0),
        ])
        .unwrap();
        let rep = verify_worst_case_duality(&space, &p, &u, &SearchConfig::default(), 1e-9).unwrap();
        assert!(rep.equality_holds);
        assert!((rep.lhs.get(0) - 2.0).abs() < 1e-12);
        assert_eq!(rep.worst.search_size, 1);
        assert!(rep.worst.attained_uniformly);
    }

    #[test]
    fn duality_on_small_instance() {
        let space = tree();
        let mut rng = sample::rng(8);
        let u = sample::random_coherent_utility(&mut rng, &space, 0, 1, 2).unwrap();
        let p = Portfolio::new(vec![
            sample::random_integer_adapted(&mut rng, &space, 0, 1, 0, 3),
            sample::random_integer_adapted(&mut rng, &space, 0, 1, 0, 3),
        ])
        .unwrap();
        let rep = verify_worst_case_duality(&space, &p, &u, &SearchConfig::default(), 1e-9).unwrap();
        assert!(rep.equality_holds, "{rep:?}");
        let mean_value = UtilityFunction::DualFinite(u).insurance_evaluate(&space, &p.mean()).unwrap();
        assert!(rep.lhs.get(0) >= mean_value.get(0) - 1e-12);
        if let ComonotoneOutcome::Found { attains, .. } = rep.comonotone {
            assert!(attains);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let space = tree();
        let mut rng = sample::rng(4);
        let u = UtilityFunction::DualFinite(sample::random_coherent_utility(&mut rng, &space, 0, 1, 3).unwrap());
        let p = Portfolio::new((0..3).map(|_| sample::random_adapted(&mut rng, &space, 0, 1, -1.0, 1.0)).collect()).unwrap();
        let one = worst_portfolio_bruteforce(&space, &p, &u, &SearchConfig { workers: Some(1), ..Default::default() });
        let four = worst_portfolio_bruteforce(&space, &p, &u, &SearchConfig { workers: Some(4), ..Default::default() });
        assert_eq!(one.unwrap(), four.unwrap());
    }

    #[test]
    fn single_law_invariant_marginal_attains_everywhere() {
        let space = tree();
        let u = UtilityFunction::Entropic(EntropicUtility::new(&space, 1.0, 0, 1).unwrap());
        let x = AdaptedProcess::new(&space, 0, vec![vec![0.0; 4], vec![1.0, -1.0, 2.0, 0.5]]).unwrap();
        let p = Portfolio::new(vec![x.clone()]).unwrap();
        let res = worst_portfolio_bruteforce(&space, &p, &u, &SearchConfig::default()).unwrap();
        assert!(res.attained_uniformly);
        assert_eq!(res.attaining_index, Some(vec![0]));
        assert!(res.sup_value.approx_eq(&u.insurance_evaluate(&space, &x).unwrap(), 1e-12));
    }

    #[test]
    fn product_cap_is_enforced() {
        let space = tree();
        let u = UtilityFunction::Entropic(EntropicUtility::new(&space, 1.0, 0, 1).unwrap());
        let x = AdaptedProcess::new(&space, 0, vec![vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let p = Portfolio::new(vec![x.clone(), x]).unwrap();
        let cfg = SearchConfig { product_cap: 100, ..Default::default() };
        assert!(matches!(worst_portfolio_bruteforce(&space, &p, &u, &cfg), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn psd_portfolio_with_identity_is_worst() {
        let space = tree();
        let a = DensityProcess::new(&space, 0, vec![vec![0.0; 4], vec![0.4, 1.6, 1.2, 0.8]]).unwrap();
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let p = build_psd_portfolio(&space, &a, &[id.clone(), id], &[vec![0.0, 1.0], vec![1.0, 0.0]], &Event::whole(&space))
            .unwrap();
        let u = UtilityFunction::DualFinite(DualFiniteUtility::coherent(&space, 0, 1, vec![a.clone()]).unwrap());
        let check = check_worst_portfolio(&space, &p, &u, &SearchConfig::default(), 1e-9).unwrap();
        assert!(check.is_worst, "{check:?}");
        let bad = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(
            build_psd_portfolio(&space, &a, &[bad], &[vec![0.0, 0.0]], &Event::whole(&space)),
            Err(Error::NotPsd(_))
        ));
    }

    #[test]
    fn matrix_sup_identity_and_constants() {
        let space = tree();
        let u = UtilityFunction::Entropic(EntropicUtility::new(&space, 1.0, 0, 1).unwrap());
        let x = AdaptedProcess::new(&space, 0, vec![vec![1.0; 4], vec![3.0, -1.0, 2.0, 0.0]]).unwrap();
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let avg = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let r = matrix_sup(&space, &u, &x, &[id.clone()]).unwrap();
        assert!(r.value.approx_eq(&u.insurance_evaluate(&space, &x).unwrap(), 1e-12));
        let r = matrix_sup(&space, &u, &x, &[avg.clone(), id.clone()]).unwrap();
        assert_eq!(r.uniform, Some(1));
        let c = AdaptedProcess::constant(&space, 0, 1, 2.5);
        let r = matrix_sup(&space, &u, &c, &[avg, id]).unwrap();
        assert!((r.value.get(0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn matrix_compare_guards_negative_entries() {
        let space = tree();
        let u = UtilityFunction::Entropic(EntropicUtility::new(&space, 1.0, 0, 1).unwrap());
        let p = Portfolio::new(vec![AdaptedProcess::constant(&space, 0, 1, 0.0)]).unwrap();
        let a = vec![vec![1.0, 0.0], vec![2.0, -1.0]];
        let rep = matrix_compare(&space, &a, &u, &p, &p, 5, 1, 1e-9).unwrap();
        assert!(!rep.nonnegative);
        assert!(rep.conclusion.is_none());
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let bigger = Portfolio::new(vec![AdaptedProcess::constant(&space, 0, 1, 1.0)]).unwrap();
        let rep = matrix_compare(&space, &id, &u, &p, &bigger, 5, 1, 1e-9).unwrap();
        assert!(rep.hypotheses_hold());
        assert!(rep.conclusion.unwrap().holds);
    }
}
