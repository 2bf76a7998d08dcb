//! Preservation of worst-case portfolios across time.
//!
//! An adapted worst process is a family of portfolios `X^{t,·}` on `[t, T]`,
//! each worst for `Ψ_{t,T}`, linked by `(X^{t,i}_t, X^{t+1,i}) ∼ X^{t,i}`.
//! Under time-consistency (plus structural conditions on the dual
//! representation) the first portfolio, restricted to `[t, T]`, is again
//! worst for `Ψ_{t,T}`. This module searches for adapted worst processes by
//! brute force, checks the structural conditions, and re-certifies the
//! restrictions.

use crate::error::{Error, Result};
use crate::processes::{membership, concatenation_stability, AdaptedProcess, DensityClass, StabilityConfig};
use crate::rearrange::{enumerate_class, path_law, PATH_TOL};
use crate::space::FiniteFilteredSpace;
use crate::utility::{check_axioms, penalty, time_consistency_check, Axiom, AxiomStatus, UtilityFunction, UtilityProcess};

use super::{
    attaining_tuples, check_worst_portfolio, enumerate_classes, worst_portfolio_over, Portfolio, SearchConfig,
    StageWorstRow, WorstCheck,
};

/// Which set of structural conditions to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreservationVariant {
    /// Scenario sets in `D^e`, bounded above by one `b ∈ A1+`, tails bounded
    /// below by positive `ε_s`, time-consistency.
    General,
    /// Normalized coherent, relevant, concatenation-stable scenario sets, time-consistency.
    NormalizedCoherent,
    /// Two periods with a finite scenario set of positive weights; only `t = start + 1` is concluded.
    TwoPeriod,
    /// Entropic utilities; time-consistency only.
    Entropic,
}

impl PreservationVariant {
    pub fn label(&self) -> &'static str {
        match self {
            Self::General => "general",
            Self::NormalizedCoherent => "normalized-coherent",
            Self::TwoPeriod => "two-period",
            Self::Entropic => "entropic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::General, Self::NormalizedCoherent, Self::TwoPeriod, Self::Entropic].into_iter().find(|v| v.label() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub variant: PreservationVariant,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn met(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    fn push(&mut self, name: &'static str, holds: bool, detail: impl Into<String>) {
        self.checks.push(HypothesisCheck { name, holds, detail: detail.into() });
    }
}

fn dual_finite_members(up: &UtilityProcess) -> Option<Vec<&crate::utility::DualFiniteUtility>> {
    up.members().iter().map(|u| u.as_dual_finite()).collect()
}

/// Checks the structural conditions of `variant` for `up`. Time-consistency
/// is sampled with `samples` processes per stopping time.
pub fn check_hypotheses(
    space: &FiniteFilteredSpace,
    up: &UtilityProcess,
    variant: PreservationVariant,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<HypothesisReport> {
    let mut rep = HypothesisReport { variant, checks: Vec::new() };
    let tc = time_consistency_check(space, up, samples, seed, tol)?;
    rep.push("time-consistent", tc.passed(), format!("max residual {:e} over {} checks", tc.max_residual, tc.checks));
    let end = up.end();
    match variant {
        PreservationVariant::Entropic => {
            let all = up.members().iter().all(|u| matches!(u, UtilityFunction::Entropic(_)));
            rep.push("entropic", all, "every member is entropic");
        }
        PreservationVariant::General => {
            let Some(members) = dual_finite_members(up) else {
                rep.push("dual-finite", false, "the general conditions are checked on dual-finite members only");
                return Ok(rep);
            };
            let mut in_de = true;
            let mut pen_residual: f64 = 0.0;
            for u in &members {
                for (a, g) in u.scenarios().iter().zip(u.penalties()) {
                    in_de &= membership(space, a, DensityClass::De, u.start()).holds;
                    if g.values().iter().all(|v| v.is_finite()) {
                        let p = penalty(space, u, a, None)?.value;
                        pen_residual = pen_residual.max(p.max_abs_diff(g));
                    }
                }
            }
            rep.push("scenarios-in-De", in_de, "every scenario is in D^e on its window");
            rep.push(
                "penalty-representation",
                pen_residual <= 1e-7,
                format!("largest gap between a scenario's penalty and its LP penalty: {pen_residual:e}"),
            );
            // b is the pointwise maximum of all increments, so the bound holds
            // by construction; it only has to be finite.
            let mut b_max: f64 = 0.0;
            for u in &members {
                for a in u.scenarios() {
                    for s in a.start()..=a.end() {
                        b_max = b_max.max(a.increment_slice(s).iter().copied().fold(0.0, f64::max));
                    }
                }
            }
            rep.push("upper-bound", b_max.is_finite(), format!("sup of increments {b_max}"));
            let mut eps_min = f64::INFINITY;
            for u in &members {
                let s = u.start();
                if s == end {
                    continue;
                }
                for a in u.scenarios() {
                    for w in 0..space.outcome_count() {
                        eps_min = eps_min.min(a.pathwise_tail(s + 1, w));
                    }
                }
            }
            let eps_ok = eps_min > 0.0;
            let detail = if eps_min.is_finite() {
                format!("smallest tail after the window start {eps_min:e}")
            } else {
                "vacuous: single-date windows only".to_string()
            };
            rep.push("tail-lower-bound", eps_ok || eps_min.is_infinite(), detail);
            rep.push("convex", true, "a finite scenario set and its closed convex hull give the same utility");
        }
        PreservationVariant::NormalizedCoherent => {
            let Some(members) = dual_finite_members(up) else {
                rep.push("coherent", false, "members must be dual-finite and coherent");
                return Ok(rep);
            };
            rep.push("coherent", members.iter().all(|u| u.is_coherent()), "zero penalties");
            let mut relevant = true;
            for u in up.members() {
                let ax = check_axioms(space, u, samples.max(1), seed, tol)?;
                relevant &= ax.status(Axiom::Relevance) != AxiomStatus::Fail
                    && ax.status(Axiom::CashInvariance) != AxiomStatus::Fail;
            }
            rep.push("normalized-relevant", relevant, "normalization and relevance sampled per member");
            let mut stable = true;
            let mut exhaustive = true;
            for u in &members {
                let r = concatenation_stability(space, u.scenarios(), &StabilityConfig::default())?;
                stable &= r.stable;
                exhaustive &= r.exhaustive_stopping_times;
            }
            let detail = if exhaustive { "all stopping times" } else { "deterministic stopping times only" };
            rep.push("concatenation-stable", stable, detail);
        }
        PreservationVariant::TwoPeriod => {
            rep.push("two-periods", end == up.start() + 2, format!("window [{}, {end}]", up.start()));
            match up.members().first().and_then(|u| u.as_dual_finite()) {
                Some(u) => {
                    let positive = u.scenarios().iter().all(|a| {
                        (a.start() + 1..=a.end()).all(|s| a.increment_slice(s).iter().all(|v| *v > 0.0))
                    });
                    rep.push("equivalent-measures", positive, "later increments strictly positive");
                }
                None => rep.push("equivalent-measures", false, "first member must be dual-finite"),
            }
        }
    }
    Ok(rep)
}

/// Portfolios `X^{t,·}` on `[t, T]` for `t = start, ..., T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedWorstProcess {
    pub stages: Vec<Portfolio>,
}

impl AdaptedWorstProcess {
    pub fn new(stages: Vec<Portfolio>) -> Result<Self> {
        let first = stages.first().ok_or(Error::EmptyFamily)?;
        for (j, p) in stages.iter().enumerate() {
            if p.start() != first.start() + j || p.end() != first.end() || p.len() != first.len() {
                return Err(Error::WindowMismatch(format!("stage {j} does not continue the previous one")));
            }
        }
        if first.start() + stages.len() - 1 != first.end() {
            return Err(Error::WindowMismatch("one stage per date up to the horizon".into()));
        }
        Ok(Self { stages })
    }

    pub fn start(&self) -> usize {
        self.stages[0].start()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCheck {
    pub t: usize,
    pub worst: WorstCheck,
    /// `(X^{t,i}_t, X^{t+1,i}) ∼ X^{t,i}` for every `i`; true at the last stage.
    pub linked: bool,
    /// First member `i` whose link to the next stage fails.
    pub link_violation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedWorstReport {
    pub stages: Vec<StageCheck>,
}

impl AdaptedWorstReport {
    pub fn valid(&self) -> bool {
        self.stages.iter().all(|s| s.worst.is_worst && s.linked)
    }
}

fn linked(space: &FiniteFilteredSpace, now: &AdaptedProcess, next: &AdaptedProcess) -> bool {
    let mut rows = vec![now.slice(now.start()).to_vec()];
    rows.extend(next.rows().iter().cloned());
    match AdaptedProcess::new(space, now.start(), rows) {
        Ok(joined) => path_law(space, &joined).approx_eq(&path_law(space, now), PATH_TOL),
        Err(_) => false,
    }
}

pub fn check_adapted_worst_process(
    space: &FiniteFilteredSpace,
    candidate: &AdaptedWorstProcess,
    up: &UtilityProcess,
    cfg: &SearchConfig,
    tol: f64,
) -> Result<AdaptedWorstReport> {
    let mut stages = Vec::with_capacity(candidate.stages.len());
    for (j, p) in candidate.stages.iter().enumerate() {
        let t = p.start();
        let worst = check_worst_portfolio(space, p, up.member(t)?, cfg, tol)?;
        let link_violation = candidate
            .stages
            .get(j + 1)
            .and_then(|next| p.members().iter().zip(next.members()).position(|(x, y)| !linked(space, x, y)));
        stages.push(StageCheck { t, worst, linked: link_violation.is_none(), link_violation });
    }
    Ok(AdaptedWorstReport { stages })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub process: Option<AdaptedWorstProcess>,
    /// Candidate tuples tried across all stages.
    pub nodes: usize,
    /// True when the node budget ran out before the search finished.
    pub truncated: bool,
}

struct Search<'a> {
    space: &'a FiniteFilteredSpace,
    up: &'a UtilityProcess,
    cfg: &'a SearchConfig,
    node_cap: usize,
    nodes: usize,
}

impl Search<'_> {
    /// Extends `stages` (last entry on `[t, T]`) to the horizon.
    fn extend(&mut self, stages: &mut Vec<Portfolio>) -> Result<bool> {
        let current = stages.last().expect("at least one stage").clone();
        let t = current.start();
        if t == self.up.end() {
            return Ok(true);
        }
        let end = current.end();
        let mut links = Vec::with_capacity(current.len());
        let mut marginals = Vec::with_capacity(current.len());
        for x in current.members() {
            let class = enumerate_class(self.space, x, self.cfg.class_cap)?;
            let mut next: Vec<AdaptedProcess> = Vec::new();
            for w in &class.members {
                if w.slice(t).iter().zip(x.slice(t)).all(|(a, b)| (a - b).abs() <= PATH_TOL) {
                    let tail = w.restrict(t + 1, end)?;
                    if !next.iter().any(|y| y.approx_eq(&tail, PATH_TOL)) {
                        next.push(tail);
                    }
                }
            }
            links.push(next);
            marginals.push(x.restrict(t + 1, end)?);
        }
        let u = self.up.member(t + 1)?;
        let classes = enumerate_classes(self.space, &Portfolio::new(marginals)?, self.cfg.class_cap)?;
        let candidates: Vec<Vec<AdaptedProcess>> = classes.into_iter().map(|c| c.members).collect();
        let sup = worst_portfolio_over(self.space, &candidates, u, self.cfg)?.sup_value;
        let budget = self.node_cap.saturating_sub(self.nodes);
        for tuple in attaining_tuples(self.space, &links, u, &sup, self.cfg, budget.max(1))? {
            if self.nodes >= self.node_cap {
                return Ok(false);
            }
            self.nodes += 1;
            let members = tuple.iter().enumerate().map(|(i, &m)| links[i][m].clone()).collect();
            stages.push(Portfolio::new(members)?);
            if self.extend(stages)? {
                return Ok(true);
            }
            stages.pop();
        }
        Ok(false)
    }
}

/// Searches for an adapted worst process whose first stage is a worst
/// portfolio for the given marginals. Stage-0 attainers are tried in
/// enumeration order, then each later stage picks linked continuations that
/// attain the stage supremum, backtracking on dead ends.
pub fn search_adapted_worst_process(
    space: &FiniteFilteredSpace,
    up: &UtilityProcess,
    marginals: &Portfolio,
    cfg: &SearchConfig,
    node_cap: usize,
) -> Result<SearchOutcome> {
    if marginals.start() != up.start() || marginals.end() != up.end() {
        return Err(Error::WindowMismatch("marginals must live on the utility process window".into()));
    }
    let u = up.member(up.start())?;
    let classes = enumerate_classes(space, marginals, cfg.class_cap)?;
    let candidates: Vec<Vec<AdaptedProcess>> = classes.into_iter().map(|c| c.members).collect();
    let sup = worst_portfolio_over(space, &candidates, u, cfg)?.sup_value;
    let mut search = Search { space, up, cfg, node_cap, nodes: 0 };
    for tuple in attaining_tuples(space, &candidates, u, &sup, cfg, node_cap.max(1))? {
        if search.nodes >= node_cap {
            break;
        }
        search.nodes += 1;
        let members = tuple.iter().enumerate().map(|(i, &m)| candidates[i][m].clone()).collect();
        let mut stages = vec![Portfolio::new(members)?];
        if search.extend(&mut stages)? {
            return Ok(SearchOutcome {
                process: Some(AdaptedWorstProcess::new(stages)?),
                nodes: search.nodes,
                truncated: false,
            });
        }
    }
    Ok(SearchOutcome { process: None, truncated: search.nodes >= node_cap, nodes: search.nodes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreservationReport {
    pub hypotheses: HypothesisReport,
    pub adapted: AdaptedWorstReport,
    /// Re-certification of `X^{start,·}|[t,T]` for each concluded `t`; empty
    /// when a premise fails, since the conclusion is then not tested.
    pub rows: Vec<StageWorstRow>,
}

impl PreservationReport {
    /// Whether the instance satisfies every premise (hypotheses and a valid adapted worst process).
    pub fn applicable(&self) -> bool {
        self.hypotheses.met() && self.adapted.valid()
    }

    /// Whether the conclusion was tested and held at every concluded date.
    pub fn holds(&self) -> bool {
        self.applicable() && self.rows.iter().all(|r| r.check.is_worst)
    }

    /// True when some re-certification compared against more than one tuple.
    pub fn nontrivial(&self) -> bool {
        self.rows.iter().any(|r| r.check.search_size > 1)
    }
}

pub fn verify_preservation(
    space: &FiniteFilteredSpace,
    up: &UtilityProcess,
    candidate: &AdaptedWorstProcess,
    variant: PreservationVariant,
    cfg: &SearchConfig,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<PreservationReport> {
    let hypotheses = check_hypotheses(space, up, variant, samples, seed, tol)?;
    let adapted = check_adapted_worst_process(space, candidate, up, cfg, tol)?;
    if !(hypotheses.met() && adapted.valid()) {
        return Ok(PreservationReport { hypotheses, adapted, rows: Vec::new() });
    }
    let first = &candidate.stages[0];
    let last = if variant == PreservationVariant::TwoPeriod { (first.start() + 1).min(up.end()) } else { up.end() };
    let rows = (first.start() + 1..=last)
        .map(|t| {
            let restricted = first.restrict(t, first.end())?;
            Ok(StageWorstRow { t, check: check_worst_portfolio(space, &restricted, up.member(t)?, cfg, tol)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreservationReport { hypotheses, adapted, rows })
}
