//! Monetary utility functions on a window `[t, T]` and their insurance
//! versions `Ψ(X) = -φ(-X)`.
//!
//! Three families are supported: dual-finite utilities given by finitely
//! many scenario densities with penalties, the entropic utility, and the
//! robust entropic utility over a finite set of terminal densities.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lp::{box_minimize, LpOutcome};
use crate::processes::{
    concatenate, membership, pairing, AdaptedProcess, DensityClass, DensityProcess, TerminalDensity,
    EXHAUSTIVE_STOPPING_MAX_HORIZON, EXHAUSTIVE_STOPPING_MAX_OUTCOMES,
};
use crate::sample;
use crate::space::{enumerate_stopping_times, ConditionalValue, Event, FiniteFilteredSpace, StoppingTime, EQ_TOL};

/// Default number of sampled inputs per axiom.
pub const DEFAULT_AXIOM_SAMPLES: usize = 25;
/// Stopping-time enumeration cap used by the time-consistency check.
const STOPPING_TIME_CAP: usize = 100_000;

/// `φ(X) = min_i (≺X, a_i≻_{t,T} - γ_i)` over finitely many scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct DualFiniteUtility {
    start: usize,
    end: usize,
    scenarios: Vec<DensityProcess>,
    penalties: Vec<ConditionalValue>,
}

impl DualFiniteUtility {
    /// Validates that every scenario lies in `D_{start,end}` and that the
    /// penalties take values in `[-∞, 0]` with atom-wise maximum zero.
    pub fn new(
        space: &FiniteFilteredSpace,
        start: usize,
        end: usize,
        scenarios: Vec<DensityProcess>,
        penalties: Vec<ConditionalValue>,
    ) -> Result<Self> {
        let u = Self::new_unchecked(space, start, end, scenarios, penalties)?;
        for (i, a) in u.scenarios.iter().enumerate() {
            let m = membership(space, a, DensityClass::D, start);
            if !m.holds {
                return Err(Error::InvalidUtility(format!(
                    "scenario {i}: {}",
                    m.violation.unwrap_or_default()
                )));
            }
        }
        for (i, g) in u.penalties.iter().enumerate() {
            if let Some(k) = g.values().iter().position(|v| *v > 0.0) {
                return Err(Error::InvalidUtility(format!("penalty {i} is positive on atom {k}")));
            }
        }
        for k in 0..space.atom_count(start) {
            let top = u.penalties.iter().map(|g| g.get(k)).fold(f64::NEG_INFINITY, f64::max);
            if top.abs() > EQ_TOL {
                return Err(Error::InvalidUtility(format!("penalties have maximum {top} on atom {k}, expected 0")));
            }
        }
        Ok(u)
    }

    /// Only checks shapes and windows; penalties and densities may violate
    /// the utility axioms. Used to build deliberately broken utilities.
    pub fn new_unchecked(
        space: &FiniteFilteredSpace,
        start: usize,
        end: usize,
        scenarios: Vec<DensityProcess>,
        penalties: Vec<ConditionalValue>,
    ) -> Result<Self> {
        space.check_time(end)?;
        if start > end {
            return Err(Error::WindowMismatch(format!("empty window [{start}, {end}]")));
        }
        if scenarios.is_empty() {
            return Err(Error::EmptyFamily);
        }
        if scenarios.len() != penalties.len() {
            return Err(Error::Dimension(format!(
                "{} scenarios but {} penalties",
                scenarios.len(),
                penalties.len()
            )));
        }
        if let Some(i) = scenarios.iter().position(|a| a.start() != start || a.end() != end) {
            return Err(Error::WindowMismatch(format!("scenario {i} is not on [{start}, {end}]")));
        }
        if let Some(i) = penalties.iter().position(|g| g.time() != start) {
            return Err(Error::TimeMismatch { expected: start, found: penalties[i].time() });
        }
        Ok(Self { start, end, scenarios, penalties })
    }

    /// All penalties zero.
    pub fn coherent(space: &FiniteFilteredSpace, start: usize, end: usize, scenarios: Vec<DensityProcess>) -> Result<Self> {
        let penalties = vec![ConditionalValue::constant(space, start, 0.0); scenarios.len()];
        Self::new(space, start, end, scenarios, penalties)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn scenarios(&self) -> &[DensityProcess] {
        &self.scenarios
    }

    pub fn penalties(&self) -> &[ConditionalValue] {
        &self.penalties
    }

    pub fn is_coherent(&self) -> bool {
        self.penalties.iter().all(|g| g.values().iter().all(|v| *v == 0.0))
    }

    /// `≺X, a_i≻ - γ_i` for each scenario, in list order.
    pub fn scenario_values(&self, space: &FiniteFilteredSpace, x: &AdaptedProcess) -> Result<Vec<ConditionalValue>> {
        self.scenarios
            .iter()
            .zip(&self.penalties)
            .map(|(a, g)| {
                let p = pairing(space, x, a, self.start, self.end)?;
                p.zip_with(g, |v, g| if g == f64::NEG_INFINITY { f64::INFINITY } else { v - g })
            })
            .collect()
    }

    fn evaluate(&self, space: &FiniteFilteredSpace, x: &AdaptedProcess) -> Result<ConditionalValue> {
        let values = self.scenario_values(space, x)?;
        let mut out = values[0].values().to_vec();
        for v in &values[1..] {
            for (o, x) in out.iter_mut().zip(v.values()) {
                *o = o.min(*x);
            }
        }
        if out.iter().any(|v| *v == f64::INFINITY) {
            return Err(Error::InvalidUtility("every scenario has infinite penalty on some atom".into()));
        }
        ConditionalValue::new(space, self.start, out)
    }
}

/// `φ_{t,T}(X) = -(1/α) log E[exp(-α X_T) | F_t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropicUtility {
    alpha: f64,
    start: usize,
    end: usize,
}

impl EntropicUtility {
    pub fn new(space: &FiniteFilteredSpace, alpha: f64, start: usize, end: usize) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidUtility(format!("entropic α must be positive, got {alpha}")));
        }
        space.check_time(end)?;
        if start > end {
            return Err(Error::WindowMismatch(format!("empty window [{start}, {end}]")));
        }
        Ok(Self { alpha, start, end })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// `φ_{t,T}(X) = min_{f ∈ P} -(1/α) log (E(f exp(-α X_T) | F_t) / E(f | F_t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustEntropicUtility {
    alpha: f64,
    start: usize,
    end: usize,
    densities: Vec<TerminalDensity>,
}

impl RobustEntropicUtility {
    pub fn new(
        space: &FiniteFilteredSpace,
        alpha: f64,
        start: usize,
        end: usize,
        densities: Vec<TerminalDensity>,
    ) -> Result<Self> {
        EntropicUtility::new(space, alpha, start, end)?;
        if densities.is_empty() {
            return Err(Error::EmptyFamily);
        }
        Ok(Self { alpha, start, end, densities })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn densities(&self) -> &[TerminalDensity] {
        &self.densities
    }
}

/// `-(1/α) log (E(w e^{-α x} | F_t) / E(w | F_t))`, evaluated stably.
fn weighted_certainty_equivalent(
    space: &FiniteFilteredSpace,
    alpha: f64,
    x: &[f64],
    weight: &[f64],
    t: usize,
) -> Vec<f64> {
    (0..space.atom_count(t))
        .map(|k| {
            let atom = space.atom(t, k);
            let top = atom.iter().map(|&w| -alpha * x[w]).fold(f64::NEG_INFINITY, f64::max);
            let num: f64 = atom.iter().map(|&w| space.prob(w) * weight[w] * (-alpha * x[w] - top).exp()).sum();
            let den: f64 = atom.iter().map(|&w| space.prob(w) * weight[w]).sum();
            -(top + (num / den).ln()) / alpha
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum UtilityFunction {
    DualFinite(DualFiniteUtility),
    Entropic(EntropicUtility),
    RobustEntropic(RobustEntropicUtility),
}

impl UtilityFunction {
    pub fn start(&self) -> usize {
        match self {
            Self::DualFinite(u) => u.start,
            Self::Entropic(u) => u.start,
            Self::RobustEntropic(u) => u.start,
        }
    }

    pub fn end(&self) -> usize {
        match self {
            Self::DualFinite(u) => u.end,
            Self::Entropic(u) => u.end,
            Self::RobustEntropic(u) => u.end,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::DualFinite(_) => "dual-finite",
            Self::Entropic(_) => "entropic",
            Self::RobustEntropic(_) => "robust-entropic",
        }
    }

    pub fn as_dual_finite(&self) -> Option<&DualFiniteUtility> {
        match self {
            Self::DualFinite(u) => Some(u),
            _ => None,
        }
    }

    /// Law invariance holds for the entropic utility; dual-finite and robust
    /// variants generally depend on more than the law.
    pub fn is_law_invariant(&self) -> bool {
        matches!(self, Self::Entropic(_))
    }

    fn window(&self, x: &AdaptedProcess) -> Result<AdaptedProcess> {
        let (s, e) = (self.start(), self.end());
        if !x.covers(s, e) {
            return Err(Error::WindowMismatch(format!(
                "utility on [{s}, {e}] applied to a process on [{}, {}]",
                x.start(),
                x.end()
            )));
        }
        if x.start() == s && x.end() == e {
            Ok(x.clone())
        } else {
            x.restrict(s, e)
        }
    }

    /// `φ_{t,T}(X)` as an `F_t`-measurable value.
    pub fn evaluate(&self, space: &FiniteFilteredSpace, x: &AdaptedProcess) -> Result<ConditionalValue> {
        let x = self.window(x)?;
        match self {
            Self::DualFinite(u) => u.evaluate(space, &x),
            Self::Entropic(u) => {
                let ones = vec![1.0; space.outcome_count()];
                let v = weighted_certainty_equivalent(space, u.alpha, x.slice(u.end), &ones, u.start);
                ConditionalValue::new(space, u.start, v)
            }
            Self::RobustEntropic(u) => {
                let mut best: Option<Vec<f64>> = None;
                for f in &u.densities {
                    let v = weighted_certainty_equivalent(space, u.alpha, x.slice(u.end), f.values(), u.start);
                    best = Some(match best {
                        None => v,
                        Some(b) => b.iter().zip(&v).map(|(a, b)| a.min(*b)).collect(),
                    });
                }
                ConditionalValue::new(space, u.start, best.expect("non-empty density set"))
            }
        }
    }

    /// Insurance version `Ψ(X) = -φ(-X)`.
    pub fn insurance_evaluate(&self, space: &FiniteFilteredSpace, x: &AdaptedProcess) -> Result<ConditionalValue> {
        Ok(self.evaluate(space, &x.neg())?.neg())
    }
}

/// One utility function per time in `[start, end]`, all ending at the same horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityProcess {
    members: Vec<UtilityFunction>,
}

impl UtilityProcess {
    pub fn new(members: Vec<UtilityFunction>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyFamily)?;
        let end = first.end();
        for (i, u) in members.iter().enumerate() {
            if u.start() != first.start() + i || u.end() != end {
                return Err(Error::WindowMismatch(format!(
                    "member {i} is on [{}, {}], expected [{}, {end}]",
                    u.start(),
                    u.end(),
                    first.start() + i
                )));
            }
        }
        Ok(Self { members })
    }

    /// Entropic utilities `φ_{t,T}` for `t ∈ [start, end]`.
    pub fn entropic(space: &FiniteFilteredSpace, alpha: f64, start: usize, end: usize) -> Result<Self> {
        let members = (start..=end)
            .map(|t| EntropicUtility::new(space, alpha, t, end).map(UtilityFunction::Entropic))
            .collect::<Result<_>>()?;
        Self::new(members)
    }

    /// Robust entropic utilities over a common density set.
    pub fn robust_entropic(
        space: &FiniteFilteredSpace,
        alpha: f64,
        start: usize,
        end: usize,
        densities: Vec<TerminalDensity>,
    ) -> Result<Self> {
        let members = (start..=end)
            .map(|t| RobustEntropicUtility::new(space, alpha, t, end, densities.clone()).map(UtilityFunction::RobustEntropic))
            .collect::<Result<_>>()?;
        Self::new(members)
    }

    pub fn start(&self) -> usize {
        self.members[0].start()
    }

    pub fn end(&self) -> usize {
        self.members[0].end()
    }

    pub fn members(&self) -> &[UtilityFunction] {
        &self.members
    }

    pub fn member(&self, t: usize) -> Result<&UtilityFunction> {
        if t < self.start() || t > self.end() {
            return Err(Error::TimeOutOfRange { time: t, lo: self.start(), hi: self.end() });
        }
        Ok(&self.members[t - self.start()])
    }

    /// `φ_{τ,T}(X) := Σ_k φ_{k,T}(1_{τ=k} X)`, returned per outcome.
    pub fn evaluate_stopped(
        &self,
        space: &FiniteFilteredSpace,
        tau: &StoppingTime,
        x: &AdaptedProcess,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; space.outcome_count()];
        for k in tau.min_value()..=tau.max_value() {
            let event = Event::from_indicator((0..space.outcome_count()).map(|w| tau.at(w) == k).collect());
            if !event.indicator().iter().any(|b| *b) {
                continue;
            }
            let u = self.member(k)?;
            let v = space.lift(&u.evaluate(space, &x.restrict(k, self.end())?.restrict_to_event(space, &event)?)?);
            for (o, v) in out.iter_mut().zip(v) {
                *o += v;
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Axioms

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Axiom {
    Locality,
    Monotonicity,
    CashInvariance,
    Concavity,
    Coherence,
    Continuity,
    Relevance,
}

impl Axiom {
    pub const ALL: [Axiom; 7] = [
        Axiom::Locality,
        Axiom::Monotonicity,
        Axiom::CashInvariance,
        Axiom::Concavity,
        Axiom::Coherence,
        Axiom::Continuity,
        Axiom::Relevance,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Axiom::Locality => "(0) locality",
            Axiom::Monotonicity => "(1) monotonicity",
            Axiom::CashInvariance => "(2) cash invariance",
            Axiom::Concavity => "(3) concavity",
            Axiom::Coherence => "(4) coherence",
            Axiom::Continuity => "(5) continuity",
            Axiom::Relevance => "(6) relevance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxiomStatus {
    Pass,
    Fail,
    /// Holds automatically on finite spaces; not tested.
    Vacuous,
}

impl fmt::Display for AxiomStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AxiomStatus::Pass => "PASS",
            AxiomStatus::Fail => "FAIL",
            AxiomStatus::Vacuous => "VACUOUS",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomResult {
    pub axiom: Axiom,
    pub status: AxiomStatus,
    pub checks: usize,
    /// Largest violation seen (0 when every check holds).
    pub max_violation: f64,
    pub counterexample: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub seed: u64,
    pub samples: usize,
    pub tolerance: f64,
    pub results: Vec<AxiomResult>,
}

impl AxiomReport {
    pub fn status(&self, axiom: Axiom) -> AxiomStatus {
        self.results.iter().find(|r| r.axiom == axiom).map(|r| r.status).unwrap_or(AxiomStatus::Fail)
    }

    pub fn result(&self, axiom: Axiom) -> &AxiomResult {
        self.results.iter().find(|r| r.axiom == axiom).expect("every axiom is reported")
    }
}

struct Tally {
    axiom: Axiom,
    checks: usize,
    worst: f64,
    counterexample: Option<String>,
    tol: f64,
}

impl Tally {
    fn new(axiom: Axiom, tol: f64) -> Self {
        Self { axiom, checks: 0, worst: 0.0, counterexample: None, tol }
    }

    /// Records a violation amount (`<= 0` means the check holds).
    fn record(&mut self, violation: f64, describe: impl FnOnce() -> String) {
        self.checks += 1;
        let violation = if violation.is_nan() { f64::INFINITY } else { violation };
        if violation > self.worst {
            self.worst = violation;
            if violation > self.tol {
                self.counterexample = Some(describe());
            }
        }
    }

    fn finish(self) -> AxiomResult {
        let status = if self.worst > self.tol { AxiomStatus::Fail } else { AxiomStatus::Pass };
        AxiomResult {
            axiom: self.axiom,
            status,
            checks: self.checks,
            max_violation: self.worst.max(0.0),
            counterexample: self.counterexample,
        }
    }
}

fn max_violation_le(lhs: &ConditionalValue, rhs: &ConditionalValue) -> f64 {
    lhs.values().iter().zip(rhs.values()).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max)
}

/// Samples each axiom of a monetary utility function. Axiom (5) is
/// reported as vacuous: on a finite space every bounded decreasing
/// sequence converges uniformly.
pub fn check_axioms(
    space: &FiniteFilteredSpace,
    u: &UtilityFunction,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<AxiomReport> {
    let mut rng = sample::rng(seed);
    let (t, end) = (u.start(), u.end());
    let draw = |rng: &mut sample::Rng64| sample::random_adapted(rng, space, t, end, -2.0, 2.0);

    let mut locality = Tally::new(Axiom::Locality, tol);
    let mut monotone = Tally::new(Axiom::Monotonicity, tol);
    let mut cash = Tally::new(Axiom::CashInvariance, tol);
    let mut concave = Tally::new(Axiom::Concavity, tol);
    let mut coherent = Tally::new(Axiom::Coherence, tol);

    for _ in 0..samples {
        let x = draw(&mut rng);
        let fx = u.evaluate(space, &x)?;

        let event = sample::random_event(&mut rng, space, t);
        let lhs = u.evaluate(space, &x.restrict_to_event(space, &event)?)?;
        let rhs_vals = (0..fx.len())
            .map(|k| if event.contains(space.atom(t, k)[0]) { fx.get(k) } else { 0.0 })
            .collect();
        let rhs = ConditionalValue::new(space, t, rhs_vals)?;
        locality.record(lhs.max_abs_diff(&rhs), || format!("event {:?}", event.indicator()));

        let bump = sample::random_adapted(&mut rng, space, t, end, 0.0, 1.0);
        let y = x.add(&bump)?;
        let fy = u.evaluate(space, &y)?;
        monotone.record(max_violation_le(&fx, &fy), || "X ≤ X + nonnegative bump".into());

        let m = sample::random_conditional(&mut rng, space, t, -3.0, 3.0);
        let shifted = u.evaluate(space, &x.add_conditional(space, &m)?)?;
        cash.record(shifted.max_abs_diff(&fx.add(&m)?), || format!("shift by {:?}", m.values()));
        let c: f64 = rng.gen_range(-3.0..3.0);
        let norm = u.evaluate(space, &AdaptedProcess::constant(space, t, end, c))?;
        cash.record(norm.max_abs_diff(&ConditionalValue::constant(space, t, c)), || {
            format!("constant {c} evaluates to {:?}", norm.values())
        });

        let z = draw(&mut rng);
        let fz = u.evaluate(space, &z)?;
        let lambda = sample::random_conditional(&mut rng, space, t, 0.0, 1.0);
        let one_minus = lambda.map(|l| 1.0 - l);
        let mix = x.mul_conditional(space, &lambda)?.add(&z.mul_conditional(space, &one_minus)?)?;
        let fmix = u.evaluate(space, &mix)?;
        let chord = ConditionalValue::new(
            space,
            t,
            (0..fx.len()).map(|k| lambda.get(k) * fx.get(k) + one_minus.get(k) * fz.get(k)).collect(),
        )?;
        concave.record(max_violation_le(&chord, &fmix), || "λX + (1-λ)Y below the chord".into());

        let scale = sample::random_conditional(&mut rng, space, t, 0.0, 3.0);
        for lam in [scale, ConditionalValue::constant(space, t, 2.0)] {
            let scaled = u.evaluate(space, &x.mul_conditional(space, &lam)?)?;
            let expected = ConditionalValue::new(space, t, (0..fx.len()).map(|k| lam.get(k) * fx.get(k)).collect())?;
            let diff = scaled.max_abs_diff(&expected);
            coherent.record(diff, || {
                format!(
                    "λ = {:?}: φ(λX) = {:?} but λφ(X) = {:?}",
                    lam.values(),
                    scaled.values(),
                    expected.values()
                )
            });
        }
    }

    let mut relevance = Tally::new(Axiom::Relevance, tol);
    for s in t..=end {
        for k in 0..space.atom_count(s) {
            let event = Event::from_atoms(space, s, &[k]);
            let parent = space.atom_of(t, space.atom(s, k)[0]);
            for eps in [1.0, 0.1, 0.01] {
                let rows = (t..=end)
                    .map(|r| {
                        (0..space.outcome_count())
                            .map(|w| if r >= s && event.contains(w) { -eps } else { 0.0 })
                            .collect()
                    })
                    .collect();
                let loss = AdaptedProcess::new(space, t, rows)?;
                let v = u.evaluate(space, &loss)?.get(parent);
                // Strictly negative is required; a zero value is a violation.
                let violation = if v < 0.0 { 0.0 } else { v.max(0.0) + 2.0 * tol.max(f64::MIN_POSITIVE) };
                relevance.record(violation, || format!("loss ε = {eps} on F_{s}-atom {k} gives φ = {v}"));
            }
        }
    }

    let results = vec![
        locality.finish(),
        monotone.finish(),
        cash.finish(),
        concave.finish(),
        coherent.finish(),
        AxiomResult {
            axiom: Axiom::Continuity,
            status: AxiomStatus::Vacuous,
            checks: 0,
            max_violation: 0.0,
            counterexample: None,
        },
        relevance.finish(),
    ];
    Ok(AxiomReport { seed, samples, tolerance: tol, results })
}

// ---------------------------------------------------------------------------
// Penalty

/// Penalty values together with the box bound actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyResult {
    pub value: ConditionalValue,
    pub bound: f64,
    /// Per atom: whether the value was declared `-∞` by bound escalation.
    pub unbounded: Vec<bool>,
}

/// Default box bound `10^6 · max(1, ‖γ‖_∞)` (finite penalty values only).
pub fn default_penalty_bound(u: &DualFiniteUtility) -> f64 {
    let norm = u
        .penalties
        .iter()
        .flat_map(|g| g.values().iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    1e6 * norm.max(1.0)
}

/// Per-atom linear program for `φ^#(a)` on the `F_t`-atom `k`: one variable
/// per `(s, F_s-atom inside k)`. Returns the objective, the constraint rows
/// and right-hand sides (`G x ≥ h`).
pub fn penalty_program(
    space: &FiniteFilteredSpace,
    u: &DualFiniteUtility,
    a: &DensityProcess,
    k: usize,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let t = u.start;
    let pb = space.atom_prob(t, k);
    let cells: Vec<(usize, usize)> =
        (t..=u.end).flat_map(|s| space.sub_atoms(t, k, s).into_iter().map(move |c| (s, c))).collect();
    let coeffs = |d: &DensityProcess| -> Vec<f64> {
        cells
            .iter()
            .map(|&(s, c)| space.atom(s, c).iter().map(|&w| space.prob(w) * d.increment(s, w)).sum::<f64>() / pb)
            .collect()
    };
    let mut g = Vec::new();
    let mut h = Vec::new();
    for (ai, gi) in u.scenarios.iter().zip(&u.penalties) {
        let gamma = gi.get(k);
        if gamma.is_finite() {
            g.push(coeffs(ai));
            h.push(gamma);
        }
    }
    (coeffs(a), g, h)
}

/// `φ^#_{t,T}(a) = inf {≺X, a≻ : φ(X) ≥ 0}` for a dual-finite utility,
/// atom by atom. `a` must be a nonnegative adapted density on the
/// utility's window (normalization is not required).
pub fn penalty(
    space: &FiniteFilteredSpace,
    u: &DualFiniteUtility,
    a: &DensityProcess,
    bound: Option<f64>,
) -> Result<PenaltyResult> {
    if a.start() != u.start || a.end() != u.end {
        return Err(Error::WindowMismatch(format!(
            "density on [{}, {}] for a utility on [{}, {}]",
            a.start(),
            a.end(),
            u.start,
            u.end
        )));
    }
    let m = membership(space, a, DensityClass::A1Plus, u.start);
    if !m.holds {
        return Err(Error::InvalidDensity(m.violation.unwrap_or_default()));
    }
    let bound = bound.unwrap_or_else(|| default_penalty_bound(u));
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::InvalidValue(format!("penalty bound must be positive, got {bound}")));
    }
    let mut values = Vec::with_capacity(space.atom_count(u.start));
    let mut unbounded = Vec::with_capacity(values.capacity());
    for k in 0..space.atom_count(u.start) {
        let (c, g, h) = penalty_program(space, u, a, k);
        let (v, inf) = escalate(&c, &g, &h, bound, k)?;
        values.push(v);
        unbounded.push(inf);
    }
    Ok(PenaltyResult { value: ConditionalValue::new(space, u.start, values)?, bound, unbounded })
}

fn solve_box(c: &[f64], g: &[Vec<f64>], h: &[f64], bound: f64, k: usize) -> Result<(f64, bool)> {
    match box_minimize(c, g, h, bound) {
        LpOutcome::Optimal { x, value } => {
            let active = x.iter().any(|v| v.abs() >= bound * (1.0 - 1e-9));
            Ok((value, active))
        }
        LpOutcome::Infeasible => Err(Error::Infeasible(format!("acceptance set is empty on atom {k}"))),
        LpOutcome::Unbounded => unreachable!("box-constrained programs are bounded"),
    }
}

/// Bound escalation: while the box is active, grow it 10× (three rounds);
/// a decrease larger than `1e-6 · M` means the infimum is `-∞`.
fn escalate(c: &[f64], g: &[Vec<f64>], h: &[f64], bound: f64, k: usize) -> Result<(f64, bool)> {
    let (mut value, mut active) = solve_box(c, g, h, bound, k)?;
    let mut m = bound;
    for _ in 0..3 {
        if !active {
            break;
        }
        let (next, next_active) = solve_box(c, g, h, 10.0 * m, k)?;
        if value - next > 1e-6 * m {
            return Ok((f64::NEG_INFINITY, true));
        }
        value = next;
        active = next_active;
        m *= 10.0;
    }
    Ok((value, false))
}

// ---------------------------------------------------------------------------
// Attainment

#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxDensity {
    pub density: DensityProcess,
    /// `Ψ(X)` per atom.
    pub value: ConditionalValue,
    /// Scenario index chosen on each `F_t`-atom.
    pub choice: Vec<usize>,
    pub attained_in_set: bool,
    /// `max_k |≺X, a*≻ + γ(a*) - Ψ(X)|`.
    pub residual: f64,
}

/// Per `F_t`-atom, the first scenario maximizing `≺X, a_i≻ + γ_i`, glued
/// into one density.
pub fn argmax_density(space: &FiniteFilteredSpace, u: &DualFiniteUtility, x: &AdaptedProcess) -> Result<ArgmaxDensity> {
    let xw = UtilityFunction::DualFinite(u.clone()).window(x)?;
    let per: Vec<ConditionalValue> = u
        .scenarios
        .iter()
        .zip(&u.penalties)
        .map(|(a, g)| pairing(space, &xw, a, u.start, u.end)?.zip_with(g, |p, g| p + g))
        .collect::<Result<_>>()?;
    let atoms = space.atom_count(u.start);
    let mut choice = vec![0; atoms];
    for (k, ch) in choice.iter_mut().enumerate() {
        for i in 1..per.len() {
            if per[i].get(k) > per[*ch].get(k) {
                *ch = i;
            }
        }
    }
    let parts: Vec<&DensityProcess> = u.scenarios.iter().collect();
    let density = DensityProcess::glue(space, &parts, &choice)?;
    let value = UtilityFunction::DualFinite(u.clone()).insurance_evaluate(space, &xw)?;
    let glued_pairing = pairing(space, &xw, &density, u.start, u.end)?;
    let residual = (0..atoms)
        .map(|k| {
            let gamma = u.penalties[choice[k]].get(k);
            let lhs = glued_pairing.get(k) + gamma;
            if lhs == value.get(k) {
                0.0
            } else {
                (lhs - value.get(k)).abs()
            }
        })
        .fold(0.0, f64::max);
    let attained_in_set = u.scenarios.iter().any(|a| a.approx_eq(&density, EQ_TOL));
    Ok(ArgmaxDensity { density, value, choice, attained_in_set, residual })
}

// ---------------------------------------------------------------------------
// Time consistency

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConsistencyFailure {
    pub t: usize,
    pub theta: Vec<usize>,
    pub sample: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConsistencyReport {
    pub seed: u64,
    pub samples: usize,
    pub exhaustive_stopping_times: bool,
    pub checks: usize,
    pub max_residual: f64,
    /// Residual of `Σ_k φ_{k,T}(1_{τ=k}X)` against direct evaluation at deterministic `τ`.
    pub stopped_residual: f64,
    pub failures: Vec<TimeConsistencyFailure>,
}

impl TimeConsistencyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `X 1_{[t,θ)} + φ_{θ,T}(X) 1_{[θ,∞)}` on `[t, T]`, given the per-time
/// evaluations `later[r - t] = φ_{r,T}(X)` lifted to outcomes.
pub fn stopped_recursion_input(
    space: &FiniteFilteredSpace,
    x: &AdaptedProcess,
    theta: &StoppingTime,
    later: &[Vec<f64>],
    t: usize,
) -> Result<AdaptedProcess> {
    let end = x.end();
    let rows = (t..=end)
        .map(|s| {
            (0..space.outcome_count())
                .map(|w| {
                    let th = theta.at(w);
                    if s < th {
                        x.value(s, w)
                    } else {
                        later[th - t][w]
                    }
                })
                .collect()
        })
        .collect();
    AdaptedProcess::new(space, t, rows)
}

/// Checks `φ_{t,T}(X) = φ_{t,T}(X 1_{[t,θ)} + φ_{θ,T}(X) 1_{[θ,∞)})` for each
/// `t`, each stopping time `θ ≥ t` and `samples` seeded processes. Stopping
/// times are enumerated exhaustively on small spaces, otherwise only
/// deterministic ones are used.
pub fn time_consistency_check(
    space: &FiniteFilteredSpace,
    up: &UtilityProcess,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<TimeConsistencyReport> {
    let mut rng = sample::rng(seed);
    let end = up.end();
    let exhaustive =
        space.outcome_count() <= EXHAUSTIVE_STOPPING_MAX_OUTCOMES && space.horizon() <= EXHAUSTIVE_STOPPING_MAX_HORIZON;
    let mut report = TimeConsistencyReport {
        seed,
        samples,
        exhaustive_stopping_times: exhaustive,
        checks: 0,
        max_residual: 0.0,
        stopped_residual: 0.0,
        failures: Vec::new(),
    };
    for t in up.start()..=end {
        let thetas = if exhaustive {
            enumerate_stopping_times(space, t, end, STOPPING_TIME_CAP)?
        } else {
            (t..=end).map(|s| StoppingTime::deterministic(space, s)).collect()
        };
        for n in 0..samples {
            let x = sample::random_adapted(&mut rng, space, t, end, -2.0, 2.0);
            let later: Vec<Vec<f64>> = (t..=end)
                .map(|r| Ok(space.lift(&up.member(r)?.evaluate(space, &x.restrict(r, end)?)?)))
                .collect::<Result<_>>()?;
            let direct = up.member(t)?.evaluate(space, &x)?;
            for theta in &thetas {
                let z = stopped_recursion_input(space, &x, theta, &later, t)?;
                let res = up.member(t)?.evaluate(space, &z)?.max_abs_diff(&direct);
                report.checks += 1;
                report.max_residual = report.max_residual.max(res);
                if !(res <= tol) {
                    report.failures.push(TimeConsistencyFailure { t, theta: theta.values().to_vec(), sample: n, residual: res });
                }
            }
            for r in t..=end {
                let tau = StoppingTime::deterministic(space, r);
                let stopped = up.evaluate_stopped(space, &tau, &x)?;
                let res = stopped.iter().zip(&later[r - t]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                report.stopped_residual = report.stopped_residual.max(res);
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Penalty consistency

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConsistencyRow {
    pub scenario: usize,
    pub lhs: ConditionalValue,
    pub rhs: ConditionalValue,
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConsistencyReport {
    pub t: usize,
    pub s: usize,
    pub rows: Vec<PenaltyConsistencyRow>,
}

impl PenaltyConsistencyReport {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().flat_map(|r| r.residual.iter().copied()).fold(0.0, f64::max)
    }
}

fn ext_residual(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Compares `φ^#_{t,T}(a)` with
/// `max_{b ∈ Q_s} φ^#_{t,T}(a ⊕_Ω^s b) + E[φ^#_{s,T}(a|_{[s,T]}) | F_t]`
/// for every scenario `a` of the time-`t` member. Residuals are reported,
/// not asserted.
pub fn penalty_consistency_check(
    space: &FiniteFilteredSpace,
    up: &UtilityProcess,
    t: usize,
    s: usize,
) -> Result<PenaltyConsistencyReport> {
    if t > s {
        return Err(Error::InvalidValue(format!("penalty consistency needs t ≤ s, got t = {t}, s = {s}")));
    }
    let dual = |r: usize| -> Result<&DualFiniteUtility> {
        up.member(r)?
            .as_dual_finite()
            .ok_or_else(|| Error::InvalidUtility("penalty consistency needs dual-finite members".into()))
    };
    let ut = dual(t)?;
    let us = dual(s)?;
    let end = up.end();
    let theta = StoppingTime::deterministic(space, s);
    let whole = Event::whole(space);
    let mut rows = Vec::new();
    for (i, a) in ut.scenarios.iter().enumerate() {
        let lhs = penalty(space, ut, a, None)?.value;
        let mut sup: Option<Vec<f64>> = None;
        for b in &us.scenarios {
            let b_ext = b.extend_to(t, end)?;
            let glued = concatenate(space, a, &b_ext, &theta, &whole)?;
            let v = penalty(space, ut, &glued, None)?.value;
            sup = Some(match sup {
                None => v.values().to_vec(),
                Some(cur) => cur.iter().zip(v.values()).map(|(x, y)| x.max(*y)).collect(),
            });
        }
        let later = penalty(space, us, &a.restrict(s, end)?, None)?.value;
        let lifted = space.lift(&later);
        let cond: Vec<f64> = (0..space.atom_count(t))
            .map(|k| {
                let atom = space.atom(t, k);
                if atom.iter().any(|&w| lifted[w] == f64::NEG_INFINITY) {
                    f64::NEG_INFINITY
                } else {
                    atom.iter().map(|&w| space.prob(w) * lifted[w]).sum::<f64>() / space.atom_prob(t, k)
                }
            })
            .collect();
        let rhs_vals: Vec<f64> = sup
            .expect("scenario sets are non-empty")
            .iter()
            .zip(&cond)
            .map(|(x, y)| if x.is_finite() && y.is_finite() { x + y } else { f64::NEG_INFINITY })
            .collect();
        let rhs = ConditionalValue::new(space, t, rhs_vals)?;
        let residual = lhs.values().iter().zip(rhs.values()).map(|(a, b)| ext_residual(*a, *b)).collect();
        rows.push(PenaltyConsistencyRow { scenario: i, lhs, rhs, residual });
    }
    Ok(PenaltyConsistencyReport { t, s, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin() -> FiniteFilteredSpace {
        FiniteFilteredSpace::uniform(2, vec![vec![vec![0, 1]], vec![vec![0], vec![1]]]).unwrap()
    }

    #[test]
    fn constants_evaluate_to_themselves() {
        let space = FiniteFilteredSpace::binary_tree(2);
        let x = AdaptedProcess::constant(&space, 0, 2, 1.5);
        let mut rng = sample::rng(1);
        let variants = vec![
            UtilityFunction::Entropic(EntropicUtility::new(&space, 1.0, 0, 2).unwrap()),
            UtilityFunction::DualFinite(sample::random_concave_utility(&mut rng, &space, 0, 2, 3).unwrap()),
            UtilityFunction::RobustEntropic(
                RobustEntropicUtility::new(&space, 0.5, 0, 2, vec![sample::random_terminal_density(&mut rng, &space)])
                    .unwrap(),
            ),
        ];
        for u in &variants {
            let v = u.evaluate(&space, &x).unwrap();
            assert!(v.values().iter().all(|v| (v - 1.5).abs() < 1e-12), "{}: {v:?}", u.kind());
            let w = u.insurance_evaluate(&space, &x).unwrap();
            assert!(w.values().iter().all(|v| (v - 1.5).abs() < 1e-12));
        }
    }

    #[test]
    fn entropic_closed_form() {
        let space = coin();
        let u = UtilityFunction::Entropic(EntropicUtility::new(&space, 1.0, 0, 1).unwrap());
        let x = AdaptedProcess::new(&space, 0, vec![vec![0.0, 0.0], vec![0.0, -(3.0f64).ln()]]).unwrap();
        let v = u.evaluate(&space, &x).unwrap();
        assert!((v.get(0) + 2.0f64.ln()).abs() < 1e-12);
        // Ψ(X) = (1/α) log E exp(α X_T)
        let psi = u.insurance_evaluate(&space, &x).unwrap();
        assert!((psi.get(0) - ((1.0 + 1.0 / 3.0) / 2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn dual_finite_singleton_is_the_pairing() {
        let space = FiniteFilteredSpace::binary_tree(2);
        let mut rng = sample::rng(3);
        let a = sample::random_density(&mut rng, &space, 0, 2);
        let u = DualFiniteUtility::coherent(&space, 0, 2, vec![a.clone()]).unwrap();
        let x = sample::random_adapted(&mut rng, &space, 0, 2, -1.0, 1.0);
        let v = UtilityFunction::DualFinite(u).evaluate(&space, &x).unwrap();
        assert!(v.approx_eq(&pairing(&space, &x, &a, 0, 2).unwrap(), 1e-12));
    }

    #[test]
    fn rejects_unnormalized_penalties() {
        let space = coin();
        let a = DensityProcess::uniform(&space, 0, 1);
        let g = ConditionalValue::constant(&space, 0, -0.5);
        assert!(DualFiniteUtility::new(&space, 0, 1, vec![a.clone()], vec![g]).is_err());
        let g = ConditionalValue::constant(&space, 0, 0.5);
        assert!(DualFiniteUtility::new(&space, 0, 1, vec![a], vec![g]).is_err());
    }

    #[test]
    fn axioms_entropic_and_coherent() {
        let space = FiniteFilteredSpace::binary_tree(2);
        let ent = UtilityFunction::Entropic(EntropicUtility::new(&space, 1.0, 0, 2).unwrap());
        let rep = check_axioms(&space, &ent, 10, 7, 1e-9).unwrap();
        for ax in [Axiom::Locality, Axiom::Monotonicity, Axiom::CashInvariance, Axiom::Concavity, Axiom::Relevance] {
            assert_eq!(rep.status(ax), AxiomStatus::Pass, "{ax:?}: {:?}", rep.result(ax));
        }
        assert_eq!(rep.status(Axiom::Coherence), AxiomStatus::Fail);
        assert!(rep.result(Axiom::Coherence).counterexample.is_some());
        assert_eq!(rep.status(Axiom::Continuity), AxiomStatus::Vacuous);

        let mut rng = sample::rng(9);
        let coh = UtilityFunction::DualFinite(sample::random_coherent_utility(&mut rng, &space, 0, 2, 3).unwrap());
        let rep = check_axioms(&space, &coh, 10, 7, 1e-9).unwrap();
        for ax in [Axiom::Locality, Axiom::Monotonicity, Axiom::CashInvariance, Axiom::Concavity, Axiom::Coherence] {
            assert_eq!(rep.status(ax), AxiomStatus::Pass, "{ax:?}: {:?}", rep.result(ax));
        }
    }

    #[test]
    fn positive_penalty_breaks_normalization() {
        let space = coin();
        let a = DensityProcess::uniform(&space, 0, 1);
        let u = DualFiniteUtility::new_unchecked(&space, 0, 1, vec![a], vec![ConditionalValue::constant(&space, 0, 0.3)])
            .unwrap();
        let rep = check_axioms(&space, &UtilityFunction::DualFinite(u), 5, 1, 1e-9).unwrap();
        assert_eq!(rep.status(Axiom::CashInvariance), AxiomStatus::Fail);
    }

    #[test]
    fn penalty_examples() {
        let space = coin();
        let a1 = DensityProcess::new(&space, 0, vec![vec![0.0, 0.0], vec![1.2, 0.8]]).unwrap();
        let a2 = DensityProcess::new(&space, 0, vec![vec![0.0, 0.0], vec![0.4, 1.6]]).unwrap();
        let u = DualFiniteUtility::coherent(&space, 0, 1, vec![a1.clone()]).unwrap();
        // Scenario in the generating set: zero.
        assert_eq!(penalty(&space, &u, &a1, None).unwrap().value.get(0), 0.0);
        // Outside the (singleton) hull: -∞.
        let out = penalty(&space, &u, &a2, None).unwrap();
        assert_eq!(out.value.get(0), f64::NEG_INFINITY);
        assert!(out.unbounded[0]);
        // Single scenario with penalty -c: φ# (a1) = -c.
        let g = ConditionalValue::constant(&space, 0, -0.7);
        let u = DualFiniteUtility::new_unchecked(&space, 0, 1, vec![a1.clone()], vec![g]).unwrap();
        assert!((penalty(&space, &u, &a1, None).unwrap().value.get(0) + 0.7).abs() < 1e-9);
    }

    #[test]
    fn penalty_dominates_generating_penalties() {
        let space = FiniteFilteredSpace::binary_tree(2);
        let mut rng = sample::rng(21);
        for _ in 0..10 {
            let u = sample::random_concave_utility(&mut rng, &space, 1, 2, 3).unwrap();
            for (a, g) in u.scenarios().iter().zip(u.penalties()) {
                let p = penalty(&space, &u, a, None).unwrap().value;
                for k in 0..p.len() {
                    assert!(p.get(k) >= g.get(k) - 1e-9);
                    assert!(p.get(k) <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn entropic_process_is_time_consistent() {
        let space = FiniteFilteredSpace::binary_tree(2);
        let up = UtilityProcess::entropic(&space, 1.0, 0, 2).unwrap();
        let rep = time_consistency_check(&space, &up, 3, 5, 1e-9).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.exhaustive_stopping_times);
        assert!(rep.stopped_residual < 1e-12);
    }

    #[test]
    fn mismatched_scenario_sets_are_not_time_consistent() {
        // φ_0 uses the uniform terminal weight, φ_1 tilts towards the first outcome of each branch.
        let space = FiniteFilteredSpace::binary_tree(2);
        let u0 = DualFiniteUtility::coherent(&space, 0, 2, vec![DensityProcess::concentrated(&space, 0, 2, 2)]).unwrap();
        let tilted = DensityProcess::new(
            &space,
            1,
            vec![vec![0.0; 4], vec![1.5, 0.5, 1.5, 0.5]],
        )
        .unwrap();
        let u1 = DualFiniteUtility::coherent(&space, 1, 2, vec![tilted]).unwrap();
        let u2 = DualFiniteUtility::coherent(&space, 2, 2, vec![DensityProcess::uniform(&space, 2, 2)]).unwrap();
        let up = UtilityProcess::new(vec![
            UtilityFunction::DualFinite(u0),
            UtilityFunction::DualFinite(u1),
            UtilityFunction::DualFinite(u2),
        ])
        .unwrap();
        let rep = time_consistency_check(&space, &up, 3, 1, 1e-9).unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn argmax_glues_per_atom() {
        let space = FiniteFilteredSpace::binary_tree(2);
        let up = DensityProcess::new(&space, 1, vec![vec![0.0; 4], vec![1.6, 0.4, 1.0, 1.0]]).unwrap();
        let down = DensityProcess::new(&space, 1, vec![vec![0.0; 4], vec![1.0, 1.0, 0.4, 1.6]]).unwrap();
        let u = DualFiniteUtility::coherent(&space, 1, 2, vec![up.clone(), down.clone()]).unwrap();
        let x = AdaptedProcess::new(&space, 1, vec![vec![0.0; 4], vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
        let res = argmax_density(&space, &u, &x).unwrap();
        assert_eq!(res.choice, vec![0, 1]);
        assert!(res.residual < 1e-12);
        assert!(!res.attained_in_set);
        // Glued increments: first branch from `up`, second from `down`.
        assert_eq!(res.density.increment_slice(2), &[1.6, 0.4, 0.4, 1.6]);
        assert!((res.value.get(0) - 0.8).abs() < 1e-12 && (res.value.get(1) - 0.8).abs() < 1e-12);

        let single = DualFiniteUtility::coherent(&space, 1, 2, vec![up.clone()]).unwrap();
        assert!(argmax_density(&space, &single, &x).unwrap().attained_in_set);
    }

    #[test]
    fn penalty_consistency_for_coherent_singleton() {
        let space = FiniteFilteredSpace::binary_tree(2);
        let members = (0..=2)
            .map(|t| {
                UtilityFunction::DualFinite(
                    DualFiniteUtility::coherent(&space, t, 2, vec![DensityProcess::uniform(&space, t, 2)]).unwrap(),
                )
            })
            .collect();
        let up = UtilityProcess::new(members).unwrap();
        let rep = penalty_consistency_check(&space, &up, 0, 1).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.rows[0].lhs.values().iter().all(|v| *v == 0.0));
    }
}
