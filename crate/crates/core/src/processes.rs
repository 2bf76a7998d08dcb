//! Adapted processes, density processes and their algebra.
//!
//! Processes live on a time window `[start, end]` inside `[0, T]`. A
//! [`DensityProcess`] stores increments `Δa_s`; its cumulative value before
//! the window is zero. The pairing `≺X, a≻_{t,T'}` is the conditional
//! expectation of `Σ X_s Δa_s` given `F_t`.

use crate::error::{Error, Result};
use crate::space::{
    enumerate_events, enumerate_events_at, enumerate_stopping_times, ConditionalValue, Event, FiniteFilteredSpace,
    StoppingTime, EQ_TOL,
};

/// Outcome count and horizon up to which stability checks enumerate every
/// stopping time; larger spaces fall back to deterministic times.
pub const EXHAUSTIVE_STOPPING_MAX_OUTCOMES: usize = 8;
pub const EXHAUSTIVE_STOPPING_MAX_HORIZON: usize = 3;

fn check_grid(space: &FiniteFilteredSpace, start: usize, rows: &[Vec<f64>], what: &str) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::WindowMismatch(format!("{what} has an empty window")));
    }
    let end = start + rows.len() - 1;
    if end > space.horizon() {
        return Err(Error::TimeOutOfRange { time: end, lo: 0, hi: space.horizon() });
    }
    for (i, row) in rows.iter().enumerate() {
        let s = start + i;
        if row.len() != space.outcome_count() {
            return Err(Error::Dimension(format!(
                "{what} at time {s}: expected {} outcomes, got {}",
                space.outcome_count(),
                row.len()
            )));
        }
        if let Some(w) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("{what} at ({s}, {w}) is not finite")));
        }
        if let Some(atom) = space.measurability_violation(row, s, EQ_TOL) {
            return Err(Error::NotAdapted { time: s, atom });
        }
    }
    Ok(())
}

/// A bounded adapted process on `[start, end]`: values at time `s` are
/// constant on the atoms of `F_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    start: usize,
    values: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    /// `values[i][ω]` is the value at time `start + i` in outcome `ω`.
    pub fn new(space: &FiniteFilteredSpace, start: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        check_grid(space, start, &values, "process")?;
        Ok(Self { start, values })
    }

    /// Builds from one value per `F_s`-atom for each time in the window.
    pub fn from_atom_values(space: &FiniteFilteredSpace, start: usize, per_atom: Vec<Vec<f64>>) -> Result<Self> {
        let mut values = Vec::with_capacity(per_atom.len());
        for (i, row) in per_atom.iter().enumerate() {
            let s = start + i;
            space.check_time(s)?;
            if row.len() != space.atom_count(s) {
                return Err(Error::Dimension(format!(
                    "time {s}: expected {} atom values, got {}",
                    space.atom_count(s),
                    row.len()
                )));
            }
            values.push((0..space.outcome_count()).map(|w| row[space.atom_of(s, w)]).collect());
        }
        Self::new(space, start, values)
    }

    pub fn constant(space: &FiniteFilteredSpace, start: usize, end: usize, c: f64) -> Self {
        Self { start, values: vec![vec![c; space.outcome_count()]; end + 1 - start] }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.start + self.values.len() - 1
    }

    pub fn window_len(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, s: usize, outcome: usize) -> f64 {
        self.values[s - self.start][outcome]
    }

    pub fn slice(&self, s: usize) -> &[f64] {
        &self.values[s - self.start]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// The path `(X_start(ω), ..., X_end(ω))`.
    pub fn path(&self, outcome: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[outcome]).collect()
    }

    pub fn covers(&self, start: usize, end: usize) -> bool {
        self.start <= start && end <= self.end()
    }

    pub fn restrict(&self, start: usize, end: usize) -> Result<Self> {
        if !self.covers(start, end) || start > end {
            return Err(Error::WindowMismatch(format!(
                "cannot restrict [{}, {}] to [{start}, {end}]",
                self.start,
                self.end()
            )));
        }
        Ok(Self { start, values: self.values[start - self.start..=end - self.start].to_vec() })
    }

    fn same_window(&self, other: &Self) -> Result<()> {
        if self.start != other.start || self.values.len() != other.values.len() {
            return Err(Error::WindowMismatch(format!(
                "[{}, {}] vs [{}, {}]",
                self.start,
                self.end(),
                other.start,
                other.end()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { start: self.start, values: self.values.iter().map(|r| r.iter().map(|v| f(*v)).collect()).collect() }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn neg(&self) -> Self {
        self.map(|v| -v)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_window(other)?;
        Ok(Self {
            start: self.start,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    /// `X + m·1_{[start, ∞)}` for a constant `m`.
    pub fn add_constant(&self, m: f64) -> Self {
        self.map(|v| v + m)
    }

    /// `X + m·1_{[start, ∞)}` for an `F_start`-measurable `m`.
    pub fn add_conditional(&self, space: &FiniteFilteredSpace, m: &ConditionalValue) -> Result<Self> {
        if m.time() != self.start {
            return Err(Error::TimeMismatch { expected: self.start, found: m.time() });
        }
        let lifted = space.lift(m);
        Ok(Self {
            start: self.start,
            values: self.values.iter().map(|r| r.iter().zip(&lifted).map(|(v, x)| v + x).collect()).collect(),
        })
    }

    /// Multiplies every time slice by an `F_start`-measurable factor (`1_A X`, `λX`).
    pub fn mul_conditional(&self, space: &FiniteFilteredSpace, lambda: &ConditionalValue) -> Result<Self> {
        if lambda.time() != self.start {
            return Err(Error::TimeMismatch { expected: self.start, found: lambda.time() });
        }
        let lifted = space.lift(lambda);
        Ok(Self {
            start: self.start,
            values: self.values.iter().map(|r| r.iter().zip(&lifted).map(|(v, x)| v * x).collect()).collect(),
        })
    }

    /// `1_A X` for an event `A`; errors unless `A ∈ F_start`.
    pub fn restrict_to_event(&self, space: &FiniteFilteredSpace, event: &Event) -> Result<Self> {
        if !event.is_measurable(space, self.start) {
            return Err(Error::NotMeasurable(format!("event is not in F_{}", self.start)));
        }
        Ok(Self {
            start: self.start,
            values: self
                .values
                .iter()
                .map(|r| r.iter().enumerate().map(|(w, v)| if event.contains(w) { *v } else { 0.0 }).collect())
                .collect(),
        })
    }

    /// Pointwise `self <= other + tol`.
    pub fn le(&self, other: &Self, tol: f64) -> Result<bool> {
        self.same_window(other)?;
        Ok(self.values.iter().zip(&other.values).all(|(a, b)| a.iter().zip(b).all(|(x, y)| *x <= *y + tol)))
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.start == other.start
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol))
    }

    /// `‖X‖_{R^∞}`: largest absolute value over the window.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Componentwise average of processes sharing a window.
    pub fn mean(members: &[&AdaptedProcess]) -> Result<Self> {
        let (first, rest) = members.split_first().ok_or(Error::EmptyFamily)?;
        let mut acc = (*first).clone();
        for m in rest {
            acc = acc.add(m)?;
        }
        Ok(acc.scale(1.0 / members.len() as f64))
    }

    pub fn sum(members: &[&AdaptedProcess]) -> Result<Self> {
        let (first, rest) = members.split_first().ok_or(Error::EmptyFamily)?;
        let mut acc = (*first).clone();
        for m in rest {
            acc = acc.add(m)?;
        }
        Ok(acc)
    }
}

/// Process of nonnegative increments `Δa_s` on `[start, end]`, with
/// `a_{start-1} = 0`. Construction only checks adaptedness and finiteness;
/// use [`membership`] for the `A¹_+`, `D` and `D^e` conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProcess {
    start: usize,
    increments: Vec<Vec<f64>>,
}

impl DensityProcess {
    pub fn new(space: &FiniteFilteredSpace, start: usize, increments: Vec<Vec<f64>>) -> Result<Self> {
        check_grid(space, start, &increments, "density increment")?;
        Ok(Self { start, increments })
    }

    pub fn from_atom_values(space: &FiniteFilteredSpace, start: usize, per_atom: Vec<Vec<f64>>) -> Result<Self> {
        let p = AdaptedProcess::from_atom_values(space, start, per_atom)?;
        Ok(Self { start, increments: p.values })
    }

    /// Deterministic increments `1 / (end - start + 1)`.
    pub fn uniform(space: &FiniteFilteredSpace, start: usize, end: usize) -> Self {
        let w = 1.0 / (end + 1 - start) as f64;
        Self { start, increments: vec![vec![w; space.outcome_count()]; end + 1 - start] }
    }

    /// All mass at time `at`.
    pub fn concentrated(space: &FiniteFilteredSpace, start: usize, end: usize, at: usize) -> Self {
        let mut increments = vec![vec![0.0; space.outcome_count()]; end + 1 - start];
        increments[at - start] = vec![1.0; space.outcome_count()];
        Self { start, increments }
    }

    /// Density putting all mass at the window end with terminal density `h`.
    pub fn terminal(space: &FiniteFilteredSpace, start: usize, end: usize, h: &TerminalDensity) -> Result<Self> {
        let mut increments = vec![vec![0.0; space.outcome_count()]; end + 1 - start];
        let norm = space.lift(&space.cond_expect(h.values(), start)?);
        increments[end - start] = h.values().iter().zip(&norm).map(|(x, n)| x / n).collect();
        Self::new(space, start, increments)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.start + self.increments.len() - 1
    }

    pub fn window_len(&self) -> usize {
        self.increments.len()
    }

    pub fn increment(&self, s: usize, outcome: usize) -> f64 {
        if s < self.start || s > self.end() {
            return 0.0;
        }
        self.increments[s - self.start][outcome]
    }

    pub fn increment_slice(&self, s: usize) -> &[f64] {
        &self.increments[s - self.start]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.increments
    }

    /// Cumulative value `a_s`; zero before the window.
    pub fn cumulative(&self, s: isize, outcome: usize) -> f64 {
        if s < self.start as isize {
            return 0.0;
        }
        let last = (s as usize).min(self.end());
        (self.start..=last).map(|r| self.increments[r - self.start][outcome]).sum()
    }

    /// Per outcome, `≺1, a≻_{s,∞} = E(Σ_{j ≥ s} Δa_j | F_s)` truncated at the window end.
    pub fn tail_mass(&self, space: &FiniteFilteredSpace, s: usize) -> Result<Vec<f64>> {
        let y: Vec<f64> = (0..space.outcome_count())
            .map(|w| (s.max(self.start)..=self.end()).map(|j| self.increment(j, w)).sum())
            .collect();
        Ok(space.lift(&space.cond_expect(&y, s)?))
    }

    /// Pointwise tail sums `Σ_{j ≥ s} Δa_j(ω)`.
    pub fn pathwise_tail(&self, s: usize, outcome: usize) -> f64 {
        (s.max(self.start)..=self.end()).map(|j| self.increment(j, outcome)).sum()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            start: self.start,
            increments: self.increments.iter().map(|r| r.iter().map(|v| c * v).collect()).collect(),
        }
    }

    /// Same increments on a wider window, zero outside the original one.
    pub fn extend_to(&self, start: usize, end: usize) -> Result<Self> {
        if start > self.start || end < self.end() {
            return Err(Error::WindowMismatch("extension must contain the current window".into()));
        }
        let m = self.increments[0].len();
        let increments = (start..=end)
            .map(|s| if s < self.start || s > self.end() { vec![0.0; m] } else { self.increments[s - self.start].clone() })
            .collect();
        Ok(Self { start, increments })
    }

    /// Increments on `[start, end]` only (mass outside is dropped, no renormalization).
    pub fn restrict(&self, start: usize, end: usize) -> Result<Self> {
        if start < self.start || end > self.end() || start > end {
            return Err(Error::WindowMismatch(format!(
                "cannot restrict [{}, {}] to [{start}, {end}]",
                self.start,
                self.end()
            )));
        }
        Ok(Self { start, increments: self.increments[start - self.start..=end - self.start].to_vec() })
    }

    /// Restriction to `[s, end]` divided by `≺1, a≻_{s,end}`; the result is in
    /// `D_{s,end}` when every tail is positive.
    pub fn normalized_tail(&self, space: &FiniteFilteredSpace, s: usize) -> Result<Self> {
        let r = self.restrict(s, self.end())?;
        let mass = r.tail_mass(space, s)?;
        if let Some(w) = mass.iter().position(|m| *m <= 0.0) {
            return Err(Error::InvalidDensity(format!("zero conditional tail mass at ({s}, {w})")));
        }
        Ok(Self {
            start: s,
            increments: r.increments.iter().map(|row| row.iter().zip(&mass).map(|(v, m)| v / m).collect()).collect(),
        })
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.start == other.start
            && self.increments.len() == other.increments.len()
            && self
                .increments
                .iter()
                .zip(&other.increments)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol))
    }

    /// Glues densities atom-wise at time `start`: on the `F_start`-atom `k`
    /// the increments of `parts[choice[k]]` are used.
    pub fn glue(space: &FiniteFilteredSpace, parts: &[&DensityProcess], choice: &[usize]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyFamily)?;
        if parts.iter().any(|p| p.start != first.start || p.increments.len() != first.increments.len()) {
            return Err(Error::WindowMismatch("glued densities must share a window".into()));
        }
        if choice.len() != space.atom_count(first.start) {
            return Err(Error::Dimension("one choice per atom is required".into()));
        }
        let increments = (0..first.increments.len())
            .map(|i| {
                (0..space.outcome_count())
                    .map(|w| parts[choice[space.atom_of(first.start, w)]].increments[i][w])
                    .collect()
            })
            .collect();
        Ok(Self { start: first.start, increments })
    }
}

/// A strictly positive terminal density `h` with `E(h) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDensity {
    h: Vec<f64>,
}

impl TerminalDensity {
    pub fn new(space: &FiniteFilteredSpace, h: Vec<f64>) -> Result<Self> {
        if h.len() != space.outcome_count() {
            return Err(Error::Dimension(format!("expected {} outcomes, got {}", space.outcome_count(), h.len())));
        }
        if let Some(w) = h.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidDensity(format!("terminal density must be > 0, got {} at outcome {w}", h[w])));
        }
        let mean: f64 = h.iter().zip(space.probs()).map(|(x, p)| x * p).sum();
        if (mean - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDensity(format!("terminal density has mean {mean}, expected 1")));
        }
        Ok(Self { h })
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.h.iter().zip(&other.h).all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// `≺X, a≻_{t,t_end}`: the `F_t`-conditional expectation of `Σ_{s=t}^{t_end} X_s Δa_s`.
pub fn pairing(
    space: &FiniteFilteredSpace,
    x: &AdaptedProcess,
    a: &DensityProcess,
    t: usize,
    t_end: usize,
) -> Result<ConditionalValue> {
    if t > t_end || !x.covers(t, t_end) || a.start > t || a.end() < t_end {
        return Err(Error::WindowMismatch(format!(
            "pairing on [{t}, {t_end}] with X on [{}, {}] and a on [{}, {}]",
            x.start,
            x.end(),
            a.start,
            a.end()
        )));
    }
    let y: Vec<f64> = (0..space.outcome_count())
        .map(|w| (t..=t_end).map(|s| x.value(s, w) * a.increment(s, w)).sum())
        .collect();
    space.cond_expect(&y, t)
}

/// `π_{τ,θ}(X)_t = 1_{τ ≤ t} X_{t∧θ}` on the window of `X`.
pub fn project(
    space: &FiniteFilteredSpace,
    x: &AdaptedProcess,
    tau: &StoppingTime,
    theta: &StoppingTime,
) -> Result<AdaptedProcess> {
    for w in 0..space.outcome_count() {
        if tau.at(w) > theta.at(w) {
            return Err(Error::InvalidStoppingTime(format!("tau > theta at outcome {w}")));
        }
        if theta.at(w) < x.start || tau.at(w) < x.start || theta.at(w) > x.end() {
            return Err(Error::WindowMismatch(format!("stopping times leave the window at outcome {w}")));
        }
    }
    let values: Vec<Vec<f64>> = (x.start..=x.end())
        .map(|t| {
            (0..space.outcome_count())
                .map(|w| if t < tau.at(w) { 0.0 } else { x.value(t.min(theta.at(w)), w) })
                .collect()
        })
        .collect();
    // adaptedness follows from the stopping-time property; checked anyway
    AdaptedProcess::new(space, x.start, values)
}

/// `‖a‖_{A¹} = E Σ |Δa_s|`.
pub fn norm_a1(space: &FiniteFilteredSpace, a: &DensityProcess) -> f64 {
    (0..space.outcome_count())
        .map(|w| space.prob(w) * (a.start..=a.end()).map(|s| a.increment(s, w).abs()).sum::<f64>())
        .sum()
}

pub fn norm_r_inf(x: &AdaptedProcess) -> f64 {
    x.sup_norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityClass {
    /// Nonnegative increments.
    A1Plus,
    /// `A¹_+` with conditional total mass one at time `t`.
    D,
    /// `D` with strictly positive pathwise tails at every time.
    De,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub holds: bool,
    pub violation: Option<String>,
}

impl Membership {
    fn ok() -> Self {
        Self { holds: true, violation: None }
    }

    fn fail(msg: String) -> Self {
        Self { holds: false, violation: Some(msg) }
    }
}

/// Checks `a` against `A¹_+`, `D_{t,end}` or `D^e_{t,end}`. Increments before
/// `t` must vanish for the latter two.
pub fn membership(space: &FiniteFilteredSpace, a: &DensityProcess, class: DensityClass, t: usize) -> Membership {
    for s in a.start..=a.end() {
        for w in 0..space.outcome_count() {
            let v = a.increment(s, w);
            if v < -1e-12 {
                return Membership::fail(format!("negative increment {v} at (s={s}, ω={w})"));
            }
        }
    }
    if class == DensityClass::A1Plus {
        return Membership::ok();
    }
    if t > a.end() {
        return Membership::fail(format!("time {t} is after the window end {}", a.end()));
    }
    for s in a.start..t {
        for w in 0..space.outcome_count() {
            if a.increment(s, w).abs() > 1e-12 {
                return Membership::fail(format!("nonzero increment before {t} at (s={s}, ω={w})"));
            }
        }
    }
    let mass = match a.tail_mass(space, t) {
        Ok(m) => m,
        Err(e) => return Membership::fail(e.to_string()),
    };
    for k in 0..space.atom_count(t) {
        let v = mass[space.atom(t, k)[0]];
        if (v - 1.0).abs() > EQ_TOL {
            return Membership::fail(format!("conditional mass {v} on atom {k} of F_{t}, expected 1"));
        }
    }
    if class == DensityClass::D {
        return Membership::ok();
    }
    for s in t..=a.end() {
        for w in 0..space.outcome_count() {
            if a.pathwise_tail(s, w) <= 0.0 {
                return Membership::fail(format!("tail sum from s={s} vanishes at ω={w}"));
            }
        }
    }
    Membership::ok()
}

/// The concatenation `a ⊕_A^θ b`.
///
/// With `C = {s < θ} ∪ A^c ∪ {≺1,b≻_{θ,∞} = 0}` the result equals `a` on `C`
/// and `a_{θ-1} + (≺1,a≻_{θ,∞} / ≺1,b≻_{θ,∞})(b_s - b_{θ-1})` off `C`. Tails
/// are truncated at the common window end.
pub fn concatenate(
    space: &FiniteFilteredSpace,
    a: &DensityProcess,
    b: &DensityProcess,
    theta: &StoppingTime,
    event: &Event,
) -> Result<DensityProcess> {
    if a.start != b.start || a.end() != b.end() {
        return Err(Error::WindowMismatch("concatenated densities must share a window".into()));
    }
    for (name, d) in [("a", a), ("b", b)] {
        if let Membership { holds: false, violation: Some(v) } = membership(space, d, DensityClass::A1Plus, d.start) {
            return Err(Error::InvalidDensity(format!("{name}: {v}")));
        }
    }
    if theta.min_value() < a.start || theta.max_value() > a.end() {
        return Err(Error::WindowMismatch("stopping time leaves the density window".into()));
    }
    if !event.is_measurable_at(space, theta) {
        return Err(Error::NotMeasurable("event is not in F_theta".into()));
    }
    let m = space.outcome_count();
    // conditional tails at θ, evaluated per outcome at its own stopping level
    let mut ratio = vec![None; m];
    for k in a.start..=a.end() {
        let ta = a.tail_mass(space, k)?;
        let tb = b.tail_mass(space, k)?;
        for w in 0..m {
            if theta.at(w) == k && event.contains(w) && tb[w] > 0.0 {
                ratio[w] = Some(ta[w] / tb[w]);
            }
        }
    }
    let increments = (a.start..=a.end())
        .map(|s| {
            (0..m)
                .map(|w| match ratio[w] {
                    Some(r) if s >= theta.at(w) => r * b.increment(s, w),
                    _ => a.increment(s, w),
                })
                .collect()
        })
        .collect();
    let out = DensityProcess::new(space, a.start, increments)?;
    debug_assert!(membership(space, &out, DensityClass::A1Plus, out.start).holds);
    Ok(out)
}

/// The pasting `f ⊗_A^s g`: `f` off `A`, `E(f|F_s)·g/E(g|F_s)` on `A`.
pub fn paste(
    space: &FiniteFilteredSpace,
    f: &TerminalDensity,
    g: &TerminalDensity,
    s: usize,
    event: &Event,
) -> Result<TerminalDensity> {
    space.check_time(s)?;
    if !event.is_measurable(space, s) {
        return Err(Error::NotMeasurable(format!("event is not in F_{s}")));
    }
    let ef = space.lift(&space.cond_expect(f.values(), s)?);
    let eg = space.lift(&space.cond_expect(g.values(), s)?);
    let h = (0..space.outcome_count())
        .map(|w| if event.contains(w) && eg[w] > 0.0 { ef[w] * g.values()[w] / eg[w] } else { f.values()[w] })
        .collect();
    // renormalize away rounding so the 1e-12 mean check cannot trip on 1 ulp drift
    let h = renormalize(space, h);
    TerminalDensity::new(space, h)
}

fn renormalize(space: &FiniteFilteredSpace, h: Vec<f64>) -> Vec<f64> {
    let mean: f64 = h.iter().zip(space.probs()).map(|(x, p)| x * p).sum();
    if (mean - 1.0).abs() < 1e-13 {
        h.into_iter().map(|v| v / mean).collect()
    } else {
        h
    }
}

#[derive(Debug, Clone)]
pub struct StabilityConfig {
    /// Maximum number of generated elements before giving up.
    pub cap: usize,
    pub tol: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { cap: 1_000_000, tol: EQ_TOL }
    }
}

#[derive(Debug, Clone)]
pub enum StabilityWitness {
    Concatenation { left: usize, right: usize, theta: StoppingTime, event: Event, result: DensityProcess },
    Pasting { left: usize, right: usize, time: usize, event: Event, result: TerminalDensity },
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub stable: bool,
    pub generated: usize,
    /// False when only deterministic stopping times were tried.
    pub exhaustive_stopping_times: bool,
    pub missing: Option<StabilityWitness>,
}

fn bump(generated: &mut usize, cfg: &StabilityConfig) -> Result<()> {
    *generated += 1;
    if *generated > cfg.cap {
        return Err(Error::CapExceeded {
            what: "checking stability".into(),
            count: *generated as u128,
            cap: cfg.cap as u128,
        });
    }
    Ok(())
}

/// Closure of a finite set of density processes under `⊕_A^θ`, over all
/// pairs, stopping times with values in the window, and events in `F_θ`.
pub fn concatenation_stability(
    space: &FiniteFilteredSpace,
    set: &[DensityProcess],
    cfg: &StabilityConfig,
) -> Result<StabilityReport> {
    let first = set.first().ok_or(Error::EmptyFamily)?;
    let (lo, hi) = (first.start, first.end());
    let exhaustive = space.outcome_count() <= EXHAUSTIVE_STOPPING_MAX_OUTCOMES
        && space.horizon() <= EXHAUSTIVE_STOPPING_MAX_HORIZON;
    let thetas = if exhaustive {
        enumerate_stopping_times(space, lo, hi, cfg.cap)?
    } else {
        (lo..=hi).map(|s| StoppingTime::deterministic(space, s)).collect()
    };
    let mut generated = 0;
    for theta in &thetas {
        let events = enumerate_events_at(space, theta);
        for (i, a) in set.iter().enumerate() {
            for (j, b) in set.iter().enumerate() {
                for ev in &events {
                    bump(&mut generated, cfg)?;
                    let c = concatenate(space, a, b, theta, ev)?;
                    if !set.iter().any(|d| d.approx_eq(&c, cfg.tol)) {
                        return Ok(StabilityReport {
                            stable: false,
                            generated,
                            exhaustive_stopping_times: exhaustive,
                            missing: Some(StabilityWitness::Concatenation {
                                left: i,
                                right: j,
                                theta: theta.clone(),
                                event: ev.clone(),
                                result: c,
                            }),
                        });
                    }
                }
            }
        }
    }
    Ok(StabilityReport { stable: true, generated, exhaustive_stopping_times: exhaustive, missing: None })
}

/// Closure of a finite set of terminal densities under pasting `⊗_A^s`.
pub fn m1_stability(
    space: &FiniteFilteredSpace,
    set: &[TerminalDensity],
    cfg: &StabilityConfig,
) -> Result<StabilityReport> {
    if set.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let mut generated = 0;
    for s in 0..=space.horizon() {
        let events = enumerate_events(space, s);
        for (i, f) in set.iter().enumerate() {
            for (j, g) in set.iter().enumerate() {
                for ev in &events {
                    bump(&mut generated, cfg)?;
                    let h = paste(space, f, g, s, ev)?;
                    if !set.iter().any(|d| d.approx_eq(&h, cfg.tol)) {
                        return Ok(StabilityReport {
                            stable: false,
                            generated,
                            exhaustive_stopping_times: true,
                            missing: Some(StabilityWitness::Pasting {
                                left: i,
                                right: j,
                                time: s,
                                event: ev.clone(),
                                result: h,
                            }),
                        });
                    }
                }
            }
        }
    }
    Ok(StabilityReport { stable: true, generated, exhaustive_stopping_times: true, missing: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin() -> FiniteFilteredSpace {
        FiniteFilteredSpace::binary_tree(1)
    }

    fn two_by_two() -> FiniteFilteredSpace {
        FiniteFilteredSpace::uniform(4, vec![vec![vec![0, 1, 2, 3]], vec![vec![0, 1], vec![2, 3]], vec![
            vec![0],
            vec![1],
            vec![2],
            vec![3],
        ]])
        .unwrap()
    }

    #[test]
    fn pairing_direct_sum() {
        let sp = coin();
        let x = AdaptedProcess::new(&sp, 0, vec![vec![3.0, 3.0], vec![2.0, -2.0]]).unwrap();
        let a = DensityProcess::new(&sp, 0, vec![vec![0.0, 0.0], vec![1.2, 0.8]]).unwrap();
        let v = pairing(&sp, &x, &a, 0, 1).unwrap();
        // (2·1.2 − 2·0.8)/2
        assert!((v.get(0) - 0.4).abs() < 1e-15);
        let one = AdaptedProcess::constant(&sp, 0, 1, 1.0);
        assert!((pairing(&sp, &one, &a, 0, 1).unwrap().get(0) - 1.0).abs() < 1e-15);
        let shifted = pairing(&sp, &x.add_constant(2.5), &a, 0, 1).unwrap();
        assert!((shifted.get(0) - 2.9).abs() < 1e-12);
        let short = AdaptedProcess::constant(&sp, 1, 1, 1.0);
        assert!(pairing(&sp, &short, &a, 0, 1).is_err());
    }

    #[test]
    fn projection_cases() {
        let sp = FiniteFilteredSpace::binary_tree(2);
        let x = AdaptedProcess::from_atom_values(&sp, 0, vec![vec![1.0], vec![2.0, 3.0], vec![4.0, 5.0, 6.0, 7.0]])
            .unwrap();
        let zero = StoppingTime::deterministic(&sp, 0);
        let two = StoppingTime::deterministic(&sp, 2);
        assert_eq!(project(&sp, &x, &zero, &two).unwrap(), x);
        let frozen = project(&sp, &x, &zero, &zero).unwrap();
        assert_eq!(frozen, AdaptedProcess::constant(&sp, 0, 2, 1.0));
        // freeze at 1 on the up-branch, at 2 on the down-branch
        let theta = StoppingTime::new(&sp, vec![1, 1, 2, 2]).unwrap();
        let p = project(&sp, &x, &zero, &theta).unwrap();
        assert_eq!(p.path(0), vec![1.0, 2.0, 2.0]);
        assert_eq!(p.path(1), vec![1.0, 2.0, 2.0]);
        assert_eq!(p.path(2), vec![1.0, 3.0, 6.0]);
        assert_eq!(p.path(3), vec![1.0, 3.0, 7.0]);
        // idempotent
        assert_eq!(project(&sp, &p, &zero, &theta).unwrap(), p);
        let one = StoppingTime::deterministic(&sp, 1);
        let late = project(&sp, &x, &one, &two).unwrap();
        assert_eq!(late.path(3), vec![0.0, 3.0, 7.0]);
        assert!(project(&sp, &x, &two, &one).is_err());
    }

    #[test]
    fn norms() {
        let sp = two_by_two();
        let a = DensityProcess::uniform(&sp, 0, 2);
        assert!((norm_a1(&sp, &a) - 1.0).abs() < 1e-15);
        assert!((norm_a1(&sp, &a.scale(2.0)) - 2.0).abs() < 1e-15);
        assert_eq!(norm_r_inf(&AdaptedProcess::constant(&sp, 0, 2, -3.5)), 3.5);
    }

    #[test]
    fn membership_examples() {
        let sp = two_by_two();
        let uni = DensityProcess::uniform(&sp, 0, 2);
        assert!(membership(&sp, &uni, DensityClass::D, 0).holds);
        assert!(membership(&sp, &uni, DensityClass::De, 0).holds);
        let conc = DensityProcess::concentrated(&sp, 0, 2, 0);
        assert!(membership(&sp, &conc, DensityClass::D, 0).holds);
        let m = membership(&sp, &conc, DensityClass::De, 0);
        assert!(!m.holds);
        assert!(m.violation.unwrap().contains("s=1"));
        let neg = DensityProcess::new(&sp, 0, vec![vec![0.5; 4], vec![0.6, 0.6, -0.1, -0.1], vec![0.0; 4]]).unwrap();
        let m = membership(&sp, &neg, DensityClass::A1Plus, 0);
        assert!(!m.holds);
        assert!(m.violation.unwrap().contains("s=1, ω=2"));
    }

    #[test]
    fn concatenation_examples() {
        let sp = coin();
        let a = DensityProcess::new(&sp, 0, vec![vec![0.0, 0.0], vec![1.2, 0.8]]).unwrap();
        let b = DensityProcess::new(&sp, 0, vec![vec![0.0, 0.0], vec![0.4, 1.6]]).unwrap();
        let theta = StoppingTime::deterministic(&sp, 1);
        let omega = Event::whole(&sp);
        assert!(concatenate(&sp, &a, &a, &theta, &omega).unwrap().approx_eq(&a, 1e-12));
        assert!(concatenate(&sp, &a, &b, &theta, &Event::empty(&sp)).unwrap().approx_eq(&a, 1e-12));
        // F_1 discrete: ≺1,a≻_1 = Δa_1 and ≺1,b≻_1 = Δb_1, so the tail of a
        // is rescaled along b and reproduces a pointwise
        let c = concatenate(&sp, &a, &b, &theta, &omega).unwrap();
        assert!(membership(&sp, &c, DensityClass::D, 0).holds);
        assert!(c.approx_eq(&a, 1e-12));
        // θ = 0: the whole process follows b scaled by ≺1,a≻_0 / ≺1,b≻_0 = 1
        let c0 = concatenate(&sp, &a, &b, &StoppingTime::deterministic(&sp, 0), &omega).unwrap();
        assert!(c0.approx_eq(&b, 1e-12));
    }

    #[test]
    fn concatenation_rejects_unmeasurable_event() {
        let sp = FiniteFilteredSpace::binary_tree(2);
        let a = DensityProcess::uniform(&sp, 0, 2);
        let theta = StoppingTime::deterministic(&sp, 1);
        let ev = Event::from_indicator(vec![true, false, false, false]);
        assert!(matches!(concatenate(&sp, &a, &a, &theta, &ev), Err(Error::NotMeasurable(_))));
    }

    #[test]
    fn pasting_examples() {
        let sp = two_by_two();
        assert!(TerminalDensity::new(&sp, vec![2.0, 0.0, 1.0, 1.0]).is_err());
        let f = TerminalDensity::new(&sp, vec![1.5, 0.5, 1.0, 1.0]).unwrap();
        let g = TerminalDensity::new(&sp, vec![0.5, 1.5, 1.0, 1.0]).unwrap();
        let first = Event::from_atoms(&sp, 1, &[0]);
        let h = paste(&sp, &f, &g, 1, &first).unwrap();
        // E(f|F_1) = 1 = E(g|F_1) on the first atom, so h = g there
        assert_eq!(h.values(), &[0.5, 1.5, 1.0, 1.0]);
        let mean: f64 = h.values().iter().sum::<f64>() / 4.0;
        assert!((mean - 1.0).abs() < 1e-15);
        assert!(paste(&sp, &f, &f, 1, &first).unwrap().approx_eq(&f, 1e-15));
        assert!(paste(&sp, &f, &g, 0, &Event::whole(&sp)).unwrap().approx_eq(&g, 1e-15));
        let split = Event::from_indicator(vec![true, false, false, false]);
        assert!(paste(&sp, &f, &g, 1, &split).is_err());
    }

    #[test]
    fn m1_stability_detects_missing_pasting() {
        let sp = two_by_two();
        let f = TerminalDensity::new(&sp, vec![1.5, 0.5, 1.0, 1.0]).unwrap();
        let g = TerminalDensity::new(&sp, vec![1.0, 1.0, 0.5, 1.5]).unwrap();
        let single = m1_stability(&sp, &[f.clone()], &StabilityConfig::default()).unwrap();
        assert!(single.stable);
        let rep = m1_stability(&sp, &[f.clone(), g.clone()], &StabilityConfig::default()).unwrap();
        assert!(!rep.stable);
        match rep.missing.unwrap() {
            StabilityWitness::Pasting { result, .. } => {
                assert!(!result.approx_eq(&f, 1e-9) && !result.approx_eq(&g, 1e-9));
            }
            other => panic!("unexpected witness {other:?}"),
        }
        // adding the product pasting closes the set
        let fg = TerminalDensity::new(&sp, vec![1.5, 0.5, 0.5, 1.5]).unwrap();
        let ones = TerminalDensity::new(&sp, vec![1.0; 4]).unwrap();
        let closed = m1_stability(&sp, &[f, g, fg, ones], &StabilityConfig::default()).unwrap();
        assert!(closed.stable, "{:?}", closed.missing);
    }

    #[test]
    fn concatenation_stability_of_deterministic_densities() {
        // On a one-step coin every D_{0,1} element with deterministic
        // increments is (w, 1-w); the grid {0, 1/2, 1} is closed: tails at
        // θ=1 are deterministic, so rescaling maps b's tail onto a's.
        let sp = coin();
        let set: Vec<DensityProcess> = [0.0, 0.5, 1.0]
            .iter()
            .map(|w| DensityProcess::new(&sp, 0, vec![vec![*w; 2], vec![1.0 - w; 2]]).unwrap())
            .collect();
        let rep = concatenation_stability(&sp, &set, &StabilityConfig::default()).unwrap();
        assert!(rep.exhaustive_stopping_times);
        assert!(rep.stable, "{:?}", rep.missing);
        assert!(concatenation_stability(&sp, &set[..1], &StabilityConfig::default()).unwrap().stable);
        let tiny = StabilityConfig { cap: 3, tol: EQ_TOL };
        assert!(matches!(concatenation_stability(&sp, &set, &tiny), Err(Error::CapExceeded { .. })));
    }
}
