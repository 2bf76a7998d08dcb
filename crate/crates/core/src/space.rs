//! Finite filtered probability spaces.
//!
//! A space is a finite outcome set `{0, .., M-1}` with strictly positive
//! probabilities and one partition per time step `0..=T`. Partition `t`
//! generates the sigma-algebra `F_t`; partitions refine as `t` grows and
//! `F_0` is trivial. Every "almost sure" statement becomes "for every
//! outcome", and essential suprema over finite families are atom-wise maxima.

use crate::error::{Error, Result};

/// Tolerance for probability normalization.
pub const PROB_TOL: f64 = 1e-12;
/// Default absolute tolerance for comparing conditional values.
pub const EQ_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteFilteredSpace {
    probs: Vec<f64>,
    partitions: Vec<Vec<Vec<usize>>>,
    atom_of: Vec<Vec<usize>>,
    atom_probs: Vec<Vec<f64>>,
}

impl FiniteFilteredSpace {
    /// Builds a space from outcome probabilities and one partition per time.
    ///
    /// Atoms are stored in canonical order: outcomes sorted inside each atom,
    /// atoms sorted by their smallest outcome. Atom indices used everywhere
    /// else in the crate refer to this order.
    pub fn new(probs: Vec<f64>, partitions: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        let m = probs.len();
        if m == 0 {
            return Err(Error::InvalidSpace("no outcomes".into()));
        }
        if let Some((w, p)) = probs.iter().enumerate().find(|(_, p)| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidSpace(format!("probability of outcome {w} is {p}, must be > 0")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidSpace(format!("probabilities sum to {total}, expected 1")));
        }
        if partitions.is_empty() {
            return Err(Error::InvalidSpace("at least one partition (time 0) is required".into()));
        }

        let mut canon = Vec::with_capacity(partitions.len());
        let mut atom_of = Vec::with_capacity(partitions.len());
        for (t, part) in partitions.into_iter().enumerate() {
            let mut atoms: Vec<Vec<usize>> = part
                .into_iter()
                .map(|mut a| {
                    a.sort_unstable();
                    a
                })
                .collect();
            if atoms.iter().any(|a| a.is_empty()) {
                return Err(Error::InvalidSpace(format!("empty atom in partition {t}")));
            }
            atoms.sort_by_key(|a| a[0]);
            let mut owner = vec![usize::MAX; m];
            for (k, atom) in atoms.iter().enumerate() {
                for &w in atom {
                    if w >= m {
                        return Err(Error::InvalidSpace(format!("outcome {w} out of range in partition {t}")));
                    }
                    if owner[w] != usize::MAX {
                        return Err(Error::InvalidSpace(format!("outcome {w} appears twice in partition {t}")));
                    }
                    owner[w] = k;
                }
            }
            if let Some(w) = owner.iter().position(|&k| k == usize::MAX) {
                return Err(Error::InvalidSpace(format!("outcome {w} not covered by partition {t}")));
            }
            canon.push(atoms);
            atom_of.push(owner);
        }
        if canon[0].len() != 1 {
            return Err(Error::InvalidSpace("partition at time 0 must be trivial".into()));
        }
        for t in 0..canon.len() - 1 {
            for atom in &canon[t + 1] {
                let parent = atom_of[t][atom[0]];
                if atom.iter().any(|&w| atom_of[t][w] != parent) {
                    return Err(Error::InvalidSpace(format!(
                        "partition {} does not refine partition {t}",
                        t + 1
                    )));
                }
            }
        }
        let atom_probs = canon
            .iter()
            .map(|part| part.iter().map(|a| a.iter().map(|&w| probs[w]).sum()).collect())
            .collect();
        Ok(Self { probs, partitions: canon, atom_of, atom_probs })
    }

    /// Equally likely outcomes.
    pub fn uniform(outcomes: usize, partitions: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if outcomes == 0 {
            return Err(Error::InvalidSpace("no outcomes".into()));
        }
        Self::new(vec![1.0 / outcomes as f64; outcomes], partitions)
    }

    /// Recombining-free binary tree of the given depth: `2^depth` equally
    /// likely outcomes, `F_t` generated by the first `t` coin flips.
    pub fn binary_tree(depth: usize) -> Self {
        let m = 1usize << depth;
        let partitions = (0..=depth)
            .map(|t| {
                let width = m >> t;
                (0..(1usize << t)).map(|k| (k * width..(k + 1) * width).collect()).collect()
            })
            .collect();
        Self::uniform(m, partitions).expect("binary tree is a valid space")
    }

    pub fn outcome_count(&self) -> usize {
        self.probs.len()
    }

    pub fn horizon(&self) -> usize {
        self.partitions.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, outcome: usize) -> f64 {
        self.probs[outcome]
    }

    pub fn partition(&self, t: usize) -> &[Vec<usize>] {
        &self.partitions[t]
    }

    pub fn atom_count(&self, t: usize) -> usize {
        self.partitions[t].len()
    }

    pub fn atom(&self, t: usize, k: usize) -> &[usize] {
        &self.partitions[t][k]
    }

    /// Index of the `F_t`-atom containing `outcome`.
    pub fn atom_of(&self, t: usize, outcome: usize) -> usize {
        self.atom_of[t][outcome]
    }

    pub fn atom_prob(&self, t: usize, k: usize) -> f64 {
        self.atom_probs[t][k]
    }

    /// `F_{t+1}`-atoms contained in the `F_t`-atom `k` (for `t = T`, the atom itself).
    pub fn children(&self, t: usize, k: usize) -> Vec<usize> {
        let next = (t + 1).min(self.horizon());
        let mut out: Vec<usize> = self.partitions[t][k].iter().map(|&w| self.atom_of[next][w]).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `F_s`-atoms contained in the `F_t`-atom `k`, for `s >= t`.
    pub fn sub_atoms(&self, t: usize, k: usize, s: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.partitions[t][k].iter().map(|&w| self.atom_of[s][w]).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn check_time(&self, t: usize) -> Result<()> {
        if t > self.horizon() {
            return Err(Error::TimeOutOfRange { time: t, lo: 0, hi: self.horizon() });
        }
        Ok(())
    }

    /// Conditional expectation `E(y | F_t)`, one value per `F_t`-atom.
    pub fn cond_expect(&self, y: &[f64], t: usize) -> Result<ConditionalValue> {
        self.check_time(t)?;
        if y.len() != self.outcome_count() {
            return Err(Error::Dimension(format!("expected {} outcomes, got {}", self.outcome_count(), y.len())));
        }
        let values = self.partitions[t]
            .iter()
            .enumerate()
            .map(|(k, atom)| {
                let mass: f64 = atom.iter().map(|&w| self.probs[w] * y[w]).sum();
                mass / self.atom_probs[t][k]
            })
            .collect();
        Ok(ConditionalValue { time: t, values })
    }

    /// First `F_t`-atom on which `y` is not constant (within `tol`), if any.
    pub fn measurability_violation(&self, y: &[f64], t: usize, tol: f64) -> Option<usize> {
        self.partitions[t].iter().position(|atom| {
            let first = y[atom[0]];
            atom.iter().any(|&w| !approx_eq_ext(y[w], first, tol))
        })
    }

    /// Extends an `F_t`-measurable value to an outcome-indexed vector.
    pub fn lift(&self, v: &ConditionalValue) -> Vec<f64> {
        (0..self.outcome_count()).map(|w| v.values[self.atom_of[v.time][w]]).collect()
    }
}

/// Equality for extended reals: `-inf == -inf`, finite values within `tol`.
pub fn approx_eq_ext(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    if a.is_infinite() || b.is_infinite() {
        return false;
    }
    (a - b).abs() <= tol
}

/// Saturating extended-real addition. `-inf + x = -inf` for finite `x`;
/// `-inf + inf` is undefined.
pub fn ext_add(a: f64, b: f64) -> Result<f64> {
    let s = a + b;
    if s.is_nan() {
        return Err(Error::UndefinedArithmetic);
    }
    Ok(s)
}

/// An `F_t`-measurable random variable: one extended real per `F_t`-atom.
/// `-inf` is allowed (penalty values); `+inf` and NaN are not.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalValue {
    time: usize,
    values: Vec<f64>,
}

impl ConditionalValue {
    pub fn new(space: &FiniteFilteredSpace, time: usize, values: Vec<f64>) -> Result<Self> {
        space.check_time(time)?;
        if values.len() != space.atom_count(time) {
            return Err(Error::Dimension(format!(
                "time {time} has {} atoms, got {} values",
                space.atom_count(time),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
            return Err(Error::InvalidValue(format!("conditional value {v} not allowed")));
        }
        Ok(Self { time, values })
    }

    pub fn constant(space: &FiniteFilteredSpace, time: usize, c: f64) -> Self {
        Self { time, values: vec![c; space.atom_count(time)] }
    }

    /// Builds from an outcome-indexed vector that is already `F_t`-measurable.
    pub fn from_outcomes(space: &FiniteFilteredSpace, time: usize, y: &[f64]) -> Result<Self> {
        space.check_time(time)?;
        if let Some(atom) = space.measurability_violation(y, time, EQ_TOL) {
            return Err(Error::NotAdapted { time, atom });
        }
        let values = space.partition(time).iter().map(|a| y[a[0]]).collect();
        Self::new(space, time, values)
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, atom: usize) -> f64 {
        self.values[atom]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.time == other.time
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| approx_eq_ext(*a, *b, tol))
    }

    /// Largest atom-wise absolute difference; infinite when exactly one side is `-inf`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { time: self.time, values: self.values.iter().map(|v| f(*v)).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.time != other.time {
            return Err(Error::TimeMismatch { expected: self.time, found: other.time });
        }
        let values: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect();
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::UndefinedArithmetic);
        }
        Ok(Self { time: self.time, values })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn neg(&self) -> Self {
        self.map(|v| -v)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn merge_family(family: &[ConditionalValue], pick: fn(f64, f64) -> f64) -> Result<ConditionalValue> {
    let (first, rest) = family.split_first().ok_or(Error::EmptyFamily)?;
    let mut out = first.clone();
    for v in rest {
        if v.time != out.time {
            return Err(Error::TimeMismatch { expected: out.time, found: v.time });
        }
        if v.values.len() != out.values.len() {
            return Err(Error::Dimension("family members have different atom counts".into()));
        }
        for (o, x) in out.values.iter_mut().zip(&v.values) {
            *o = pick(*o, *x);
        }
    }
    Ok(out)
}

/// Essential supremum of a finite family: the atom-wise maximum.
pub fn ess_sup_family(family: &[ConditionalValue]) -> Result<ConditionalValue> {
    merge_family(family, f64::max)
}

/// Essential infimum of a finite family: the atom-wise minimum.
pub fn ess_inf_family(family: &[ConditionalValue]) -> Result<ConditionalValue> {
    merge_family(family, f64::min)
}

/// An event, stored as an outcome indicator.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Event {
    members: Vec<bool>,
}

impl Event {
    pub fn from_indicator(members: Vec<bool>) -> Self {
        Self { members }
    }

    pub fn whole(space: &FiniteFilteredSpace) -> Self {
        Self { members: vec![true; space.outcome_count()] }
    }

    pub fn empty(space: &FiniteFilteredSpace) -> Self {
        Self { members: vec![false; space.outcome_count()] }
    }

    /// Union of the listed `F_t`-atoms.
    pub fn from_atoms(space: &FiniteFilteredSpace, t: usize, atoms: &[usize]) -> Self {
        let mut members = vec![false; space.outcome_count()];
        for &k in atoms {
            for &w in space.atom(t, k) {
                members[w] = true;
            }
        }
        Self { members }
    }

    pub fn contains(&self, outcome: usize) -> bool {
        self.members[outcome]
    }

    pub fn indicator(&self) -> &[bool] {
        &self.members
    }

    pub fn complement(&self) -> Self {
        Self { members: self.members.iter().map(|b| !b).collect() }
    }

    pub fn is_measurable(&self, space: &FiniteFilteredSpace, t: usize) -> bool {
        space.partition(t).iter().all(|atom| atom.iter().all(|&w| self.members[w] == self.members[atom[0]]))
    }

    /// `A` belongs to `F_theta` iff `A ∩ {theta = k}` is `F_k`-measurable for every `k`.
    pub fn is_measurable_at(&self, space: &FiniteFilteredSpace, theta: &StoppingTime) -> bool {
        (0..=space.horizon()).all(|k| {
            space.partition(k).iter().all(|atom| {
                let inside: Vec<&usize> = atom.iter().filter(|&&w| theta.values[w] == k).collect();
                inside.iter().all(|&&w| self.members[w] == self.members[*inside[0]])
            })
        })
    }
}

/// A map from outcomes to times satisfying `{theta <= s} ∈ F_s` for all `s`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StoppingTime {
    values: Vec<usize>,
}

/// Result of a stopping-time check; `violation` names the first `(s, atom)`
/// on which the indicator of `{theta <= s}` is not constant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingTimeCheck {
    pub is_valid: bool,
    pub violation: Option<(usize, usize)>,
}

pub fn is_stopping_time(space: &FiniteFilteredSpace, candidate: &[usize]) -> StoppingTimeCheck {
    if candidate.len() != space.outcome_count() {
        return StoppingTimeCheck { is_valid: false, violation: None };
    }
    if let Some(&v) = candidate.iter().find(|&&v| v > space.horizon()) {
        return StoppingTimeCheck { is_valid: false, violation: Some((v, 0)) };
    }
    for s in 0..=space.horizon() {
        for (k, atom) in space.partition(s).iter().enumerate() {
            let first = candidate[atom[0]] <= s;
            if atom.iter().any(|&w| (candidate[w] <= s) != first) {
                return StoppingTimeCheck { is_valid: false, violation: Some((s, k)) };
            }
        }
    }
    StoppingTimeCheck { is_valid: true, violation: None }
}

impl StoppingTime {
    pub fn new(space: &FiniteFilteredSpace, values: Vec<usize>) -> Result<Self> {
        let check = is_stopping_time(space, &values);
        if !check.is_valid {
            return Err(Error::InvalidStoppingTime(match check.violation {
                Some((s, k)) => format!("{{theta <= {s}}} is not a union of F_{s}-atoms (atom {k})"),
                None => "wrong length or value out of range".into(),
            }));
        }
        Ok(Self { values })
    }

    pub fn deterministic(space: &FiniteFilteredSpace, s: usize) -> Self {
        Self { values: vec![s; space.outcome_count()] }
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn at(&self, outcome: usize) -> usize {
        self.values[outcome]
    }

    pub fn min_value(&self) -> usize {
        self.values.iter().copied().min().unwrap_or(0)
    }

    pub fn max_value(&self) -> usize {
        self.values.iter().copied().max().unwrap_or(0)
    }

    pub fn is_deterministic(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }
}

/// All stopping times with values in `[lo, hi]`, in a fixed order (earlier
/// stopping on lower-indexed atoms first).
pub fn enumerate_stopping_times(
    space: &FiniteFilteredSpace,
    lo: usize,
    hi: usize,
    cap: usize,
) -> Result<Vec<StoppingTime>> {
    if lo > hi || hi > space.horizon() {
        return Err(Error::TimeOutOfRange { time: hi, lo, hi: space.horizon() });
    }
    let mut out = Vec::new();
    let mut values = vec![usize::MAX; space.outcome_count()];
    // Running atoms at time lo: every outcome is still running.
    let running: Vec<usize> = (0..space.atom_count(lo)).collect();
    recurse_stopping(space, lo, hi, &running, &mut values, &mut out, cap)?;
    Ok(out)
}

fn recurse_stopping(
    space: &FiniteFilteredSpace,
    s: usize,
    hi: usize,
    running: &[usize],
    values: &mut Vec<usize>,
    out: &mut Vec<StoppingTime>,
    cap: usize,
) -> Result<()> {
    if running.is_empty() || s == hi {
        for &k in running {
            for &w in space.atom(s, k) {
                values[w] = s;
            }
        }
        if out.len() >= cap {
            return Err(Error::CapExceeded {
                what: "enumerating stopping times".into(),
                count: out.len() as u128 + 1,
                cap: cap as u128,
            });
        }
        out.push(StoppingTime { values: values.clone() });
        return Ok(());
    }
    let n = running.len();
    // mask bit i set = atom running[i] stops at s
    for mask in 0..(1u64 << n) {
        let mut next = Vec::new();
        for (i, &k) in running.iter().enumerate() {
            if mask & (1 << i) != 0 {
                for &w in space.atom(s, k) {
                    values[w] = s;
                }
            } else {
                next.extend(space.children(s, k));
            }
        }
        next.sort_unstable();
        recurse_stopping(space, s + 1, hi, &next, values, out, cap)?;
    }
    Ok(())
}

/// All events in `F_t`, as unions of atoms, ordered by atom bitmask.
pub fn enumerate_events(space: &FiniteFilteredSpace, t: usize) -> Vec<Event> {
    let n = space.atom_count(t);
    (0..(1u64 << n))
        .map(|mask| {
            let atoms: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            Event::from_atoms(space, t, &atoms)
        })
        .collect()
}

/// All events in `F_theta`: independent choices of `F_k`-atoms inside `{theta = k}`.
pub fn enumerate_events_at(space: &FiniteFilteredSpace, theta: &StoppingTime) -> Vec<Event> {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for k in 0..=space.horizon() {
        for atom in space.partition(k) {
            if atom.iter().all(|&w| theta.at(w) == k) {
                blocks.push(atom.clone());
            }
        }
    }
    let n = blocks.len();
    (0..(1u64 << n))
        .map(|mask| {
            let mut members = vec![false; space.outcome_count()];
            for (i, b) in blocks.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    for &w in b {
                        members[w] = true;
                    }
                }
            }
            Event::from_indicator(members)
        })
        .collect()
}
