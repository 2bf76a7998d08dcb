//! Seeded random instances: spaces, processes, densities and utilities.
//!
//! Everything here is driven by a caller-supplied [`ChaCha8Rng`], so a seed
//! fully determines the generated instance.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::processes::{AdaptedProcess, DensityProcess, TerminalDensity};
use crate::space::{ConditionalValue, Event, FiniteFilteredSpace};
use crate::utility::{DualFiniteUtility, UtilityFunction, UtilityProcess};

pub use rand::SeedableRng;
pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random refining filtration on `outcomes` points with the given horizon.
/// Each atom splits into a random number of consecutive blocks per step.
pub fn random_space(rng: &mut Rng64, outcomes: usize, horizon: usize, uniform: bool) -> FiniteFilteredSpace {
    let mut order: Vec<usize> = (0..outcomes).collect();
    order.shuffle(rng);
    let mut partitions = vec![vec![order.clone()]];
    for _ in 0..horizon {
        let prev = partitions.last().unwrap();
        let mut next = Vec::new();
        for atom in prev {
            let mut rest = atom.as_slice();
            while !rest.is_empty() {
                let take = if rest.len() == 1 { 1 } else { rng.gen_range(1..=rest.len()) };
                next.push(rest[..take].to_vec());
                rest = &rest[take..];
            }
        }
        partitions.push(next);
    }
    let probs = if uniform {
        vec![1.0 / outcomes as f64; outcomes]
    } else {
        let raw: Vec<f64> = (0..outcomes).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|p| p / total).collect()
    };
    FiniteFilteredSpace::new(probs, partitions).expect("generated space is valid")
}

/// Space with a fully refined terminal partition: `F_T` discrete.
pub fn random_tree(rng: &mut Rng64, outcomes: usize, horizon: usize, uniform: bool) -> FiniteFilteredSpace {
    let space = random_space(rng, outcomes, horizon, uniform);
    let mut partitions: Vec<Vec<Vec<usize>>> = (0..=horizon).map(|t| space.partition(t).to_vec()).collect();
    partitions[horizon] = (0..outcomes).map(|w| vec![w]).collect();
    FiniteFilteredSpace::new(space.probs().to_vec(), partitions).expect("refinement keeps the space valid")
}

/// Adapted process on `[start, end]` with atom values uniform in `[lo, hi)`.
pub fn random_adapted(
    rng: &mut Rng64,
    space: &FiniteFilteredSpace,
    start: usize,
    end: usize,
    lo: f64,
    hi: f64,
) -> AdaptedProcess {
    let per_atom = (start..=end).map(|s| (0..space.atom_count(s)).map(|_| rng.gen_range(lo..hi)).collect()).collect();
    AdaptedProcess::from_atom_values(space, start, per_atom).expect("atom values give an adapted process")
}

/// Adapted process with integer atom values in `[lo, hi]`, which makes
/// ties and repeated paths common.
pub fn random_integer_adapted(
    rng: &mut Rng64,
    space: &FiniteFilteredSpace,
    start: usize,
    end: usize,
    lo: i32,
    hi: i32,
) -> AdaptedProcess {
    let per_atom =
        (start..=end).map(|s| (0..space.atom_count(s)).map(|_| rng.gen_range(lo..=hi) as f64).collect()).collect();
    AdaptedProcess::from_atom_values(space, start, per_atom).expect("atom values give an adapted process")
}

pub fn random_conditional(rng: &mut Rng64, space: &FiniteFilteredSpace, t: usize, lo: f64, hi: f64) -> ConditionalValue {
    let values = (0..space.atom_count(t)).map(|_| rng.gen_range(lo..hi)).collect();
    ConditionalValue::new(space, t, values).expect("finite values")
}

/// Union of a random subset of `F_t`-atoms.
pub fn random_event(rng: &mut Rng64, space: &FiniteFilteredSpace, t: usize) -> Event {
    let atoms: Vec<usize> = (0..space.atom_count(t)).filter(|_| rng.gen_bool(0.5)).collect();
    Event::from_atoms(space, t, &atoms)
}

/// Density in `D^e_{start,end}`: positive atom-wise increments, normalized
/// to conditional mass one at `start`.
pub fn random_density(rng: &mut Rng64, space: &FiniteFilteredSpace, start: usize, end: usize) -> DensityProcess {
    let raw = random_adapted(rng, space, start, end, 0.1, 1.0);
    normalize(space, start, raw.rows().to_vec())
}

/// Density in `D_{start,end}` whose increments vanish with probability
/// `zero_prob` per atom (tails may vanish, so it need not be in `D^e`).
pub fn random_sparse_density(
    rng: &mut Rng64,
    space: &FiniteFilteredSpace,
    start: usize,
    end: usize,
    zero_prob: f64,
) -> DensityProcess {
    loop {
        let per_atom: Vec<Vec<f64>> = (start..=end)
            .map(|s| {
                (0..space.atom_count(s))
                    .map(|_| if rng.gen_bool(zero_prob) { 0.0 } else { rng.gen_range(0.1..1.0) })
                    .collect()
            })
            .collect();
        let raw = AdaptedProcess::from_atom_values(space, start, per_atom).expect("adapted");
        let totals: Vec<f64> = (0..space.outcome_count()).map(|w| raw.path(w).iter().sum()).collect();
        let mass = space.cond_expect(&totals, start).expect("valid time");
        if mass.values().iter().all(|m| *m > 0.0) {
            return normalize(space, start, raw.rows().to_vec());
        }
    }
}

fn normalize(space: &FiniteFilteredSpace, start: usize, rows: Vec<Vec<f64>>) -> DensityProcess {
    let totals: Vec<f64> = (0..space.outcome_count()).map(|w| rows.iter().map(|r| r[w]).sum()).collect();
    let mass = space.lift(&space.cond_expect(&totals, start).expect("valid time"));
    let rows = rows.into_iter().map(|r| r.iter().zip(&mass).map(|(v, m)| v / m).collect()).collect();
    DensityProcess::new(space, start, rows).expect("normalized increments stay adapted")
}

/// Strictly positive terminal density with mean one.
pub fn random_terminal_density(rng: &mut Rng64, space: &FiniteFilteredSpace) -> TerminalDensity {
    let raw: Vec<f64> = (0..space.outcome_count()).map(|_| rng.gen_range(0.2..2.0)).collect();
    let mean: f64 = raw.iter().zip(space.probs()).map(|(h, p)| h * p).sum();
    let mut h: Vec<f64> = raw.iter().map(|v| v / mean).collect();
    // Absorb rounding so that E(h) = 1 to machine precision.
    let err: f64 = h.iter().zip(space.probs()).map(|(h, p)| h * p).sum::<f64>() - 1.0;
    h[0] -= err / space.prob(0);
    TerminalDensity::new(space, h).expect("positive, normalized")
}

/// Coherent dual-finite utility on `[start, end]` with `count` random `D^e` scenarios.
pub fn random_coherent_utility(
    rng: &mut Rng64,
    space: &FiniteFilteredSpace,
    start: usize,
    end: usize,
    count: usize,
) -> Result<DualFiniteUtility> {
    let scenarios = (0..count).map(|_| random_density(rng, space, start, end)).collect();
    DualFiniteUtility::coherent(space, start, end, scenarios)
}

/// Concave dual-finite utility: random penalties in `[-1, 0]` with the first
/// scenario pinned to zero penalty on every atom.
pub fn random_concave_utility(
    rng: &mut Rng64,
    space: &FiniteFilteredSpace,
    start: usize,
    end: usize,
    count: usize,
) -> Result<DualFiniteUtility> {
    let scenarios: Vec<DensityProcess> = (0..count).map(|_| random_density(rng, space, start, end)).collect();
    let penalties = (0..count)
        .map(|i| {
            if i == 0 {
                ConditionalValue::constant(space, start, 0.0)
            } else {
                random_conditional(rng, space, start, -1.0, 0.0)
            }
        })
        .collect();
    DualFiniteUtility::new(space, start, end, scenarios, penalties)
}

/// Time-consistent coherent model built from one-step kernels.
///
/// On each `F_t`-atom (`t < T`) there is a finite menu of transition kernels
/// over its children and a weight `λ_t ∈ [0, 1)`; `λ_T = 1`. A scenario for
/// the window `[s, T]` picks one kernel per atom at times `s..T` and has
/// increments `Δa_r = λ_r Π_{q=s}^{r-1} (1 - λ_q) · L_{s,r}`, where `L_{s,r}`
/// is the likelihood ratio of the chosen kernels against `P` from `s` to `r`.
/// Choices on different atoms are independent, so the scenario sets are
/// rectangular and the induced utility process is time-consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct RectangularModel {
    /// `lambdas[t][k]` for `t < T`.
    pub lambdas: Vec<Vec<f64>>,
    /// `kernels[t][k]`: distributions over `children(t, k)`.
    pub kernels: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Upper bound on the number of scenarios generated per window.
pub const RECTANGULAR_SCENARIO_CAP: usize = 4096;

/// Random model; each weight `λ_t` (`t < T`) is zero with probability
/// `zero_weight_prob`, otherwise uniform in `[0.1, 0.9)`.
pub fn random_rectangular_model(
    rng: &mut Rng64,
    space: &FiniteFilteredSpace,
    kernels_per_atom: usize,
    zero_weight_prob: f64,
) -> RectangularModel {
    let horizon = space.horizon();
    let lambdas = (0..horizon)
        .map(|t| {
            (0..space.atom_count(t))
                .map(|_| if rng.gen_bool(zero_weight_prob) { 0.0 } else { rng.gen_range(0.1..0.9) })
                .collect()
        })
        .collect();
    let kernels = (0..horizon)
        .map(|t| {
            (0..space.atom_count(t))
                .map(|k| {
                    let n = space.children(t, k).len();
                    let count = if n == 1 { 1 } else { kernels_per_atom.max(1) };
                    (0..count)
                        .map(|_| {
                            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
                            let total: f64 = raw.iter().sum();
                            raw.iter().map(|v| v / total).collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    RectangularModel { lambdas, kernels }
}

impl RectangularModel {
    /// Scenario set for the window `[s, T]`, one density per choice function.
    pub fn scenarios(&self, space: &FiniteFilteredSpace, s: usize) -> Result<Vec<DensityProcess>> {
        let horizon = space.horizon();
        space.check_time(s)?;
        let slots: Vec<(usize, usize)> =
            (s..horizon).flat_map(|r| (0..space.atom_count(r)).map(move |k| (r, k))).collect();
        let sizes: Vec<usize> = slots.iter().map(|&(r, k)| self.kernels[r][k].len()).collect();
        let count = sizes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).unwrap_or(usize::MAX);
        if count > RECTANGULAR_SCENARIO_CAP {
            return Err(crate::Error::CapExceeded {
                what: "rectangular scenarios".into(),
                count: count as u128,
                cap: RECTANGULAR_SCENARIO_CAP as u128,
            });
        }
        let offsets: Vec<usize> = (s..horizon)
            .scan(0, |acc, r| {
                let o = *acc;
                *acc += space.atom_count(r);
                Some(o)
            })
            .collect();
        let choices: Vec<Vec<usize>> = if sizes.is_empty() {
            vec![Vec::new()]
        } else {
            sizes.iter().map(|&n| 0..n).multi_cartesian_product().collect()
        };
        choices
            .iter()
            .map(|choice| {
                let rows = (s..=horizon)
                    .map(|r| {
                        (0..space.outcome_count())
                            .map(|w| {
                                let mut weight = if r == horizon { 1.0 } else { self.lambdas[r][space.atom_of(r, w)] };
                                let mut ratio = 1.0;
                                for q in s..r {
                                    let parent = space.atom_of(q, w);
                                    let child = space.atom_of(q + 1, w);
                                    weight *= 1.0 - self.lambdas[q][parent];
                                    let kids = space.children(q, parent);
                                    let idx = kids.iter().position(|&c| c == child).expect("child of parent");
                                    let kernel = &self.kernels[q][parent][choice[offsets[q - s] + parent]];
                                    ratio *= kernel[idx] * space.atom_prob(q, parent) / space.atom_prob(q + 1, child);
                                }
                                weight * ratio
                            })
                            .collect()
                    })
                    .collect();
                DensityProcess::new(space, s, rows)
            })
            .collect()
    }

    /// Coherent utilities `Ψ_{s,T}` for `s ∈ [start, T]`.
    pub fn utility_process(&self, space: &FiniteFilteredSpace, start: usize) -> Result<UtilityProcess> {
        let horizon = space.horizon();
        let members = (start..=horizon)
            .map(|s| Ok(UtilityFunction::DualFinite(DualFiniteUtility::coherent(space, s, horizon, self.scenarios(space, s)?)?)))
            .collect::<Result<Vec<_>>>()?;
        UtilityProcess::new(members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{membership, DensityClass};
    use crate::utility::time_consistency_check;

    #[test]
    fn rectangular_model_is_time_consistent() {
        let mut r = rng(12);
        for _ in 0..5 {
            let space = random_space(&mut r, 5, 2, false);
            let model = random_rectangular_model(&mut r, &space, 2, 0.3);
            let up = model.utility_process(&space, 0).unwrap();
            for (s, u) in up.members().iter().enumerate() {
                for a in u.as_dual_finite().unwrap().scenarios() {
                    assert!(membership(&space, a, DensityClass::De, s).holds);
                }
            }
            let rep = time_consistency_check(&space, &up, 20, 3, 1e-9).unwrap();
            assert!(rep.passed(), "{rep:?}");
        }
    }
}
