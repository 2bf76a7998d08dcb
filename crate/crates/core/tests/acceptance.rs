//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p dynworst --test acceptance -- --nocapture`

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dynworst::processes::{
    concatenate, membership, paste, AdaptedProcess, DensityClass, DensityProcess, TerminalDensity,
};
use dynworst::rearrange::{enumerate_class, lap_upper_bound, max_correlation};
use dynworst::sample::{self, Rng64};
use dynworst::space::{enumerate_events_at, enumerate_stopping_times, FiniteFilteredSpace};
use dynworst::utility::{
    check_axioms, penalty, time_consistency_check, Axiom, AxiomStatus, DualFiniteUtility, UtilityFunction,
    UtilityProcess,
};
use dynworst::worstcase::preservation::{search_adapted_worst_process, verify_preservation, PreservationVariant};
use dynworst::worstcase::{
    matrix_compare, verify_worst_case_duality, ComonotoneOutcome, Matrix, Portfolio, SearchConfig,
};
use dynworst::Error;
use rand::seq::SliceRandom;
use rand::Rng;

const TOL: f64 = 1e-9;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

fn run(n: usize, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let t0 = Instant::now();
    let v = f();
    let took = t0.elapsed();
    let ok = v.ok && took <= budget;
    println!(
        "criterion {n}: {} ({}; {:.2}s, budget {}s)",
        if ok { "PASS" } else { "FAIL" },
        v.detail,
        took.as_secs_f64(),
        budget.as_secs()
    );
    ok
}

fn draw_space(rng: &mut Rng64, m: usize, horizon: usize, uniform_prob: f64) -> FiniteFilteredSpace {
    let uniform = rng.gen_bool(uniform_prob);
    sample::random_space(rng, m, horizon, uniform)
}

// ---------------------------------------------------------------------------

fn entropic_time_consistency() -> Verdict {
    let mut rng = sample::rng(1001);
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for i in 0..200 {
        let m = rng.gen_range(2..=8);
        let horizon = rng.gen_range(1..=3);
        let space = draw_space(&mut rng, m, horizon, 0.5);
        let alpha = [0.5, 1.0, 2.0][i % 3];
        let up = UtilityProcess::entropic(&space, alpha, 0, horizon).unwrap();
        let rep = time_consistency_check(&space, &up, 3, i as u64, TOL).unwrap();
        assert!(rep.exhaustive_stopping_times);
        worst = worst.max(rep.max_residual);
        checks += rep.checks;
    }
    verdict(worst <= TOL, format!("200 spaces, {checks} stopping-time checks, max residual {worst:.2e}"))
}

fn axiom_suite() -> Verdict {
    let mut rng = sample::rng(1002);
    let (mut entropic_ok, mut coherent_ok, mut counterexamples) = (0, 0, 0);
    let mut seed = 0u64;
    while seed < 100 {
        let m = rng.gen_range(2..=6);
        let horizon = rng.gen_range(1..=2);
        let space = draw_space(&mut rng, m, horizon, 0.5);
        let t = rng.gen_range(0..horizon);
        if space.atom_count(t) == space.atom_count(horizon) {
            // nothing is random between t and T, so the entropic utility is linear there
            continue;
        }

        let ent = UtilityFunction::Entropic(
            dynworst::utility::EntropicUtility::new(&space, [0.5, 1.0, 2.0][seed as usize % 3], t, horizon).unwrap(),
        );
        let rep = check_axioms(&space, &ent, 10, seed, TOL).unwrap();
        let passes = [Axiom::Locality, Axiom::Monotonicity, Axiom::CashInvariance, Axiom::Concavity, Axiom::Relevance]
            .iter()
            .all(|&a| rep.status(a) == AxiomStatus::Pass);
        let coherence = rep.result(Axiom::Coherence);
        if coherence.counterexample.is_some() {
            counterexamples += 1;
        }
        if passes && coherence.status == AxiomStatus::Fail {
            entropic_ok += 1;
        }

        let count = rng.gen_range(1..=3);
        let coh = UtilityFunction::DualFinite(sample::random_coherent_utility(&mut rng, &space, t, horizon, count).unwrap());
        let rep = check_axioms(&space, &coh, 10, seed, TOL).unwrap();
        let passes = [Axiom::Locality, Axiom::Monotonicity, Axiom::CashInvariance, Axiom::Concavity, Axiom::Coherence]
            .iter()
            .all(|&a| rep.status(a) == AxiomStatus::Pass);
        if passes {
            coherent_ok += 1;
        }
        seed += 1;
    }
    verdict(
        entropic_ok == 100 && coherent_ok == 100 && counterexamples == 100,
        format!("entropic {entropic_ok}/100 (coherence counterexamples {counterexamples}), coherent {coherent_ok}/100"),
    )
}

// ---------------------------------------------------------------------------

struct DualityStats {
    instances: usize,
    redraws: usize,
    equal: usize,
    max_residual: f64,
    comonotone_found: usize,
    comonotone_attains: usize,
    comonotone_gap: f64,
}

fn duality_instances() -> DualityStats {
    let mut rng = sample::rng(1003);
    let cfg = SearchConfig::default();
    let mut st = DualityStats {
        instances: 0,
        redraws: 0,
        equal: 0,
        max_residual: 0.0,
        comonotone_found: 0,
        comonotone_attains: 0,
        comonotone_gap: 0.0,
    };
    while st.instances < 100 {
        let m = rng.gen_range(2..=6);
        let horizon = rng.gen_range(1..=2);
        let space = draw_space(&mut rng, m, horizon, 0.8);
        let t = horizon - rng.gen_range(0..=1);
        let n = rng.gen_range(1..=3);
        let count = rng.gen_range(1..=3);
        let u = sample::random_coherent_utility(&mut rng, &space, t, horizon, count).unwrap();
        let members = (0..n)
            .map(|_| {
                if rng.gen_bool(0.6) {
                    sample::random_integer_adapted(&mut rng, &space, t, horizon, 0, 2)
                } else {
                    sample::random_adapted(&mut rng, &space, t, horizon, -1.0, 1.0)
                }
            })
            .collect();
        let marginals = Portfolio::new(members).unwrap();
        let rep = match verify_worst_case_duality(&space, &marginals, &u, &cfg, TOL) {
            Ok(r) => r,
            Err(Error::CapExceeded { .. }) => {
                st.redraws += 1;
                continue;
            }
            Err(e) => panic!("duality instance failed: {e}"),
        };
        st.instances += 1;
        st.max_residual = st.max_residual.max(rep.max_residual);
        if rep.max_residual <= TOL {
            st.equal += 1;
        }
        if let ComonotoneOutcome::Found { gap, attains, .. } = rep.comonotone {
            st.comonotone_found += 1;
            st.comonotone_gap = st.comonotone_gap.max(gap);
            if attains && gap <= TOL {
                st.comonotone_attains += 1;
            }
        }
    }
    st
}

// ---------------------------------------------------------------------------

fn penalty_against_vertices() -> Verdict {
    let mut rng = sample::rng(1005);
    let (mut done, mut atoms, mut infinite, mut worst) = (0, 0, 0, 0.0f64);
    let mut ok = true;
    while done < 50 {
        let m = rng.gen_range(2..=6);
        let horizon = rng.gen_range(1..=2);
        let space = draw_space(&mut rng, m, horizon, 0.5);
        let t = rng.gen_range(0..=horizon);
        let vars = (0..space.atom_count(t))
            .map(|k| (t..=horizon).map(|s| space.sub_atoms(t, k, s).len()).sum::<usize>())
            .max()
            .unwrap();
        if vars > 6 {
            continue;
        }
        let count = rng.gen_range(1..=3);
        let u = if rng.gen_bool(0.5) {
            sample::random_coherent_utility(&mut rng, &space, t, horizon, count).unwrap()
        } else {
            sample::random_concave_utility(&mut rng, &space, t, horizon, count).unwrap()
        };
        let a = if rng.gen_bool(0.5) {
            u.scenarios()[rng.gen_range(0..count)].clone()
        } else {
            sample::random_density(&mut rng, &space, t, horizon)
        };
        let res = penalty(&space, &u, &a, None).unwrap();
        for k in 0..space.atom_count(t) {
            let (c, g, h) = common::penalty_lp(&space, &u, &a, k);
            atoms += 1;
            let oracle_inf = common::unbounded(&c, &g);
            let got = res.value.get(k);
            if oracle_inf {
                infinite += 1;
                ok &= got == f64::NEG_INFINITY && res.unbounded[k];
            } else {
                let v = common::vertex_minimum(&c, &g, &h, res.bound).expect("feasible program");
                let diff = (got - v).abs();
                worst = worst.max(diff);
                ok &= diff <= 1e-8 && !res.unbounded[k];
            }
        }
        done += 1;
    }
    verdict(ok, format!("50 instances, {atoms} atoms ({infinite} at -inf), max finite diff {worst:.2e}"))
}

// ---------------------------------------------------------------------------

fn random_event_at(rng: &mut Rng64, space: &FiniteFilteredSpace, theta: &dynworst::space::StoppingTime) -> dynworst::space::Event {
    enumerate_events_at(space, theta).choose(rng).unwrap().clone()
}

fn algebra_closure() -> Verdict {
    let mut rng = sample::rng(1006);
    let (mut concat_res, mut paste_res, mut self_concat, mut self_paste) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut members = true;
    for _ in 0..500 {
        let m = rng.gen_range(2..=6);
        let horizon = rng.gen_range(1..=3);
        let space = draw_space(&mut rng, m, horizon, 0.5);
        let lo = rng.gen_range(0..=horizon);
        let a = sample::random_density(&mut rng, &space, lo, horizon);
        let b = if rng.gen_bool(0.5) {
            sample::random_density(&mut rng, &space, lo, horizon)
        } else {
            sample::random_sparse_density(&mut rng, &space, lo, horizon, 0.3)
        };
        let thetas = enumerate_stopping_times(&space, lo, horizon, 100_000).unwrap();
        let theta = thetas.choose(&mut rng).unwrap().clone();
        let event = random_event_at(&mut rng, &space, &theta);
        let c = concatenate(&space, &a, &b, &theta, &event).unwrap();
        concat_res = concat_res.max(common::density_residual(&space, &c));
        members &= membership(&space, &c, DensityClass::D, lo).holds;
        let same = concatenate(&space, &a, &a, &theta, &event).unwrap();
        self_concat = self_concat.max(max_diff(a.rows(), same.rows()));

        let f = sample::random_terminal_density(&mut rng, &space);
        let g = sample::random_terminal_density(&mut rng, &space);
        let s = rng.gen_range(0..=horizon);
        let ev = sample::random_event(&mut rng, &space, s);
        let h = paste(&space, &f, &g, s, &ev).unwrap();
        paste_res = paste_res.max(terminal_residual(&space, &h));
        let same = paste(&space, &f, &f, s, &ev).unwrap();
        self_paste = self_paste.max(max_diff(&[f.values().to_vec()], &[same.values().to_vec()]));
    }
    verdict(
        members && concat_res <= 1e-10 && paste_res <= 1e-10 && self_concat <= 1e-12 && self_paste <= 1e-12,
        format!(
            "500 triples each; concatenation residual {concat_res:.2e}, pasting residual {paste_res:.2e}, \
             self-concatenation {self_concat:.2e}, self-pasting {self_paste:.2e}"
        ),
    )
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn terminal_residual(space: &FiniteFilteredSpace, h: &TerminalDensity) -> f64 {
    let mean: f64 = h.values().iter().zip(space.probs()).map(|(v, p)| v * p).sum();
    let negative = h.values().iter().fold(0.0f64, |m, v| m.max(-v));
    (mean - 1.0).abs().max(negative)
}

// ---------------------------------------------------------------------------

fn preservation_instance(
    rng: &mut Rng64,
    variant: PreservationVariant,
) -> Option<(FiniteFilteredSpace, UtilityProcess, Portfolio)> {
    let m = rng.gen_range(4..=7);
    let (horizon, n) = match variant {
        PreservationVariant::Entropic => (2, 1),
        _ => (2, rng.gen_range(1..=2)),
    };
    let space = sample::random_space(rng, m, horizon, true);
    let up = match variant {
        PreservationVariant::Entropic => UtilityProcess::entropic(&space, [0.5, 1.0, 2.0][rng.gen_range(0..3)], 0, horizon).ok()?,
        _ => {
            let zp = rng.gen_range(0.3..=1.0);
            let mut model = sample::random_rectangular_model(rng, &space, 2, zp);
            if variant == PreservationVariant::TwoPeriod {
                // positive weight at the middle date keeps every later increment positive
                for w in model.lambdas[1].iter_mut().filter(|w| **w == 0.0) {
                    *w = rng.gen_range(0.1..0.9);
                }
            }
            model.utility_process(&space, 0).ok()?
        }
    };
    let marginals =
        Portfolio::new((0..n).map(|_| sample::random_integer_adapted(rng, &space, 0, horizon, 0, 2)).collect()).ok()?;
    Some((space, up, marginals))
}

fn preservation_harness() -> Verdict {
    let quotas = [
        (PreservationVariant::General, 15),
        (PreservationVariant::NormalizedCoherent, 15),
        (PreservationVariant::TwoPeriod, 10),
        (PreservationVariant::Entropic, 10),
    ];
    let cfg = SearchConfig::default();
    let mut rng = sample::rng(1007);
    let mut parts = Vec::new();
    let (mut total, mut failures, mut nontrivial_total) = (0, 0, 0);
    for (variant, quota) in quotas {
        // Prefer instances where re-certification compares more than one
        // tuple; fall back to trivial ones once the draw budget is spent.
        let (mut nontrivial, mut trivial, mut tries) = (Vec::new(), Vec::new(), 0);
        while nontrivial.len() < quota && tries < 3000 {
            tries += 1;
            let Some((space, up, marginals)) = preservation_instance(&mut rng, variant) else { continue };
            let Ok(found) = search_adapted_worst_process(&space, &up, &marginals, &cfg, 200) else { continue };
            let Some(process) = found.process else { continue };
            let rep = verify_preservation(&space, &up, &process, variant, &cfg, 3, tries as u64, TOL).unwrap();
            if !rep.applicable() {
                continue;
            }
            if rep.nontrivial() {
                nontrivial.push(rep.holds());
            } else if trivial.len() < quota {
                trivial.push(rep.holds());
            }
        }
        let short = quota - nontrivial.len();
        let used: Vec<bool> = nontrivial.iter().chain(trivial.iter().take(short)).copied().collect();
        total += used.len();
        failures += used.iter().filter(|h| !**h).count();
        nontrivial_total += nontrivial.len();
        parts.push(format!("{} {}/{quota} ({} nontrivial)", variant.label(), used.len(), nontrivial.len()));
    }
    verdict(
        total == 50 && failures == 0,
        format!("{total} instances, {failures} failures, {nontrivial_total} nontrivial; {}", parts.join(", ")),
    )
}

// ---------------------------------------------------------------------------

fn rearrangement_oracles() -> Verdict {
    let mut rng = sample::rng(1008);
    let (mut instances, mut mismatches, mut lap_violations, mut largest) = (0, 0, 0, 0);
    for _ in 0..120 {
        let m = rng.gen_range(2..=7);
        let horizon = rng.gen_range(1..=2);
        let space = sample::random_space(&mut rng, m, horizon, true);
        let t = rng.gen_range(0..=horizon);
        let x = sample::random_integer_adapted(&mut rng, &space, t, horizon, 0, 2);
        let a = sample::random_density(&mut rng, &space, t, horizon);
        let oracle = common::class_oracle(&space, &x);
        if oracle.len() > 10_000 {
            continue;
        }
        instances += 1;
        largest = largest.max(oracle.len());
        let class = enumerate_class(&space, &x, 100_000).unwrap();
        let same = class.len() == oracle.len() && oracle.iter().all(|y| class.members.contains(y));
        let mc = max_correlation(&space, &a, &x, 100_000).unwrap();
        let expected: Vec<f64> = (0..space.atom_count(t))
            .map(|k| {
                oracle
                    .iter()
                    .map(|y| dynworst::processes::pairing(&space, y, &a, t, horizon).unwrap().get(k))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        if !same || mc.value.values() != expected.as_slice() {
            mismatches += 1;
        }
        let lap = lap_upper_bound(&space, &a, &x).unwrap();
        if lap.values().iter().zip(mc.value.values()).any(|(l, v)| *l < v - 1e-12) {
            lap_violations += 1;
        }
    }
    // Constructed instance where adaptedness makes the assignment bound strict.
    let space = FiniteFilteredSpace::uniform(
        4,
        vec![vec![vec![0, 1, 2, 3]], vec![vec![0, 1], vec![2, 3]], (0..4).map(|w| vec![w]).collect()],
    )
    .unwrap();
    let x = AdaptedProcess::new(&space, 0, vec![vec![0.0; 4], vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 5.0, 5.0]]).unwrap();
    let a = DensityProcess::new(&space, 0, vec![vec![0.0; 4], vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, 1.0, 0.0]]).unwrap();
    let mc = max_correlation(&space, &a, &x, 100_000).unwrap().value.get(0);
    let lap = lap_upper_bound(&space, &a, &x).unwrap().get(0);
    let strict = (mc - 1.75).abs() <= 1e-12 && (lap - 2.75).abs() <= 1e-12;
    verdict(
        mismatches == 0 && lap_violations == 0 && strict,
        format!(
            "{instances} instances (largest class {largest}), {mismatches} mismatches, {lap_violations} bound violations; \
             strict gap {mc} < {lap}"
        ),
    )
}

// ---------------------------------------------------------------------------

/// Lower-triangular, nonnegative, rows summing to one, last row `e_T`.
fn stochastic_matrix(rng: &mut Rng64, dim: usize) -> Matrix {
    (0..dim)
        .map(|i| {
            let mut row = vec![0.0; dim];
            if i + 1 == dim {
                row[i] = 1.0;
            } else {
                let raw: Vec<f64> = (0..=i).map(|_| rng.gen_range(0.0..1.0)).collect();
                let total: f64 = raw.iter().sum();
                for (j, v) in raw.iter().enumerate() {
                    row[j] = v / total;
                }
                // exact row sum
                let drift: f64 = row.iter().sum::<f64>() - 1.0;
                row[i] -= drift;
            }
            row
        })
        .collect()
}

fn terminal_only_utility(rng: &mut Rng64, space: &FiniteFilteredSpace, horizon: usize) -> UtilityFunction {
    match rng.gen_range(0..3) {
        0 => UtilityFunction::Entropic(dynworst::utility::EntropicUtility::new(space, rng.gen_range(0.5..2.0), 0, horizon).unwrap()),
        1 => {
            let densities = (0..rng.gen_range(1..=3)).map(|_| sample::random_terminal_density(rng, space)).collect();
            UtilityFunction::RobustEntropic(
                dynworst::utility::RobustEntropicUtility::new(space, rng.gen_range(0.5..2.0), 0, horizon, densities).unwrap(),
            )
        }
        _ => {
            let scenarios = (0..rng.gen_range(1..=3))
                .map(|_| {
                    let h = sample::random_terminal_density(rng, space);
                    DensityProcess::terminal(space, 0, horizon, &h).unwrap()
                })
                .collect();
            UtilityFunction::DualFinite(DualFiniteUtility::coherent(space, 0, horizon, scenarios).unwrap())
        }
    }
}

fn apply(space: &FiniteFilteredSpace, a: &Matrix, x: &AdaptedProcess) -> AdaptedProcess {
    let rows = (0..a.len())
        .map(|i| (0..space.outcome_count()).map(|w| (0..a.len()).map(|j| a[i][j] * x.value(j, w)).sum()).collect())
        .collect();
    AdaptedProcess::new(space, 0, rows).unwrap()
}

fn matrix_comparison() -> Verdict {
    let mut rng = sample::rng(1009);
    let (mut passing, mut holds, mut worst, mut guards, mut guard_asserted) = (0, 0, 0.0f64, 0, 0);
    let mut tries = 0;
    while (passing < 50 || guards < 20) && tries < 2000 {
        tries += 1;
        let m = rng.gen_range(2..=6);
        let horizon = rng.gen_range(1..=2);
        let uniform = rng.gen_bool(0.5);
        let space = sample::random_tree(&mut rng, m, horizon, uniform);
        let dim = horizon + 1;
        let guard = passing >= 50 || rng.gen_bool(0.3);
        let (u, a) = if guard {
            // either a matrix with a negative entry or an arbitrary coherent utility
            if rng.gen_bool(0.5) {
                let mut a = stochastic_matrix(&mut rng, dim);
                a[dim - 1] = vec![0.0; dim];
                a[dim - 1][0] = -0.5;
                a[dim - 1][dim - 1] = 1.5;
                (terminal_only_utility(&mut rng, &space, horizon), a)
            } else {
                let u = sample::random_coherent_utility(&mut rng, &space, 0, horizon, 2).unwrap();
                let mut a = stochastic_matrix(&mut rng, dim);
                a[dim - 1] = vec![1.0 / dim as f64; dim];
                (UtilityFunction::DualFinite(u), a)
            }
        } else {
            (terminal_only_utility(&mut rng, &space, horizon), stochastic_matrix(&mut rng, dim))
        };
        let n = rng.gen_range(1..=3);
        let x_tilde: Vec<AdaptedProcess> =
            (0..n).map(|_| sample::random_adapted(&mut rng, &space, 0, horizon, -1.0, 1.0)).collect();
        let x_bar = x_tilde
            .iter()
            .map(|x| {
                let noise = sample::random_adapted(&mut rng, &space, 0, horizon, 0.0, 0.5);
                apply(&space, &a, x).add(&noise).unwrap()
            })
            .collect();
        let Ok(rep) = matrix_compare(
            &space,
            &a,
            &u,
            &Portfolio::new(x_tilde).unwrap(),
            &Portfolio::new(x_bar).unwrap(),
            20,
            tries,
            TOL,
        ) else {
            continue;
        };
        if rep.hypotheses_hold() {
            if passing < 50 {
                passing += 1;
                let c = rep.conclusion.as_ref().expect("conclusion when hypotheses hold");
                worst = worst.max(c.max_violation);
                if c.holds && c.max_violation <= TOL {
                    holds += 1;
                }
            }
        } else if guards < 20 {
            guards += 1;
            if rep.conclusion.is_some() {
                guard_asserted += 1;
            }
        }
    }
    verdict(
        passing == 50 && holds == 50 && guards == 20 && guard_asserted == 0,
        format!(
            "{holds}/{passing} conclusions hold (max violation {worst:.2e}); {guards} guard instances, \
             {guard_asserted} with a conclusion"
        ),
    )
}

// ---------------------------------------------------------------------------

fn cli_run(out: &Path, workers: usize) -> std::process::ExitStatus {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/end_to_end.json");
    Command::new(env!("CARGO_BIN_EXE_dynworst"))
        .arg("run")
        .arg(&scenario)
        .arg("--out")
        .arg(out)
        .arg("--workers")
        .arg(workers.to_string())
        .output()
        .expect("binary runs")
        .status
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> Verdict {
    let dirs: Vec<tempfile::TempDir> = (0..4).map(|_| tempfile::tempdir().unwrap()).collect();
    let statuses: Vec<i32> = [(0, 1), (1, 1), (2, 4), (3, 4)]
        .iter()
        .map(|&(i, w)| cli_run(dirs[i].path(), w).code().unwrap_or(-1))
        .collect();
    let outputs: Vec<_> = dirs.iter().map(|d| read_dir_sorted(d.path())).collect();
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    verdict(
        identical && !outputs[0].is_empty() && statuses.iter().all(|&c| c == 0),
        format!("{} report files, exit codes {statuses:?}, byte-identical: {identical}", outputs[0].len()),
    )
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let mut ok = Vec::new();
    ok.push(run(1, Duration::from_secs(30), entropic_time_consistency));
    ok.push(run(2, Duration::from_secs(30), axiom_suite));

    let t0 = Instant::now();
    let st = duality_instances();
    let took = t0.elapsed();
    let pass3 = st.equal == 100 && took <= Duration::from_secs(120);
    println!(
        "criterion 3: {} ({}/{} equalities, max residual {:.2e}, {} redraws on cap; {:.2}s, budget 120s)",
        if pass3 { "PASS" } else { "FAIL" },
        st.equal,
        st.instances,
        st.max_residual,
        st.redraws,
        took.as_secs_f64()
    );
    ok.push(pass3);
    let pass4 = st.comonotone_found > 0 && st.comonotone_attains == st.comonotone_found;
    println!(
        "criterion 4: {} ({} of {} instances have a comonotone tuple, {} attain, max gap {:.2e})",
        if pass4 { "PASS" } else { "FAIL" },
        st.comonotone_found,
        st.instances,
        st.comonotone_attains,
        st.comonotone_gap
    );
    ok.push(pass4);

    ok.push(run(5, Duration::from_secs(60), penalty_against_vertices));
    ok.push(run(6, Duration::from_secs(60), algebra_closure));
    ok.push(run(7, Duration::from_secs(300), preservation_harness));
    ok.push(run(8, Duration::from_secs(120), rearrangement_oracles));
    ok.push(run(9, Duration::from_secs(60), matrix_comparison));
    ok.push(run(10, Duration::from_secs(120), cli_determinism));

    let failed: Vec<usize> = ok.iter().enumerate().filter(|(_, o)| !**o).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
