//! Browser bindings for three small computations. Each exported function
//! has a plain-Rust counterpart (`*_report`) used by the native tests.

use dynworst::processes::{AdaptedProcess, DensityProcess};
use dynworst::rearrange::{enumerate_class, lap_upper_bound, max_correlation_over, DEFAULT_CLASS_CAP};
use dynworst::space::FiniteFilteredSpace;
use dynworst::utility::{DualFiniteUtility, EntropicUtility, UtilityFunction};
use dynworst::worstcase::{verify_worst_case_duality, ComonotoneOutcome, Portfolio, SearchConfig, VERIFY_TOL};
use dynworst::Error;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest outcome count the page accepts for the one-period computations.
pub const MAX_OUTCOMES: usize = 6;

fn one_period(outcomes: usize) -> Result<FiniteFilteredSpace, Error> {
    if outcomes == 0 || outcomes > MAX_OUTCOMES {
        return Err(Error::InvalidValue(format!("between 1 and {MAX_OUTCOMES} outcomes, got {outcomes}")));
    }
    FiniteFilteredSpace::uniform(outcomes, vec![vec![(0..outcomes).collect()], (0..outcomes).map(|w| vec![w]).collect()])
}

/// Two-step tree on four outcomes: `{0,1}` and `{2,3}` at time 1, singletons at time 2.
fn tree() -> FiniteFilteredSpace {
    FiniteFilteredSpace::uniform(4, vec![vec![vec![0, 1, 2, 3]], vec![vec![0, 1], vec![2, 3]], (0..4).map(|w| vec![w]).collect()])
        .expect("fixed tree is valid")
}

/// Position paying nothing at time 0 and `payoff` at time 1.
fn terminal_position(space: &FiniteFilteredSpace, payoff: &[f64]) -> Result<AdaptedProcess, Error> {
    AdaptedProcess::new(space, 0, vec![vec![0.0; payoff.len()], payoff.to_vec()])
}

/// Scenario weighting the outcomes proportionally to `weights` at time 1.
fn terminal_scenario(space: &FiniteFilteredSpace, weights: &[f64]) -> Result<DensityProcess, Error> {
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if weights.len() != space.outcome_count() || weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidDensity("weights must be positive, one per outcome".into()));
    }
    DensityProcess::new(space, 0, vec![vec![0.0; weights.len()], weights.iter().map(|w| w / mean).collect()])
}

pub fn entropic_report(payoff: &[f64], alphas: &[f64]) -> Result<Vec<f64>, Error> {
    let space = one_period(payoff.len())?;
    let x = terminal_position(&space, payoff)?;
    alphas
        .iter()
        .map(|&alpha| Ok(UtilityFunction::Entropic(EntropicUtility::new(&space, alpha, 0, 1)?).evaluate(&space, &x)?.get(0)))
        .collect()
}

/// `[given pairing, max correlation, assignment bound, class size]` on the
/// four-outcome tree. `x1` and `a1` hold one value per time-1 branch, `x2`
/// and `a2` one per outcome; the density is rescaled to unit mass.
pub fn correlation_report(x1: &[f64], x2: &[f64], a1: &[f64], a2: &[f64]) -> Result<Vec<f64>, Error> {
    if x1.len() != 2 || a1.len() != 2 || x2.len() != 4 || a2.len() != 4 {
        return Err(Error::Dimension("expected two branch values and four outcome values".into()));
    }
    let space = tree();
    let branch = |v: &[f64]| vec![v[0], v[0], v[1], v[1]];
    let x = AdaptedProcess::new(&space, 0, vec![vec![0.0; 4], branch(x1), x2.to_vec()])?;
    let raw = [vec![0.0; 4], branch(a1), a2.to_vec()];
    let mass: f64 = (0..4).map(|w| 0.25 * (raw[1][w] + raw[2][w])).sum();
    if raw.iter().flatten().any(|v| *v < 0.0) || !(mass > 0.0) {
        return Err(Error::InvalidDensity("increments must be nonnegative and not all zero".into()));
    }
    let a = DensityProcess::new(&space, 0, raw.iter().map(|r| r.iter().map(|v| v / mass).collect()).collect())?;
    let given = dynworst::processes::pairing(&space, &x, &a, 0, 2)?.get(0);
    let class = enumerate_class(&space, &x, DEFAULT_CLASS_CAP)?;
    let mc = max_correlation_over(&space, &a, &class)?.value.get(0);
    let lap = lap_upper_bound(&space, &a, &x)?.get(0);
    Ok(vec![given, mc, lap, class.len() as f64])
}

/// Worst-case pairing of two one-period positions under the coherent
/// utility generated by the scenarios, as JSON.
pub fn worst_case_report(x: &[f64], y: &[f64], scenarios: &[Vec<f64>]) -> Result<String, Error> {
    if x.len() != y.len() {
        return Err(Error::Dimension("both positions need one value per outcome".into()));
    }
    let space = one_period(x.len())?;
    let densities = scenarios.iter().map(|w| terminal_scenario(&space, w)).collect::<Result<Vec<_>, _>>()?;
    let u = DualFiniteUtility::coherent(&space, 0, 1, densities)?;
    let marginals = Portfolio::new(vec![terminal_position(&space, x)?, terminal_position(&space, y)?])?;
    let rep = verify_worst_case_duality(&space, &marginals, &u, &SearchConfig::default(), VERIFY_TOL)?;
    let tuple = rep.worst.attaining_tuple.as_ref().map(|p| {
        p.members().iter().map(|m| m.slice(1).to_vec()).collect::<Vec<_>>()
    });
    let comonotone = match &rep.comonotone {
        ComonotoneOutcome::Found { attains, .. } => json!({ "found": true, "attains": attains }),
        ComonotoneOutcome::NotApplicable { .. } => json!({ "found": false }),
    };
    Ok(json!({
        "worst_value": rep.lhs.get(0),
        "max_average_risk": rep.rhs.get(0),
        "equal": rep.equality_holds,
        "worst_scenario": rep.scenario.choice.first(),
        "tuple": tuple,
        "search_size": rep.worst.search_size as f64,
        "comonotone": comonotone,
    })
    .to_string())
}

fn js(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Entropic utility of a one-period position for each risk aversion.
#[wasm_bindgen]
pub fn entropic_curve(payoff: &[f64], alphas: &[f64]) -> Result<Vec<f64>, JsValue> {
    entropic_report(payoff, alphas).map_err(js)
}

#[wasm_bindgen]
pub fn correlation(x1: &[f64], x2: &[f64], a1: &[f64], a2: &[f64]) -> Result<Vec<f64>, JsValue> {
    correlation_report(x1, x2, a1, a2).map_err(js)
}

/// `scenarios` is a flat list of outcome weights, one block per scenario.
#[wasm_bindgen]
pub fn worst_case(x: &[f64], y: &[f64], scenarios: &[f64]) -> Result<String, JsValue> {
    if x.is_empty() || scenarios.len() % x.len() != 0 {
        return Err(JsValue::from_str("scenario weights must come in blocks of one value per outcome"));
    }
    let blocks: Vec<Vec<f64>> = scenarios.chunks(x.len()).map(|c| c.to_vec()).collect();
    worst_case_report(x, y, &blocks).map_err(js)
}
