//! Task execution: one function per command, each returning report rows.

use serde_json::Value;

use crate::processes::{membership, concatenation_stability, m1_stability, AdaptedProcess, DensityClass, DensityProcess, StabilityConfig};
use crate::rearrange::{is_comonotone, lap_upper_bound, max_correlation, DEFAULT_CLASS_CAP};
use crate::utility::{check_axioms, penalty, time_consistency_check, Axiom, AxiomStatus, DualFiniteUtility, UtilityFunction, UtilityProcess};
use crate::worstcase::preservation::{search_adapted_worst_process, verify_preservation, AdaptedWorstProcess, PreservationVariant};
use crate::worstcase::{
    matrix_compare, matrix_sup, verify_worst_case_duality, worst_portfolio_bruteforce, worst_scenario, ComonotoneOutcome,
    Matrix, Portfolio, SearchConfig, DEFAULT_PRODUCT_CAP, VERIFY_TOL,
};

use super::report::{list, num, Row, Status};
use super::scenario::{Num, Scenario, TaskSpec};
use super::{CliError, RunOptions};

pub const COMMANDS: [&str; 15] = [
    "check-space",
    "check-membership",
    "axioms",
    "evaluate",
    "penalty",
    "max-correlation",
    "comonotone",
    "worst-scenario",
    "worst-portfolio",
    "verify-thm31",
    "verify-preservation",
    "matrix-sup",
    "matrix-compare",
    "stability",
    "time-consistency",
];

struct Ctx<'a> {
    sc: &'a Scenario,
    task: &'a TaskSpec,
    seed: u64,
    tol: f64,
    cfg: SearchConfig,
}

impl Ctx<'_> {
    fn err(&self, msg: impl std::fmt::Display) -> CliError {
        CliError::Input(format!("task {:?}: {msg}", self.task.name))
    }

    fn arg(&self, key: &str) -> Result<&Value, CliError> {
        self.task.args.get(key).ok_or_else(|| self.err(format!("missing argument {key:?}")))
    }

    fn name(&self, key: &str) -> Result<&str, CliError> {
        self.arg(key)?.as_str().ok_or_else(|| self.err(format!("{key:?} must be a name")))
    }

    fn names(&self, key: &str) -> Result<Vec<&str>, CliError> {
        self.arg(key)?
            .as_array()
            .and_then(|a| a.iter().map(|v| v.as_str()).collect())
            .ok_or_else(|| self.err(format!("{key:?} must be a list of names")))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.task.args.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().map(|n| n as usize).ok_or_else(|| self.err(format!("{key:?} must be a count"))),
        }
    }

    fn bool_opt(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.task.args.get(key) {
            None => Ok(None),
            Some(v) => v.as_bool().map(Some).ok_or_else(|| self.err(format!("{key:?} must be true or false"))),
        }
    }

    fn float_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.task.args.get(key) {
            None => Ok(default),
            Some(v) => serde_json::from_value::<Num>(v.clone()).map(|n| n.0).map_err(|e| self.err(format!("{key:?}: {e}"))),
        }
    }

    fn matrix_from(&self, v: &Value, key: &str) -> Result<Matrix, CliError> {
        serde_json::from_value::<Vec<Vec<Num>>>(v.clone())
            .map(|m| m.into_iter().map(|r| r.into_iter().map(|n| n.0).collect()).collect())
            .map_err(|e| self.err(format!("{key:?}: {e}")))
    }

    fn matrices(&self, key: &str) -> Result<Vec<Matrix>, CliError> {
        self.arg(key)?
            .as_array()
            .ok_or_else(|| self.err(format!("{key:?} must be a list of matrices")))?
            .iter()
            .map(|m| self.matrix_from(m, key))
            .collect()
    }

    fn process(&self, name: &str) -> Result<&AdaptedProcess, CliError> {
        self.sc.processes.get(name).ok_or_else(|| self.err(format!("unknown process {name:?}")))
    }

    fn density(&self, name: &str) -> Result<&DensityProcess, CliError> {
        self.sc.densities.get(name).ok_or_else(|| self.err(format!("unknown density {name:?}")))
    }

    fn utility(&self, key: &str) -> Result<&UtilityFunction, CliError> {
        let name = self.name(key)?;
        self.sc.utilities.get(name).ok_or_else(|| self.err(format!("unknown utility {name:?}")))
    }

    fn dual_finite(&self, key: &str) -> Result<&DualFiniteUtility, CliError> {
        self.utility(key)?.as_dual_finite().ok_or_else(|| self.err(format!("{key:?} must be a dual-finite utility")))
    }

    fn utility_process(&self, key: &str) -> Result<&UtilityProcess, CliError> {
        let name = self.name(key)?;
        self.sc.utility_processes.get(name).ok_or_else(|| self.err(format!("unknown utility process {name:?}")))
    }

    fn portfolio(&self, key: &str) -> Result<Portfolio, CliError> {
        let members = self.names(key)?.into_iter().map(|n| self.process(n).cloned()).collect::<Result<Vec<_>, _>>()?;
        Ok(Portfolio::new(members)?)
    }
}

fn per_atom(quantity: &str, values: &[f64], status: Status) -> Vec<Row> {
    values.iter().enumerate().map(|(k, v)| Row::new(k, quantity, num(*v), status)).collect()
}

fn flag(b: bool) -> String {
    b.to_string()
}

fn expectation(actual: bool, expect: Option<bool>) -> Status {
    match expect {
        Some(e) => Status::check(actual == e),
        None => Status::Info,
    }
}

fn axiom_key(a: Axiom) -> &'static str {
    match a {
        Axiom::Locality => "locality",
        Axiom::Monotonicity => "monotonicity",
        Axiom::CashInvariance => "cash-invariance",
        Axiom::Concavity => "concavity",
        Axiom::Coherence => "coherence",
        Axiom::Continuity => "continuity",
        Axiom::Relevance => "relevance",
    }
}

pub(super) fn execute(sc: &Scenario, task: &TaskSpec, opts: &RunOptions) -> Result<Vec<Row>, CliError> {
    let cfg = SearchConfig {
        class_cap: DEFAULT_CLASS_CAP,
        product_cap: task.cap.map(u128::from).unwrap_or(DEFAULT_PRODUCT_CAP),
        workers: opts.workers,
    };
    let mut ctx = Ctx {
        sc,
        task,
        seed: opts.seed.or(task.seed).unwrap_or(0),
        tol: task.tol.map(|t| t.0).unwrap_or(VERIFY_TOL),
        cfg,
    };
    ctx.cfg.class_cap = ctx.usize_or("class_cap", DEFAULT_CLASS_CAP)?;
    match task.command.as_str() {
        "check-space" => check_space(&ctx),
        "check-membership" => check_membership(&ctx),
        "axioms" => axioms(&ctx),
        "evaluate" => evaluate(&ctx),
        "penalty" => penalty_cmd(&ctx),
        "max-correlation" => max_correlation_cmd(&ctx),
        "comonotone" => comonotone(&ctx),
        "worst-scenario" => worst_scenario_cmd(&ctx),
        "worst-portfolio" => worst_portfolio(&ctx),
        "verify-thm31" => verify_duality(&ctx),
        "verify-preservation" => preservation(&ctx),
        "matrix-sup" => matrix_sup_cmd(&ctx),
        "matrix-compare" => matrix_compare_cmd(&ctx),
        "stability" => stability(&ctx),
        "time-consistency" => time_consistency(&ctx),
        other => Err(ctx.err(format!("unknown command {other:?}"))),
    }
}

fn check_space(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let space = &ctx.sc.space;
    let total: f64 = space.probs().iter().sum();
    let mut rows = vec![
        Row::new("-", "outcomes", space.outcome_count().to_string(), Status::Info),
        Row::new("-", "horizon", space.horizon().to_string(), Status::Info),
        Row::new("-", "probability-sum", num(total), Status::check((total - 1.0).abs() <= 1e-12)).bound("1"),
    ];
    for t in 0..=space.horizon() {
        rows.push(Row::new("-", format!("atoms@{t}"), space.atom_count(t).to_string(), Status::Info));
    }
    Ok(rows)
}

fn check_membership(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let a = ctx.density(ctx.name("density")?)?;
    let (class, label) = match ctx.task.args.get("class").and_then(|v| v.as_str()).unwrap_or("D") {
        "A1+" => (DensityClass::A1Plus, "A1+"),
        "D" => (DensityClass::D, "D"),
        "De" => (DensityClass::De, "De"),
        other => return Err(ctx.err(format!("unknown density class {other:?}"))),
    };
    let t = ctx.usize_or("t", a.start())?;
    let m = membership(&ctx.sc.space, a, class, t);
    let expect = ctx.bool_opt("expect")?.unwrap_or(true);
    let mut row = Row::new("-", format!("member-of-{label}@{t}"), flag(m.holds), Status::check(m.holds == expect));
    if let Some(v) = m.violation {
        row = row.bound(v);
    }
    Ok(vec![row])
}

fn axioms(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let u = ctx.utility("utility")?;
    let samples = ctx.usize_or("samples", 50)?;
    let rep = check_axioms(&ctx.sc.space, u, samples, ctx.seed, ctx.tol)?;
    let expect = ctx.task.args.get("expect").and_then(|v| v.as_object());
    let mut rows = vec![Row::new("-", "seed", ctx.seed.to_string(), Status::Info)];
    for r in &rep.results {
        let got = match r.status {
            AxiomStatus::Pass => "pass",
            AxiomStatus::Fail => "fail",
            AxiomStatus::Vacuous => "vacuous",
        };
        let status = match expect.and_then(|e| e.get(axiom_key(r.axiom))).and_then(|v| v.as_str()) {
            Some(want) => Status::check(want == got),
            None => Status::Info,
        };
        let bound = r.counterexample.clone().unwrap_or_else(|| format!("max violation {}", num(r.max_violation)));
        rows.push(Row::new("-", axiom_key(r.axiom), got, status).bound(bound));
    }
    Ok(rows)
}

fn evaluate(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let u = ctx.utility("utility")?;
    let x = ctx.process(ctx.name("process")?)?;
    let insurance = ctx.bool_opt("insurance")?.unwrap_or(false);
    let v = if insurance { u.insurance_evaluate(&ctx.sc.space, x)? } else { u.evaluate(&ctx.sc.space, x)? };
    Ok(per_atom(if insurance { "insurance-value" } else { "value" }, v.values(), Status::Info))
}

fn penalty_cmd(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let u = ctx.dual_finite("utility")?;
    let a = ctx.density(ctx.name("density")?)?;
    let bound = match ctx.task.args.get("bound") {
        None => None,
        Some(_) => Some(ctx.float_or("bound", 0.0)?),
    };
    let p = penalty(&ctx.sc.space, u, a, bound)?;
    Ok(p.value.values().iter().enumerate().map(|(k, v)| Row::new(k, "penalty", num(*v), Status::Info).bound(num(p.bound))).collect())
}

fn max_correlation_cmd(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let space = &ctx.sc.space;
    let a = ctx.density(ctx.name("density")?)?;
    let x = ctx.process(ctx.name("process")?)?;
    let mc = max_correlation(space, a, x, ctx.cfg.class_cap)?;
    let lap = lap_upper_bound(space, a, x)?;
    let mut rows = vec![Row::new("-", "class-size", mc.class_size.to_string(), Status::Info)];
    for (k, (v, b)) in mc.value.values().iter().zip(lap.values()).enumerate() {
        rows.push(Row::new(k, "max-correlation", num(*v), Status::check(*v <= b + ctx.tol)).bound(num(*b)));
    }
    Ok(rows)
}

fn comonotone(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let a = ctx.density(ctx.name("density")?)?;
    let family = ctx.portfolio("processes")?;
    let cert = is_comonotone(&ctx.sc.space, a, family.members(), ctx.tol, ctx.cfg.class_cap)?;
    let mut rows = Vec::new();
    for (i, res) in cert.member_residuals.iter().enumerate() {
        rows.extend(per_atom(&format!("member-residual[{i}]"), res, Status::Info));
    }
    rows.extend(per_atom("sum-residual", &cert.sum_residuals, Status::Info));
    let expect = ctx.bool_opt("expect")?;
    rows.push(Row::new("-", "comonotone", flag(cert.is_comonotone()), expectation(cert.is_comonotone(), expect)));
    Ok(rows)
}

fn worst_scenario_cmd(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let u = ctx.dual_finite("utility")?;
    let marginals = ctx.portfolio("processes")?;
    let candidates: Vec<DensityProcess> = match ctx.task.args.get("candidates") {
        None => u.scenarios().to_vec(),
        Some(_) => ctx.names("candidates")?.into_iter().map(|n| ctx.density(n).cloned()).collect::<Result<_, _>>()?,
    };
    let ws = worst_scenario(&ctx.sc.space, &candidates, &marginals, u, ctx.cfg.class_cap)?;
    let mut rows = per_atom("average-risk", ws.value.values(), Status::Info);
    for (k, c) in ws.choice.iter().enumerate() {
        rows.push(Row::new(k, "choice", c.to_string(), Status::Info));
    }
    let single = ws.single_candidate.map(|j| j.to_string()).unwrap_or_else(|| "none".into());
    rows.push(Row::new("-", "single-candidate", single, Status::Info));
    rows.push(Row::new("-", "lower-bound-only", flag(ws.lower_bound_only), Status::Info));
    Ok(rows)
}

fn worst_portfolio(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let u = ctx.utility("utility")?;
    let marginals = ctx.portfolio("processes")?;
    let res = worst_portfolio_bruteforce(&ctx.sc.space, &marginals, u, &ctx.cfg)?;
    let base = u.insurance_evaluate(&ctx.sc.space, &marginals.mean())?;
    let mut rows = Vec::new();
    for (k, (s, b)) in res.sup_value.values().iter().zip(base.values()).enumerate() {
        // The supremum dominates the value of the given marginals themselves.
        rows.push(Row::new(k, "sup", num(*s), Status::check(*s >= b - ctx.tol)).bound(num(*b)));
    }
    for (k, t) in res.per_atom_argmax.iter().enumerate() {
        rows.push(Row::new(k, "argmax", list(t), Status::Info));
    }
    rows.push(Row::new("-", "attained-uniformly", flag(res.attained_uniformly), Status::Info));
    let tuple = res.attaining_index.as_deref().map(list).unwrap_or_else(|| "none".into());
    rows.push(Row::new("-", "attaining-tuple", tuple, Status::Info));
    rows.push(Row::new("-", "search-size", res.search_size.to_string(), Status::Info));
    Ok(rows)
}

fn verify_duality(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let u = ctx.dual_finite("utility")?;
    let marginals = ctx.portfolio("processes")?;
    let rep = verify_worst_case_duality(&ctx.sc.space, &marginals, u, &ctx.cfg, ctx.tol)?;
    let mut rows = Vec::new();
    for (k, (l, r)) in rep.lhs.values().iter().zip(rep.rhs.values()).enumerate() {
        rows.push(Row::new(k, "sup-rearrangements=max-average-risk", num(*l), Status::check((l - r).abs() <= ctx.tol)).bound(num(*r)));
    }
    for (k, c) in rep.scenario.choice.iter().enumerate() {
        rows.push(Row::new(k, "worst-scenario-choice", c.to_string(), Status::Info));
    }
    rows.push(Row::new("-", "search-size", rep.worst.search_size.to_string(), Status::Info));
    match &rep.comonotone {
        ComonotoneOutcome::NotApplicable { tried, truncated } => {
            let why = if *truncated { "search cap reached" } else { "none in the product class" };
            rows.push(Row::new("-", "comonotone-tuple", "not-applicable", Status::Vacuous).bound(format!("{why} ({tried} tried)")));
        }
        ComonotoneOutcome::Found { tuple, certificate, value, attains, .. } => {
            rows.push(Row::new("-", "comonotone-tuple", list(tuple), Status::Info));
            rows.push(Row::new("-", "comonotone-certificate", flag(certificate.is_comonotone()), Status::Info));
            for (k, (v, s)) in value.values().iter().zip(rep.lhs.values()).enumerate() {
                rows.push(Row::new(k, "comonotone-value", num(*v), Status::check(*attains && s - v <= ctx.tol)).bound(num(*s)));
            }
        }
    }
    Ok(rows)
}

fn preservation(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let space = &ctx.sc.space;
    let up = ctx.utility_process("utility_process")?;
    let label = ctx.task.args.get("variant").and_then(|v| v.as_str()).unwrap_or("general");
    let variant = PreservationVariant::parse(label).ok_or_else(|| ctx.err(format!("unknown variant {label:?}")))?;
    let samples = ctx.usize_or("samples", 5)?;
    let mut rows = vec![Row::new("-", "variant", variant.label(), Status::Info)];
    let candidate = match ctx.task.args.get("stages") {
        Some(Value::Array(stages)) => {
            let stages = stages
                .iter()
                .map(|s| {
                    let names = s.as_array().and_then(|a| a.iter().map(|v| v.as_str()).collect::<Option<Vec<_>>>());
                    let names = names.ok_or_else(|| ctx.err("\"stages\" must be lists of process names"))?;
                    Ok(Portfolio::new(names.into_iter().map(|n| ctx.process(n).cloned()).collect::<Result<_, CliError>>()?)?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            AdaptedWorstProcess::new(stages)?
        }
        Some(_) => return Err(ctx.err("\"stages\" must be a list")),
        None => {
            let marginals = ctx.portfolio("processes")?;
            let node_cap = ctx.usize_or("node_cap", 1000)?;
            let out = search_adapted_worst_process(space, up, &marginals, &ctx.cfg, node_cap)?;
            rows.push(Row::new("-", "search-nodes", out.nodes.to_string(), Status::Info));
            match out.process {
                Some(p) => p,
                None => {
                    let why = if out.truncated { "node cap reached" } else { "none exists" };
                    rows.push(Row::new("-", "adapted-worst-process", why, Status::Skipped));
                    rows.push(Row::new("-", "conclusion", "not tested", Status::Skipped));
                    return Ok(rows);
                }
            }
        }
    };
    let rep = verify_preservation(space, up, &candidate, variant, &ctx.cfg, samples, ctx.seed, ctx.tol)?;
    for h in &rep.hypotheses.checks {
        rows.push(Row::new("-", format!("hypothesis:{}", h.name), flag(h.holds), Status::Info).bound(h.detail.clone()));
    }
    for s in &rep.adapted.stages {
        rows.push(Row::new("-", format!("stage-worst@{}", s.t), flag(s.worst.is_worst), Status::Info).bound(num(s.worst.gap)));
        let link = match s.link_violation {
            Some(i) => format!("false (member {i})"),
            None => "true".into(),
        };
        rows.push(Row::new("-", format!("stage-link@{}", s.t), link, Status::Info));
    }
    if !rep.applicable() {
        let why = if rep.hypotheses.met() { "not an adapted worst process" } else { "hypotheses not met" };
        rows.push(Row::new("-", "conclusion", why, Status::Skipped));
        return Ok(rows);
    }
    for r in &rep.rows {
        for (k, (v, s)) in r.check.value.values().iter().zip(r.check.sup_value.values()).enumerate() {
            rows.push(Row::new(k, format!("worst@{}", r.t), num(*v), Status::check(s - v <= ctx.tol)).bound(num(*s)));
        }
    }
    rows.push(Row::new("-", "nontrivial", flag(rep.nontrivial()), Status::Info));
    Ok(rows)
}

fn matrix_sup_cmd(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let u = ctx.utility("utility")?;
    let x = ctx.process(ctx.name("process")?)?;
    let ms = ctx.matrices("matrices")?;
    let r = matrix_sup(&ctx.sc.space, u, x, &ms)?;
    let mut rows = per_atom("sup", r.value.values(), Status::Info);
    for (k, j) in r.per_atom_argmax.iter().enumerate() {
        rows.push(Row::new(k, "argmax", j.to_string(), Status::Info));
    }
    let uniform = r.uniform.map(|j| j.to_string()).unwrap_or_else(|| "none".into());
    rows.push(Row::new("-", "uniform-maximizer", uniform, Status::Info));
    rows.push(Row::new("-", "directed", flag(r.directed()), Status::Info));
    Ok(rows)
}

fn matrix_compare_cmd(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let u = ctx.utility("utility")?;
    let a = ctx.matrix_from(ctx.arg("matrix")?, "matrix")?;
    let x_tilde = ctx.portfolio("x_tilde")?;
    let x_bar = ctx.portfolio("x_bar")?;
    let samples = ctx.usize_or("samples", 20)?;
    let rep = matrix_compare(&ctx.sc.space, &a, u, &x_tilde, &x_bar, samples, ctx.seed, ctx.tol)?;
    let mut rows = vec![
        Row::new("-", "seed", rep.seed.to_string(), Status::Info),
        Row::new("-", "hypothesis:unit-eigenvector", flag(rep.unit_eigenvector), Status::Info),
        Row::new("-", "hypothesis:nonnegative", flag(rep.nonnegative), Status::Info),
        Row::new("-", "hypothesis:acceptance", flag(rep.acceptance), Status::Info).bound(format!("{samples} samples")),
        Row::new("-", "hypothesis:dominance", flag(rep.dominance), Status::Info),
    ];
    match &rep.conclusion {
        None => rows.push(Row::new("-", "conclusion", "hypotheses not met", Status::Skipped)),
        Some(c) => {
            for (k, (l, r)) in c.lhs.values().iter().zip(c.rhs.values()).enumerate() {
                rows.push(Row::new(k, "conclusion", num(*l), Status::check(l - r <= ctx.tol)).bound(num(*r)));
            }
        }
    }
    Ok(rows)
}

fn stability(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let space = &ctx.sc.space;
    let cfg = StabilityConfig { cap: ctx.usize_or("stability_cap", StabilityConfig::default().cap)?, tol: ctx.tol };
    let (kind, rep) = if ctx.task.args.contains_key("densities") {
        let set = ctx.names("densities")?.into_iter().map(|n| ctx.density(n).cloned()).collect::<Result<Vec<_>, _>>()?;
        ("concatenation", concatenation_stability(space, &set, &cfg)?)
    } else {
        let set = ctx
            .names("terminal_densities")?
            .into_iter()
            .map(|n| {
                ctx.sc.terminal_densities.get(n).cloned().ok_or_else(|| ctx.err(format!("unknown terminal density {n:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ("pasting", m1_stability(space, &set, &cfg)?)
    };
    let expect = ctx.bool_opt("expect")?;
    Ok(vec![
        Row::new("-", format!("{kind}-stable"), flag(rep.stable), expectation(rep.stable, expect)),
        Row::new("-", "generated", rep.generated.to_string(), Status::Info),
        Row::new("-", "exhaustive-stopping-times", flag(rep.exhaustive_stopping_times), Status::Info),
    ])
}

fn time_consistency(ctx: &Ctx) -> Result<Vec<Row>, CliError> {
    let up = ctx.utility_process("utility_process")?;
    let samples = ctx.usize_or("samples", 10)?;
    let rep = time_consistency_check(&ctx.sc.space, up, samples, ctx.seed, ctx.tol)?;
    Ok(vec![
        Row::new("-", "seed", rep.seed.to_string(), Status::Info),
        Row::new("-", "checks", rep.checks.to_string(), Status::Info),
        Row::new("-", "exhaustive-stopping-times", flag(rep.exhaustive_stopping_times), Status::Info),
        Row::new("-", "max-residual", num(rep.max_residual), Status::check(rep.passed())).bound(num(ctx.tol)),
        Row::new("-", "stopped-residual", num(rep.stopped_residual), Status::Info),
    ])
}
