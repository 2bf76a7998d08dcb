//! Scenario files: a JSON document declaring a space, named objects and tasks.
//!
//! Numbers may be written as JSON numbers or decimal strings; `-inf` is the
//! string `"-inf"`. Serialization always writes strings, using the shortest
//! representation that parses back to the same float.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::processes::{membership, AdaptedProcess, DensityClass, DensityProcess, TerminalDensity};
use crate::space::{ConditionalValue, FiniteFilteredSpace};
use crate::utility::{DualFiniteUtility, EntropicUtility, RobustEntropicUtility, UtilityFunction, UtilityProcess};

use super::CliError;

/// A float that reads from numbers or strings and writes as a string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_str(&format!("{}", self.0))
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Num;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number, a decimal string or \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
                Ok(Num(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Num, E> {
                match v.trim() {
                    "-inf" => Ok(Num(f64::NEG_INFINITY)),
                    t => match t.parse::<f64>() {
                        Ok(x) if x.is_finite() => Ok(Num(x)),
                        _ => Err(E::custom(format!("invalid number {v:?}"))),
                    },
                }
            }
        }
        d.deserialize_any(V)
    }
}

fn floats(v: &[Num]) -> Vec<f64> {
    v.iter().map(|n| n.0).collect()
}

fn nums(v: &[f64]) -> Vec<Num> {
    v.iter().map(|&x| Num(x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub probs: Vec<Num>,
    /// `partitions[t]` lists the `F_t`-atoms as outcome index lists.
    pub partitions: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub start: usize,
    /// One row per date, one value per outcome.
    pub values: Vec<Vec<Num>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub start: usize,
    pub increments: Vec<Vec<Num>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    pub values: Vec<Num>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UtilitySpec {
    /// `min_i (≺X, a_i≻ - γ_i)`; omitted penalties mean coherent.
    DualFinite {
        start: usize,
        end: usize,
        scenarios: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        penalties: Option<Vec<Vec<Num>>>,
    },
    Entropic { alpha: Num, start: usize, end: usize },
    RobustEntropic { alpha: Num, start: usize, end: usize, densities: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityProcessSpec {
    /// Utility names for consecutive start dates.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Cap on enumerated tuples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<Num>,
    #[serde(default)]
    pub args: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub space: SpaceSpec,
    #[serde(default)]
    pub processes: BTreeMap<String, ProcessSpec>,
    #[serde(default)]
    pub densities: BTreeMap<String, DensitySpec>,
    #[serde(default)]
    pub terminal_densities: BTreeMap<String, TerminalSpec>,
    #[serde(default)]
    pub utilities: BTreeMap<String, UtilitySpec>,
    #[serde(default)]
    pub utility_processes: BTreeMap<String, UtilityProcessSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse { line: e.line(), column: e.column(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario files always serialize")
    }
}

/// A scenario with every object resolved and validated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub space: FiniteFilteredSpace,
    pub processes: BTreeMap<String, AdaptedProcess>,
    pub densities: BTreeMap<String, DensityProcess>,
    pub terminal_densities: BTreeMap<String, TerminalDensity>,
    pub utilities: BTreeMap<String, UtilityFunction>,
    pub utility_processes: BTreeMap<String, UtilityProcess>,
    pub tasks: Vec<TaskSpec>,
    specs: ScenarioFile,
}

fn input(what: impl fmt::Display, e: impl fmt::Display) -> CliError {
    CliError::Input(format!("{what}: {e}"))
}

fn lookup<'a, T>(map: &'a BTreeMap<String, T>, kind: &str, name: &str, owner: &str) -> Result<&'a T, CliError> {
    map.get(name).ok_or_else(|| CliError::Input(format!("{owner}: unknown {kind} {name:?}")))
}

impl Scenario {
    pub fn load(text: &str) -> Result<Self, CliError> {
        Self::resolve(ScenarioFile::parse(text)?)
    }

    pub fn resolve(specs: ScenarioFile) -> Result<Self, CliError> {
        let space = FiniteFilteredSpace::new(floats(&specs.space.probs), specs.space.partitions.clone())
            .map_err(|e| input("space", e))?;

        let mut processes = BTreeMap::new();
        for (name, p) in &specs.processes {
            let rows = p.values.iter().map(|r| floats(r)).collect();
            let x = AdaptedProcess::new(&space, p.start, rows).map_err(|e| input(format!("process {name:?}"), e))?;
            processes.insert(name.clone(), x);
        }

        let mut densities = BTreeMap::new();
        for (name, d) in &specs.densities {
            let rows = d.increments.iter().map(|r| floats(r)).collect();
            let a = DensityProcess::new(&space, d.start, rows).map_err(|e| input(format!("density {name:?}"), e))?;
            let m = membership(&space, &a, DensityClass::A1Plus, d.start);
            if !m.holds {
                return Err(input(format!("density {name:?}"), m.violation.unwrap_or_default()));
            }
            densities.insert(name.clone(), a);
        }

        let mut terminal_densities = BTreeMap::new();
        for (name, h) in &specs.terminal_densities {
            let d = TerminalDensity::new(&space, floats(&h.values))
                .map_err(|e| input(format!("terminal density {name:?}"), e))?;
            terminal_densities.insert(name.clone(), d);
        }

        let mut utilities = BTreeMap::new();
        for (name, u) in &specs.utilities {
            let owner = format!("utility {name:?}");
            let built = match u {
                UtilitySpec::DualFinite { start, end, scenarios, penalties } => {
                    let dens: Vec<DensityProcess> = scenarios
                        .iter()
                        .map(|s| lookup(&densities, "density", s, &owner).cloned())
                        .collect::<Result<_, _>>()?;
                    let d = match penalties {
                        None => DualFiniteUtility::coherent(&space, *start, *end, dens),
                        Some(pens) => {
                            let pens = pens
                                .iter()
                                .map(|g| ConditionalValue::new(&space, *start, floats(g)))
                                .collect::<crate::Result<Vec<_>>>()
                                .map_err(|e| input(&owner, e))?;
                            DualFiniteUtility::new(&space, *start, *end, dens, pens)
                        }
                    }
                    .map_err(|e| input(&owner, e))?;
                    UtilityFunction::DualFinite(d)
                }
                UtilitySpec::Entropic { alpha, start, end } => UtilityFunction::Entropic(
                    EntropicUtility::new(&space, alpha.0, *start, *end).map_err(|e| input(&owner, e))?,
                ),
                UtilitySpec::RobustEntropic { alpha, start, end, densities: names } => {
                    let hs: Vec<TerminalDensity> = names
                        .iter()
                        .map(|s| lookup(&terminal_densities, "terminal density", s, &owner).cloned())
                        .collect::<Result<_, _>>()?;
                    UtilityFunction::RobustEntropic(
                        RobustEntropicUtility::new(&space, alpha.0, *start, *end, hs).map_err(|e| input(&owner, e))?,
                    )
                }
            };
            utilities.insert(name.clone(), built);
        }

        let mut utility_processes = BTreeMap::new();
        for (name, up) in &specs.utility_processes {
            let owner = format!("utility process {name:?}");
            let members = up
                .members
                .iter()
                .map(|m| lookup(&utilities, "utility", m, &owner).cloned())
                .collect::<Result<Vec<_>, _>>()?;
            utility_processes.insert(name.clone(), UtilityProcess::new(members).map_err(|e| input(&owner, e))?);
        }

        let mut seen = std::collections::BTreeSet::new();
        for t in &specs.tasks {
            if !seen.insert(t.name.as_str()) {
                return Err(CliError::Input(format!("duplicate task name {:?}", t.name)));
            }
            if !super::commands::COMMANDS.contains(&t.command.as_str()) {
                return Err(CliError::Input(format!("task {:?}: unknown command {:?}", t.name, t.command)));
            }
        }

        Ok(Self {
            space,
            processes,
            densities,
            terminal_densities,
            utilities,
            utility_processes,
            tasks: specs.tasks.clone(),
            specs,
        })
    }

    /// Writes the resolved objects back into a file description.
    pub fn to_file(&self) -> ScenarioFile {
        let mut f = self.specs.clone();
        f.space.probs = nums(self.space.probs());
        for (name, x) in &self.processes {
            f.processes.insert(
                name.clone(),
                ProcessSpec { start: x.start(), values: x.rows().iter().map(|r| nums(r)).collect() },
            );
        }
        for (name, a) in &self.densities {
            f.densities.insert(
                name.clone(),
                DensitySpec { start: a.start(), increments: a.rows().iter().map(|r| nums(r)).collect() },
            );
        }
        for (name, h) in &self.terminal_densities {
            f.terminal_densities.insert(name.clone(), TerminalSpec { values: nums(h.values()) });
        }
        for (name, spec) in f.utilities.iter_mut() {
            if let (UtilitySpec::DualFinite { penalties: Some(p), .. }, Some(UtilityFunction::DualFinite(d))) =
                (spec, self.utilities.get(name))
            {
                *p = d.penalties().iter().map(|g| nums(g.values())).collect();
            }
        }
        f
    }
}
