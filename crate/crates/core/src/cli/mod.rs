//! Scenario-file driver: loads a scenario, runs its tasks and writes
//! tab-separated reports.

pub mod commands;
pub mod report;
pub mod scenario;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use report::{Row, Status, TaskReport, HEADER};
pub use scenario::{Scenario, ScenarioFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] crate::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CAP: i32 = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run only the task with this name.
    pub only: Option<String>,
    pub workers: Option<usize>,
    /// Overrides every task seed.
    pub seed: Option<u64>,
}

/// Runs the selected tasks in file order. Cap overruns mark the task
/// `FAILED-CAP` and other task errors mark it `ERROR`; the run continues.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<Vec<TaskReport>, CliError> {
    if let Some(only) = &opts.only {
        if !sc.tasks.iter().any(|t| &t.name == only) {
            return Err(CliError::Input(format!("no task named {only:?}")));
        }
    }
    Ok(sc
        .tasks
        .iter()
        .filter(|t| opts.only.as_ref().is_none_or(|o| o == &t.name))
        .map(|task| {
            let rows = match commands::execute(sc, task, opts) {
                Ok(rows) => rows,
                Err(CliError::Core(e @ crate::Error::CapExceeded { .. })) => {
                    vec![Row::new("-", "cap", e.to_string(), Status::FailedCap)]
                }
                Err(e) => vec![Row::new("-", "error", e.to_string(), Status::Error)],
            };
            TaskReport { task: task.name.clone(), rows }
        })
        .collect())
}

pub fn exit_code(reports: &[TaskReport]) -> i32 {
    let worst = reports.iter().map(|r| r.status()).max().unwrap_or(Status::Info);
    match worst {
        Status::Error => EXIT_INPUT,
        Status::Fail => EXIT_FAIL,
        Status::FailedCap => EXIT_CAP,
        _ => EXIT_PASS,
    }
}

/// All reports as one table with a single header.
pub fn combined_tsv(reports: &[TaskReport]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in reports {
        r.write_rows(&mut out);
    }
    out
}

/// Writes `<task>.tsv` per report into `dir`.
pub fn write_reports(reports: &[TaskReport], dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    for r in reports {
        let path = dir.join(format!("{}.tsv", r.task));
        fs::write(&path, r.to_tsv()).map_err(|source| CliError::Io { path, source })?;
    }
    Ok(())
}

pub fn load_file(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Scenario::load(&text)
}

/// Loads, runs and reports; returns the process exit code. Reports go to
/// `out` when given, otherwise to stdout.
pub fn run(path: &Path, out: Option<&Path>, opts: &RunOptions) -> i32 {
    let result = load_file(path).and_then(|sc| run_scenario(&sc, opts)).and_then(|reports| {
        match out {
            Some(dir) => write_reports(&reports, dir)?,
            None => print!("{}", combined_tsv(&reports)),
        }
        Ok(reports)
    });
    match result {
        Ok(reports) => {
            for r in &reports {
                eprintln!("{}\t{}", r.task, r.status());
            }
            exit_code(&reports)
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
