//! Tab-separated task reports.

use std::fmt;

pub const HEADER: &str = "task\tatom\tquantity\tvalue\tbound\tstatus";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Info,
    Pass,
    Vacuous,
    Skipped,
    Fail,
    FailedCap,
    Error,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Info => "INFO",
            Status::Pass => "PASS",
            Status::Vacuous => "VACUOUS",
            Status::Skipped => "SKIPPED",
            Status::Fail => "FAIL",
            Status::FailedCap => "FAILED-CAP",
            Status::Error => "ERROR",
        })
    }
}

impl Status {
    pub fn check(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub atom: String,
    pub quantity: String,
    pub value: String,
    pub bound: String,
    pub status: Status,
}

impl Row {
    pub fn new(atom: impl fmt::Display, quantity: impl Into<String>, value: impl Into<String>, status: Status) -> Self {
        Self { atom: atom.to_string(), quantity: quantity.into(), value: value.into(), bound: "-".into(), status }
    }

    pub fn bound(mut self, bound: impl Into<String>) -> Self {
        self.bound = bound.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskReport {
    pub task: String,
    pub rows: Vec<Row>,
}

impl TaskReport {
    /// Worst status over the rows (`Info` for an empty report).
    pub fn status(&self) -> Status {
        self.rows.iter().map(|r| r.status).max().unwrap_or(Status::Info)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        self.write_rows(&mut out);
        out
    }

    pub fn write_rows(&self, out: &mut String) {
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\t{}\n", self.task, r.atom, r.quantity, r.value, r.bound, r.status));
        }
    }
}

/// `%.12g`-style formatting: 12 significant digits, trailing zeros trimmed.
pub fn num(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        return "-inf".into();
    }
    if v == f64::INFINITY {
        return "inf".into();
    }
    if v.is_nan() {
        return "nan".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..12).contains(&exp) {
        let m = trim(mantissa);
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    trim(&format!("{:.*}", (11 - exp) as usize, v)).to_string()
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn list(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}
