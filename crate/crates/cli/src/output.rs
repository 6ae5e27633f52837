//! CSV and text output.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// One pass/fail line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub bound: f64,
    pub observed: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, bound: f64, observed: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            bound,
            observed,
            pass,
        }
    }

    /// `observed ≤ bound`.
    pub fn at_most(name: impl Into<String>, bound: f64, observed: f64) -> Self {
        Self::new(name, bound, observed, observed <= bound)
    }

    /// `observed ≥ bound`.
    pub fn at_least(name: impl Into<String>, bound: f64, observed: f64) -> Self {
        Self::new(name, bound, observed, observed >= bound)
    }
}

pub enum Cell<'a> {
    F(f64),
    U(u64),
    S(&'a str),
    B(bool),
}

impl From<f64> for Cell<'_> {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell<'_> {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

impl From<u32> for Cell<'_> {
    fn from(v: u32) -> Self {
        Cell::U(u64::from(v))
    }
}

impl<'a> From<&'a str> for Cell<'a> {
    fn from(v: &'a str) -> Self {
        Cell::S(v)
    }
}

impl From<bool> for Cell<'_> {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

/// In-memory CSV table with a fixed header.
pub struct Csv {
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let names: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        Self {
            columns: names.len(),
            text: names.join(",") + "\n",
        }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) {
        assert_eq!(cells.len(), self.columns, "row width differs from the header");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            let _ = match c {
                Cell::F(v) => write_f64(&mut self.text, *v),
                Cell::U(v) => write!(self.text, "{v}"),
                Cell::S(s) => write!(self.text, "{s}"),
                Cell::B(b) => write!(self.text, "{}", if *b { "PASS" } else { "FAIL" }),
            };
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_text(path, &self.text)
    }
}

/// Shortest round-trip form; scientific outside `[1e-4, 1e15)`.
fn write_f64(out: &mut String, v: f64) -> std::fmt::Result {
    let a = v.abs();
    if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&a) {
        write!(out, "{v:e}")
    } else {
        write!(out, "{v}")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// `name, bound, observed, pass` rows.
pub fn checks_csv(checks: &[Check]) -> Csv {
    let mut csv = Csv::new(&["name", "bound", "observed", "pass"]);
    for c in checks {
        csv.row(&[c.name.as_str().into(), c.bound.into(), c.observed.into(), c.pass.into()]);
    }
    csv
}
