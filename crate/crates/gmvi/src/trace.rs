//! Per-cycle run records and their CSV projection.
//!
//! The on-disk schema is fixed:
//! `k,a_k,L_k,Lhat_k,omega_k,theta_k,passes,wall_ms,gap,primal`,
//! one row per cycle, floats printed with 17 significant digits so a
//! re-parse reproduces every value bit for bit, empty cells for unmeasured
//! fields, `\n` line endings.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::block::BlockVector;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "k,a_k,L_k,Lhat_k,omega_k,theta_k,passes,wall_ms,gap,primal";

/// One completed cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub k: usize,
    pub a: f64,
    pub l: f64,
    pub lhat: f64,
    pub omega: f64,
    pub theta: f64,
    /// Cumulative operator passes at the end of this cycle.
    pub passes: f64,
    pub wall_ms: Option<f64>,
    pub gap: Option<f64>,
    pub primal: Option<f64>,
    /// Curvature bound `s_k` when the rule has the two-branch form.
    pub s_k: Option<f64>,
    /// True when `a_k` came from the curvature branch.
    pub curvature_active: bool,
}

/// Initialization summary attached to a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct InitRecord {
    pub a0: f64,
    pub backtracks: u32,
    pub probe_l1: f64,
    pub probe_lhat1: f64,
    pub final_l1: f64,
    /// Passes consumed before the first cycle.
    pub passes: f64,
}

/// Full record of one solver run.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub solver: String,
    pub config_summary: String,
    pub init: Option<InitRecord>,
    pub rows: Vec<CycleRecord>,
    /// Iterates `u_1, u_2, ...` when the run recorded them.
    pub iterates: Option<Vec<BlockVector>>,
    /// Integer work units of one full operator pass (for exact accounting).
    pub units_per_pass: u64,
}

impl RunTrace {
    pub fn new(solver: &str, units_per_pass: u64) -> Self {
        Self {
            solver: solver.to_string(),
            units_per_pass,
            ..Default::default()
        }
    }

    pub fn total_passes(&self) -> f64 {
        self.rows
            .last()
            .map(|r| r.passes)
            .unwrap_or_else(|| self.init.as_ref().map(|i| i.passes).unwrap_or(0.0))
    }
}

/// The fields of one emitted CSV row; exactly what a re-parse recovers.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub k: usize,
    pub a: f64,
    pub l: f64,
    pub lhat: f64,
    pub omega: f64,
    pub theta: f64,
    pub passes: f64,
    pub wall_ms: Option<f64>,
    pub gap: Option<f64>,
    pub primal: Option<f64>,
}

impl From<&CycleRecord> for CsvRow {
    fn from(r: &CycleRecord) -> Self {
        CsvRow {
            k: r.k,
            a: r.a,
            l: r.l,
            lhat: r.lhat,
            omega: r.omega,
            theta: r.theta,
            passes: r.passes,
            wall_ms: r.wall_ms,
            gap: r.gap,
            primal: r.primal,
        }
    }
}

fn fmt_f64(x: f64) -> String {
    // 17 significant digits: enough for exact f64 round-trips
    format!("{:.16e}", x)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Writes the trace rows as CSV. One header line, one line per cycle.
pub fn emit_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv(trace, &mut w).map_err(|e| Error::io(path, e))
}

fn write_csv(trace: &RunTrace, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(CSV_HEADER.as_bytes())?;
    w.write_all(b"\n")?;
    for row in &trace.rows {
        let r = CsvRow::from(row);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.a),
            fmt_f64(r.l),
            fmt_f64(r.lhat),
            fmt_f64(r.omega),
            fmt_f64(r.theta),
            fmt_f64(r.passes),
            fmt_opt(r.wall_ms),
            fmt_opt(r.gap),
            fmt_opt(r.primal),
        )?;
    }
    w.flush()
}

/// Renders the CSV to a string (used by determinism checks).
pub fn csv_string(trace: &RunTrace) -> String {
    let mut buf = Vec::new();
    write_csv(trace, &mut buf).expect("in-memory write cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

fn parse_field(s: &str, line: usize, what: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} value {s:?}"),
    })
}

fn parse_opt(s: &str, line: usize, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, line, what).map(Some)
    }
}

/// Parses a trace CSV back into rows; the inverse of [`emit_csv`] on the
/// emitted fields.
pub fn parse_csv_str(content: &str) -> Result<Vec<CsvRow>> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected header {h:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 10 fields, found {}", fields.len()),
            });
        }
        rows.push(CsvRow {
            k: fields[0].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad cycle index {:?}", fields[0]),
            })?,
            a: parse_field(fields[1], lineno, "a_k")?,
            l: parse_field(fields[2], lineno, "L_k")?,
            lhat: parse_field(fields[3], lineno, "Lhat_k")?,
            omega: parse_field(fields[4], lineno, "omega_k")?,
            theta: parse_field(fields[5], lineno, "theta_k")?,
            passes: parse_field(fields[6], lineno, "passes")?,
            wall_ms: parse_opt(fields[7], lineno, "wall_ms")?,
            gap: parse_opt(fields[8], lineno, "gap")?,
            primal: parse_opt(fields[9], lineno, "primal")?,
        });
    }
    Ok(rows)
}

/// Reads and parses a trace CSV file.
pub fn parse_csv_file(path: &Path) -> Result<Vec<CsvRow>> {
    let mut content = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut content))
        .map_err(|e| Error::io(path, e))?;
    parse_csv_str(&content)
}
