//! Per-iteration solver traces and their CSV form.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub elapsed_seconds: f64,
    pub objective: f64,
    pub per_block_beta: Vec<f64>,
    pub per_block_shrinks: Vec<usize>,
    /// Slack of the descent inequality when verification is on.
    pub descent_slack: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

pub const CSV_HEADER: &str = "iter,elapsed_seconds,objective,scaled_objective";

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        debug_assert!(self
            .records
            .last()
            .is_none_or(|last| last.iter < record.iter && last.elapsed_seconds <= record.elapsed_seconds));
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    pub fn objectives(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.objective)
    }

    /// Renders the trace as CSV. `scale` divides the objective for the
    /// `scaled_objective` column (the data norm `‖X‖²_F` for ONMF runs).
    ///
    /// Floats are written in shortest round-trip form, so parsing the file
    /// back yields the exact in-memory values.
    pub fn to_csv(&self, scale: f64) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.iter,
                r.elapsed_seconds,
                r.objective,
                r.objective / scale
            );
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W, scale: f64) -> Result<()> {
        w.write_all(self.to_csv(scale).as_bytes())?;
        Ok(())
    }
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub iter: usize,
    pub elapsed_seconds: f64,
    pub objective: f64,
    pub scaled_objective: f64,
}

pub fn read_csv<R: Read>(reader: R, path: &Path) -> Result<Vec<CsvRow>> {
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != CSV_HEADER {
                return Err(parse_err(lineno, format!("expected header `{CSV_HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(lineno, format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| parse_err(lineno, e.to_string()));
        rows.push(CsvRow {
            iter: fields[0].trim().parse().map_err(|e: std::num::ParseIntError| parse_err(lineno, e.to_string()))?,
            elapsed_seconds: num(fields[1])?,
            objective: num(fields[2])?,
            scaled_objective: num(fields[3])?,
        });
    }
    Ok(rows)
}
