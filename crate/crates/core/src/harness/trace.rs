//! Trace tables and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace row {row}, column {column}: cannot parse {text:?}")]
    Number { row: usize, column: String, text: String },
    #[error("column {0} not present")]
    MissingColumn(String),
    #[error("traces are on different time grids: {0}")]
    GridMismatch(String),
}

/// Column-named table, one row per control step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn index(&self, name: &str) -> Result<usize, TraceError> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| TraceError::MissingColumn(name.into()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TraceError> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn has(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c == name)
    }

    /// Write with 12 significant digits per value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:.11e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, TraceError> {
        let mut r = csv::Reader::from_reader(input);
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut row = Vec::with_capacity(columns.len());
            for (j, field) in rec.iter().enumerate() {
                row.push(field.trim().parse::<f64>().map_err(|_| TraceError::Number {
                    row: k + 1,
                    column: columns.get(j).cloned().unwrap_or_default(),
                    text: field.to_string(),
                })?);
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Per-signal difference between two traces on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDiff {
    pub name: String,
    pub max_abs: f64,
    /// ∫|a - b| dt.
    pub integral_abs: f64,
}

pub fn diff_traces(a: &Trace, b: &Trace) -> Result<Vec<SignalDiff>, TraceError> {
    let ta = a.column("t")?;
    let tb = b.column("t")?;
    if ta.len() != tb.len() {
        return Err(TraceError::GridMismatch(format!("{} rows vs {}", ta.len(), tb.len())));
    }
    if let Some(k) = (0..ta.len()).find(|&k| (ta[k] - tb[k]).abs() > 1e-9 * ta[k].abs().max(1.0)) {
        return Err(TraceError::GridMismatch(format!("row {k}: t = {} vs {}", ta[k], tb[k])));
    }
    let dt = if ta.len() > 1 { ta[1] - ta[0] } else { 0.0 };
    let mut out = Vec::new();
    for name in a.columns.iter().filter(|c| *c != "t" && b.has(c)) {
        let ca = a.column(name)?;
        let cb = b.column(name)?;
        let mut max_abs = 0.0f64;
        let mut integral = 0.0;
        for k in 0..ca.len() {
            let d = (ca[k] - cb[k]).abs();
            if d.is_nan() {
                continue;
            }
            max_abs = max_abs.max(d);
            integral += d * dt;
        }
        out.push(SignalDiff { name: name.clone(), max_abs, integral_abs: integral });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let mut t = Trace::new(vec!["t".into(), "a".into(), "b".into()]);
        t.rows.push(vec![0.0, 1.0, -2.5e-7]);
        t.rows.push(vec![0.25, 1.0 / 3.0, 12345.678]);
        t
    }

    #[test]
    fn csv_round_trip_keeps_twelve_digits() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,a,b\n"));
        assert!(text.contains("3.33333333333e-1"));
        let back = Trace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.columns, t.columns);
        assert!((back.rows[1][1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_traces_have_zero_difference() {
        let d = diff_traces(&sample(), &sample()).unwrap();
        assert!(d.iter().all(|s| s.max_abs == 0.0 && s.integral_abs == 0.0));
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let mut b = sample();
        b.rows[1][0] = 0.3;
        assert!(matches!(diff_traces(&sample(), &b), Err(TraceError::GridMismatch(_))));
        b.rows.pop();
        assert!(matches!(diff_traces(&sample(), &b), Err(TraceError::GridMismatch(_))));
    }
}
