//! Snapshot matrices as CSV.
//!
//! The first row is `t,<t_1>,...,<t_m>`; each following row is one spatial
//! location, `x<i>,<v_1>,...,<v_m>`. Complex cells are written `a+bi` or
//! `a-bi` with no spaces; a matrix whose imaginary parts are all `+0.0` is
//! written with plain reals. Floats use the shortest representation that
//! parses back to the same bits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{DmdError, Result};
use crate::snapshot::SnapshotMatrix;
use crate::C64;

fn io_error(path: &Path, source: std::io::Error) -> DmdError {
    DmdError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_error(path: &Path, err: csv::Error) -> DmdError {
    let line = err.position().map_or(0, |p| p.line() as usize);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => io_error(path, source),
        other => DmdError::Parse {
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Formats an `f64` so that `str::parse` returns the same bits.
pub fn format_real(x: f64) -> String {
    format!("{x:?}")
}

/// `a+bi` / `a-bi`, or `a` when `real_only`.
pub fn format_complex(z: C64, real_only: bool) -> String {
    if real_only {
        return format_real(z.re);
    }
    let sign = if z.im.is_sign_negative() { "" } else { "+" };
    format!("{:?}{sign}{:?}i", z.re, z.im)
}

/// Parses `a`, `bi`, `a+bi` or `a-bi`.
pub fn parse_complex(s: &str) -> std::result::Result<C64, String> {
    let bad = || format!("not a number: {s:?}");
    let Some(body) = s.strip_suffix('i') else {
        return s.parse::<f64>().map(|re| C64::new(re, 0.0)).map_err(|_| bad());
    };
    // the split is the last sign that is neither leading nor an exponent sign
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| matches!(bytes[k], b'+' | b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (body[..k].parse::<f64>().map_err(|_| bad())?, &body[k..]),
        None => (0.0, body),
    };
    let im = im.strip_prefix('+').unwrap_or(im);
    let im = im.parse::<f64>().map_err(|_| bad())?;
    Ok(C64::new(re, im))
}

/// True when every imaginary part is exactly `+0.0`.
pub fn is_real_only(values: &DMatrix<C64>) -> bool {
    values.iter().all(|z| z.im.to_bits() == 0)
}

/// Parses the CSV layout from any reader. `path` is only used in errors.
pub fn read_snapshots<R: Read>(reader: R, path: &Path) -> Result<SnapshotMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(path, e))?,
        None => return Err(DmdError::InvalidSnapshots("empty file".into())),
    };
    let header_line = header.position().map_or(1, |p| p.line() as usize);
    if header.get(0).map(str::trim) != Some("t") {
        return Err(DmdError::Parse {
            line: header_line,
            column: 1,
            message: "header must start with `t`".into(),
        });
    }
    let mut times = Vec::with_capacity(header.len().saturating_sub(1));
    for (k, field) in header.iter().enumerate().skip(1) {
        let t = field.trim().parse::<f64>().map_err(|_| DmdError::Parse {
            line: header_line,
            column: k + 1,
            message: format!("not a time: {field:?}"),
        })?;
        times.push(t);
    }
    let m = times.len();

    let mut values = Vec::new();
    let mut n = 0;
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let found = rec.len().saturating_sub(1);
        if found != m {
            return Err(DmdError::RaggedRows {
                line,
                found,
                expected: m,
            });
        }
        for (k, field) in rec.iter().enumerate().skip(1) {
            let z = parse_complex(field.trim()).map_err(|message| DmdError::Parse {
                line,
                column: k + 1,
                message,
            })?;
            values.push(z);
        }
        n += 1;
    }
    if n == 0 {
        return Err(DmdError::InvalidSnapshots("no data rows".into()));
    }
    SnapshotMatrix::new(DMatrix::from_row_slice(n, m, &values), DVector::from_vec(times))
}

/// Reads a snapshot CSV file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SnapshotMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    read_snapshots(file, path)
}

/// Writes `values` with sample times `times` in the CSV layout.
pub fn write_matrix<W: Write>(values: &DMatrix<C64>, times: &[f64], writer: W, path: &Path) -> Result<()> {
    if values.ncols() != times.len() {
        return Err(DmdError::ShapeMismatch(format!(
            "{} columns but {} times",
            values.ncols(),
            times.len()
        )));
    }
    let real_only = is_real_only(values);
    let mut w = csv::WriterBuilder::new().flexible(false).from_writer(writer);
    let header = std::iter::once("t".to_string()).chain(times.iter().map(|&t| format_real(t)));
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for (i, row) in values.row_iter().enumerate() {
        let cells = std::iter::once(format!("x{i}")).chain(row.iter().map(|&z| format_complex(z, real_only)));
        w.write_record(cells).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Writes a matrix and its sample times to `path`.
pub fn save_csv(values: &DMatrix<C64>, times: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    write_matrix(values, times, file, path)
}

pub fn save_snapshots(data: &SnapshotMatrix, path: impl AsRef<Path>) -> Result<()> {
    save_csv(data.values(), data.times().as_slice(), path)
}

/// A labelled table of reals: a header row, then `label,v_1,...` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

pub fn save_table(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&table.header).map_err(|e| csv_error(path, e))?;
    for (label, row) in &table.rows {
        let cells = std::iter::once(label.clone()).chain(row.iter().map(|&x| format_real(x)));
        w.write_record(cells).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn load_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut values = Vec::with_capacity(rec.len().saturating_sub(1));
        for (k, field) in rec.iter().enumerate().skip(1) {
            values.push(field.parse::<f64>().map_err(|_| DmdError::Parse {
                line,
                column: k + 1,
                message: format!("not a number: {field:?}"),
            })?);
        }
        rows.push((rec.get(0).unwrap_or_default().to_string(), values));
    }
    Ok(Table { header, rows })
}
