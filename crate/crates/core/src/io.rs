//! CSV and JSON file formats.
//!
//! Matrices are written one row per line with every value printed in the
//! shortest-exponent `%.17g` form, which round-trips any `f64` exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, SpcaError};
use crate::evaluation::MetricsRecord;
use crate::linalg::SymmetricMatrix;
use crate::tuning::CvScoreRow;

/// C-style `%.17g`.
pub fn fmt_g17(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{v:.*}", (16 - exp) as usize)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_matrix_csv_with_header(path, m, None)
}

/// As [`write_matrix_csv`], optionally preceded by a header line.
pub fn write_matrix_csv_with_header(
    path: &Path,
    m: &DMatrix<f64>,
    header: Option<&[String]>,
) -> Result<()> {
    let mut w = writer(path)?;
    if let Some(h) = header {
        writeln!(w, "{}", h.join(","))?;
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_g17(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV. A first line that does not parse as numbers is
/// taken as a header and skipped.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(SpcaError::Parse(format!(
                    "{}: line {}: {e}",
                    path.display(),
                    line + 1
                )))
            }
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(SpcaError::Parse(format!(
            "{}: no numeric rows",
            path.display()
        )));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(SpcaError::Parse(format!(
            "{}: row {} has {} fields, expected {ncols}",
            path.display(),
            i + 1,
            r.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SpcaError::Parse(format!(
            "{}: non-finite value",
            path.display()
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

pub fn read_symmetric_csv(path: &Path) -> Result<SymmetricMatrix> {
    SymmetricMatrix::new(read_matrix_csv(path)?)
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "seed,frob_error,tpr,fpr,rank")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.seed,
            fmt_g17(r.frob_error),
            fmt_g17(r.tpr),
            fmt_g17(r.fpr),
            r.rank
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cv_table_csv(path: &Path, rows: &[CvScoreRow]) -> Result<()> {
    let mut w = writer(path)?;
    writeln!(w, "lambda,fold,score")?;
    for r in rows {
        writeln!(w, "{},{},{}", fmt_g17(r.lambda), r.fold, fmt_g17(r.score))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
