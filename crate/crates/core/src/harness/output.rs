use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::kernel::IterationRecord;

pub const RECORD_COLUMNS: [&str; 8] = [
    "t",
    "f_value",
    "grad_norm2",
    "gap2_min",
    "gap2_max",
    "gap2_mean",
    "I_t_size",
    "dist2_to_opt",
];

/// Round-trip exact float formatting; absent values become empty cells.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_records_csv<W: Write>(out: W, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            fmt_f64(r.f_value),
            fmt_f64(r.grad_norm2),
            fmt_opt(r.gap2_min()),
            fmt_opt(r.gap2_max()),
            fmt_opt(r.gap2_mean()),
            r.participants.map(|n| n.to_string()).unwrap_or_default(),
            fmt_opt(r.dist2_to_opt),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_file(path: &Path, records: &[IterationRecord]) -> Result<()> {
    write_records_csv(BufWriter::new(File::create(path)?), records)
}

/// Writes a table whose header and rows are already formatted.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
