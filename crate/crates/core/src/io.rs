//! Small serialization helpers shared by the solver and the command-line
//! front end. Floats are written with the shortest representation that
//! round-trips exactly, so re-reading a file reproduces bitwise-identical
//! values.

use crate::error::Result;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Shortest exact decimal form of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes rows of already-formatted fields as CSV, with an optional header.
pub fn write_csv(path: &Path, header: Option<&[String]>, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV of floats, skipping `skip_rows` leading rows.
pub fn read_csv_f64(path: &Path, skip_rows: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if i < skip_rows {
            continue;
        }
        out.push(
            rec.iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        crate::error::Error::InvalidArgument(format!("bad float {s:?}: {e}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(out)
}

/// Serializes a value as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}
