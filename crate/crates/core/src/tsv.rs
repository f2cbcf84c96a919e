//! Plain-text formats.
//!
//! * matrix: a `n=<int>` header line, then `n` rows of `n` tab-separated values;
//! * vector: one value per line;
//! * contact sample: `x<TAB>y<TAB>count` per line, positions in `[0, 1]`;
//! * grid function: `center<TAB>value` per line.
//!
//! Lines starting with `#` and blank lines are skipped on input. Numbers are
//! written in Rust's shortest round-trip form, so output is deterministic and
//! lossless. Paths ending in `.gz` are read through a gzip decoder.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridFunction1D;
use crate::kernel::{ContactPoint, ContactSample};

/// Opens a file for buffered reading, decompressing `.gz` files.
pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn data_lines(reader: impl BufRead) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(e.into())),
        Ok(l) => {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, t.to_string())))
            }
        }
    })
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse { line, message: format!("bad number {s:?}: {e}") })
}

pub fn read_matrix(reader: impl BufRead) -> Result<Array2<f64>> {
    let mut lines = data_lines(reader);
    let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })??;
    let n: usize = header
        .strip_prefix("n=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Parse { line: hline, message: format!("expected `n=<int>`, found {header:?}") })?;
    let mut values = Array2::zeros((n, n));
    let mut rows = 0;
    for item in lines {
        let (line, text) = item?;
        if rows == n {
            return Err(Error::Parse { line, message: format!("more than {n} rows") });
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != n {
            return Err(Error::Parse { line, message: format!("expected {n} columns, found {}", fields.len()) });
        }
        for (j, f) in fields.iter().enumerate() {
            values[[rows, j]] = parse_f64(f, line)?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse { line: hline, message: format!("expected {n} rows, found {rows}") });
    }
    Ok(values)
}

pub fn write_matrix(mut w: impl Write, m: &Array2<f64>) -> Result<()> {
    writeln!(w, "n={}", m.nrows())?;
    for row in m.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", fields.join("\t"))?;
    }
    Ok(())
}

pub fn write_vector(mut w: impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        writeln!(w, "{x}")?;
    }
    Ok(())
}

pub fn read_vector(reader: impl BufRead) -> Result<Vec<f64>> {
    data_lines(reader).map(|item| item.and_then(|(line, t)| parse_f64(&t, line))).collect()
}

pub fn read_sample(reader: impl BufRead) -> Result<ContactSample> {
    let mut points = Vec::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse { line, message: format!("expected 3 columns, found {}", fields.len()) });
        }
        points.push(ContactPoint::new(
            parse_f64(fields[0], line)?,
            parse_f64(fields[1], line)?,
            parse_f64(fields[2], line)?,
        ));
    }
    ContactSample::new(points)
}

pub fn write_sample(mut w: impl Write, s: &ContactSample) -> Result<()> {
    for p in s.points() {
        writeln!(w, "{}\t{}\t{}", p.x, p.y, p.count)?;
    }
    Ok(())
}

pub fn write_grid_function(mut w: impl Write, f: &GridFunction1D) -> Result<()> {
    let grid = f.grid();
    for (i, v) in f.values().iter().enumerate() {
        writeln!(w, "{}\t{}", grid.center(i), v)?;
    }
    Ok(())
}

/// Reads `center<TAB>value` lines; centers must match a cell-centered grid.
pub fn read_grid_function(reader: impl BufRead) -> Result<GridFunction1D> {
    let mut values = Vec::new();
    let mut centers = Vec::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected 2 columns, found {}", fields.len()) });
        }
        centers.push(parse_f64(fields[0], line)?);
        values.push(parse_f64(fields[1], line)?);
    }
    let grid = crate::grid::Grid1D::new(values.len())?;
    for (i, c) in centers.iter().enumerate() {
        if (c - grid.center(i)).abs() > 1e-9 {
            return Err(Error::Parse { line: i + 1, message: format!("center {c} does not match the {}-cell grid", values.len()) });
        }
    }
    GridFunction1D::new(grid, values)
}
