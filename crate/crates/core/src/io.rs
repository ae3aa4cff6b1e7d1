//! Plain-text file formats.
//!
//! * matrix CSV: `n` rows of `n` comma-separated values, no header
//! * point CSV: header line `n,dim`, then `n` rows of `dim` values
//! * distribution CSV: one distribution per row
//! * samples JSONL: one `{"mu": row, "rho": row, "w1": cost}` object per line
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so write-then-read is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metric::{Distribution, PointCloud, SemimetricMatrix, TrainSample};

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .enumerate()
        .map(|(col, field)| {
            field
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(lineno, col + 1, format!("`{}`: {e}", field.trim())))
        })
        .collect()
}

/// Non-blank lines with their 1-based line numbers.
fn data_lines<R: Read>(reader: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

fn write_row<W: Write>(w: &mut W, row: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        write!(w, "{v}")?;
    }
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_matrix<R: Read>(reader: R) -> Result<SemimetricMatrix> {
    let lines = data_lines(reader)?;
    let n = lines.len();
    let mut flat = Vec::with_capacity(n * n);
    for (lineno, line) in &lines {
        let row = parse_row(line, *lineno)?;
        if row.len() != n {
            return Err(Error::parse(
                *lineno,
                row.len().min(n) + 1,
                format!("expected {n} values, found {}", row.len()),
            ));
        }
        flat.extend(row);
    }
    SemimetricMatrix::new(Array2::from_shape_vec((n, n), flat).expect("row lengths checked"))
}

pub fn write_matrix<W: Write>(writer: W, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for row in m.rows() {
        write_row(&mut w, row.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points<R: Read>(reader: R) -> Result<PointCloud> {
    let lines = data_lines(reader)?;
    let (header_line, header) = lines
        .first()
        .ok_or_else(|| Error::parse(1, 1, "missing `n,dim` header"))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() != 2 {
        return Err(Error::parse(*header_line, 1, "header must be `n,dim`"));
    }
    let parse_count = |s: &str, col: usize| {
        s.parse::<usize>()
            .map_err(|e| Error::parse(*header_line, col, format!("`{s}`: {e}")))
    };
    let n = parse_count(fields[0], 1)?;
    let dim = parse_count(fields[1], 2)?;
    let body = &lines[1..];
    if body.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: body.len(),
        });
    }
    let mut flat = Vec::with_capacity(n * dim);
    for (lineno, line) in body {
        let row = parse_row(line, *lineno)?;
        if row.len() != dim {
            return Err(Error::parse(
                *lineno,
                row.len().min(dim) + 1,
                format!("expected {dim} values, found {}", row.len()),
            ));
        }
        flat.extend(row);
    }
    PointCloud::new(Array2::from_shape_vec((n, dim), flat).expect("row lengths checked"))
}

pub fn write_points<W: Write>(writer: W, points: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{},{}", points.n(), points.dim())?;
    for row in points.coords().rows() {
        write_row(&mut w, row.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one distribution per row; `expected_len` (if given) pins the row length.
pub fn read_distributions<R: Read>(
    reader: R,
    expected_len: Option<usize>,
) -> Result<Vec<Distribution>> {
    let lines = data_lines(reader)?;
    let mut out = Vec::with_capacity(lines.len());
    let mut len = expected_len;
    for (lineno, line) in &lines {
        let row = parse_row(line, *lineno)?;
        let want = *len.get_or_insert(row.len());
        if row.len() != want {
            return Err(Error::parse(
                *lineno,
                row.len().min(want) + 1,
                format!("expected {want} values, found {}", row.len()),
            ));
        }
        out.push(Distribution::new(row).map_err(|e| Error::parse(*lineno, 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_distributions<W: Write>(writer: W, dists: &[Distribution]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for d in dists {
        write_row(&mut w, d.as_slice().iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(reader: R) -> Result<Vec<TrainSample>> {
    data_lines(reader)?
        .into_iter()
        .map(|(lineno, line)| {
            serde_json::from_str::<TrainSample>(&line)
                .map_err(|e| Error::parse(lineno, e.column(), e.to_string()))
        })
        .collect()
}

pub fn write_samples<W: Write>(writer: W, samples: &[TrainSample]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn open(path: impl AsRef<Path>) -> Result<File> {
    Ok(File::open(path)?)
}

pub fn create(path: impl AsRef<Path>) -> Result<File> {
    Ok(File::create(path)?)
}
