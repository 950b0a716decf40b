//! Reading panels from CSV or JSON and writing them back.
//!
//! Complex cells are written `re+imi` (for example `1.5-0.25i`). A first
//! row that does not parse as numbers is treated as a header.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Each record is one time point `x_t` (the usual CSV layout).
    RowsAreTime,
    /// Each record is one component series.
    ColumnsAreTime,
}

impl std::str::FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rows-are-time" | "rows" => Ok(Orientation::RowsAreTime),
            "columns-are-time" | "columns" | "cols" => Ok(Orientation::ColumnsAreTime),
            other => Err(Error::InvalidInput(format!("unknown orientation {other:?}"))),
        }
    }
}

/// Parses a real or complex number. Accepts `a`, `bi`, `a+bi`, `a-bi`.
pub fn parse_cell(s: &str) -> Option<Complex64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Ok(v) = s.parse::<f64>() {
        return Some(Complex64::new(v, 0.0));
    }
    let body = s.strip_suffix('i').or_else(|| s.strip_suffix('j'))?;
    // Split at the last sign that is not the leading one or part of an exponent.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    match split {
        Some(k) => {
            let re = body[..k].parse::<f64>().ok()?;
            let im_str = &body[k..];
            let im = match im_str {
                "+" => 1.0,
                "-" => -1.0,
                _ => im_str.parse::<f64>().ok()?,
            };
            Some(Complex64::new(re, im))
        }
        None => {
            let im = match body {
                "" | "+" => 1.0,
                "-" => -1.0,
                _ => body.parse::<f64>().ok()?,
            };
            Some(Complex64::new(0.0, im))
        }
    }
}

fn is_complex_text(s: &str) -> bool {
    let t = s.trim();
    t.ends_with('i') || t.ends_with('j')
}

/// Builds a panel from a grid of text cells (`records[r][c]`).
pub fn from_records(records: &[Vec<String>], orientation: Orientation) -> Result<TimeSeriesMatrix> {
    let mut start = 0;
    if let Some(first) = records.first() {
        if first.iter().any(|c| parse_cell(c).is_none()) {
            start = 1;
        }
    }
    let body = &records[start..];
    if body.is_empty() || body[0].is_empty() {
        return Err(Error::Parse { row: start + 1, col: 1, msg: "no numeric data".into() });
    }
    let width = body[0].len();
    let mut complex = false;
    let mut cells = Vec::with_capacity(body.len() * width);
    for (r, rec) in body.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::Parse {
                row: start + r + 1,
                col: rec.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (c, s) in rec.iter().enumerate() {
            let v = parse_cell(s).ok_or_else(|| Error::Parse {
                row: start + r + 1,
                col: c + 1,
                msg: format!("not a number: {s:?}"),
            })?;
            complex |= is_complex_text(s);
            cells.push(v);
        }
    }
    let nrec = body.len();
    let (p, t) = match orientation {
        Orientation::RowsAreTime => (width, nrec),
        Orientation::ColumnsAreTime => (nrec, width),
    };
    let at = |i: usize, j: usize| match orientation {
        Orientation::RowsAreTime => cells[j * width + i],
        Orientation::ColumnsAreTime => cells[i * width + j],
    };
    if complex {
        TimeSeriesMatrix::complex(DMatrix::from_fn(p, t, at))
    } else {
        TimeSeriesMatrix::real(DMatrix::from_fn(p, t, |i, j| at(i, j).re))
    }
}

pub fn parse_csv(text: &str, orientation: Orientation) -> Result<TimeSeriesMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { row: r + 1, col: 1, msg: e.to_string() })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec.iter().map(str::to_string).collect());
    }
    if records.is_empty() {
        return Err(Error::Parse { row: 1, col: 1, msg: "empty file".into() });
    }
    from_records(&records, orientation)
}

/// JSON array of arrays; cells may be numbers or `re+imi` strings.
pub fn parse_json(text: &str, orientation: Orientation) -> Result<TimeSeriesMatrix> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Parse { row: e.line(), col: e.column(), msg: e.to_string() })?;
    let rows = v.as_array().ok_or(Error::Parse { row: 1, col: 1, msg: "expected an array of arrays".into() })?;
    if rows.is_empty() {
        return Err(Error::Parse { row: 1, col: 1, msg: "empty array".into() });
    }
    let mut records = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let cells = row.as_array().ok_or(Error::Parse { row: r + 1, col: 1, msg: "row is not an array".into() })?;
        let mut rec = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            rec.push(match cell {
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::String(s) => s.clone(),
                _ => return Err(Error::Parse { row: r + 1, col: c + 1, msg: "expected a number or string".into() }),
            });
        }
        records.push(rec);
    }
    from_records(&records, orientation)
}

/// Reads a `.json` file as JSON and anything else as CSV.
pub fn ingest(path: &Path, orientation: Orientation) -> Result<TimeSeriesMatrix> {
    let text = std::fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        parse_json(&text, orientation)
    } else {
        parse_csv(&text, orientation)
    }
}

fn format_complex(v: Complex64) -> String {
    let sign = if v.im.is_sign_negative() { '-' } else { '+' };
    format!("{:e}{}{:e}i", v.re, sign, v.im.abs())
}

/// Writes rows-are-time CSV with 17 significant digits, enough to read
/// back every `f64` exactly.
pub fn to_csv(x: &TimeSeriesMatrix) -> String {
    let mut out = String::new();
    for t in 0..x.t() {
        let line: Vec<String> = (0..x.p())
            .map(|i| match x {
                TimeSeriesMatrix::Real(m) => format!("{:.16e}", m[(i, t)]),
                TimeSeriesMatrix::Complex(m) => format_complex(m[(i, t)]),
            })
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_cells() {
        assert_eq!(parse_cell("1.5+0.5i"), Some(Complex64::new(1.5, 0.5)));
        assert_eq!(parse_cell("-2-3i"), Some(Complex64::new(-2.0, -3.0)));
        assert_eq!(parse_cell("1e-3+2E+1i"), Some(Complex64::new(1e-3, 20.0)));
        assert_eq!(parse_cell("-i"), Some(Complex64::new(0.0, -1.0)));
        assert_eq!(parse_cell("4i"), Some(Complex64::new(0.0, 4.0)));
        assert_eq!(parse_cell("x"), None);
    }

    #[test]
    fn header_is_skipped_and_shape_follows_orientation() {
        let text = "a,b,c\n1,2,3\n4,5,6\n";
        let x = parse_csv(text, Orientation::RowsAreTime).unwrap();
        assert_eq!((x.p(), x.t()), (3, 2));
        let y = parse_csv(text, Orientation::ColumnsAreTime).unwrap();
        assert_eq!((y.p(), y.t()), (2, 3));
        assert_eq!(y.as_real().unwrap()[(1, 0)], 4.0);
    }

    #[test]
    fn errors_carry_locations() {
        match parse_csv("1,2\n3,x\n", Orientation::RowsAreTime) {
            Err(Error::Parse { row: 2, col: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_csv("1,2\n3\n", Orientation::RowsAreTime) {
            Err(Error::Parse { row: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_csv("", Orientation::RowsAreTime).is_err());
    }

    #[test]
    fn complex_flag() {
        let x = parse_csv("1.5+0.5i,2\n0,1\n", Orientation::RowsAreTime).unwrap();
        assert!(x.is_complex());
    }

    #[test]
    fn json_input() {
        let x = parse_json("[[1, 2.5], [3, \"4\"], [5, 6]]", Orientation::RowsAreTime).unwrap();
        assert_eq!((x.p(), x.t()), (2, 3));
    }

    #[test]
    fn round_trip_is_exact() {
        let m = DMatrix::from_fn(3, 5, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0) * std::f64::consts::PI);
        let x = TimeSeriesMatrix::real(m).unwrap();
        let back = parse_csv(&to_csv(&x), Orientation::RowsAreTime).unwrap();
        assert_eq!(back, x);
        let c = TimeSeriesMatrix::complex(DMatrix::from_fn(2, 3, |i, j| Complex64::new(i as f64 / 3.0, -(j as f64) / 7.0)))
            .unwrap();
        assert_eq!(parse_csv(&to_csv(&c), Orientation::RowsAreTime).unwrap(), c);
    }
}
