//! CSV and JSON file formats.
//!
//! All tables are UTF-8 with LF line endings and a header row. Reals are
//! written with 17 significant digits so that they round-trip exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Points, Result, SeraError};

/// Shortest exact representation is not needed; a fixed 17-digit format
/// keeps files stable across platforms.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header `prefix_1,...,prefix_q,last`.
pub fn coordinate_header(prefix: &str, q: usize, last: &str) -> Vec<String> {
    (1..=q).map(|i| format!("{prefix}_{i}")).chain(std::iter::once(last.to_string())).collect()
}

/// Points with one trailing value column.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTable {
    pub points: Points,
    pub values: Vec<f64>,
}

impl PointTable {
    pub fn new(points: Points, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(SeraError::domain(format!("{} points but {} values", points.len(), values.len())));
        }
        Ok(PointTable { points, values })
    }

    pub fn to_csv_string(&self, prefix: &str, last: &str) -> String {
        let mut out = coordinate_header(prefix, self.points.dim(), last).join(",");
        out.push('\n');
        for (p, v) in self.points.iter().zip(&self.values) {
            for c in p {
                out.push_str(&fmt_real(*c));
                out.push(',');
            }
            out.push_str(&fmt_real(*v));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path, prefix: &str, last: &str) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_csv_string(prefix, last).as_bytes())?;
        Ok(())
    }

    /// Parses a table whose header is `prefix_1..prefix_q,last`.
    pub fn parse_csv(text: &str, prefix: &str, last: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| parse_error(1, e.to_string()))?.clone();
        let cols = header.len();
        if cols < 2 {
            return Err(parse_error(1, "expected at least one coordinate column and a value column"));
        }
        let q = cols - 1;
        let expected = coordinate_header(prefix, q, last);
        if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
            return Err(parse_error(1, format!("header must be `{}`", expected.join(","))));
        }
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                parse_error(line, e.to_string())
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != cols {
                return Err(parse_error(line, format!("expected {cols} fields, found {}", rec.len())));
            }
            for (i, field) in rec.iter().enumerate() {
                let v: f64 =
                    field.trim().parse().map_err(|_| parse_error(line, format!("invalid number `{field}`")))?;
                if !v.is_finite() {
                    return Err(parse_error(line, format!("non-finite value `{field}`")));
                }
                if i < q {
                    coords.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        PointTable::new(Points::new(q, coords)?, values)
    }

    pub fn read_csv(path: &Path, prefix: &str, last: &str) -> Result<Self> {
        Self::parse_csv(&fs::read_to_string(path)?, prefix, last)
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> SeraError {
    SeraError::Parse { line, message: message.into() }
}

/// Sample file: `y_1,...,y_q,value`.
pub fn write_samples(path: &Path, table: &PointTable) -> Result<()> {
    table.write_csv(path, "y", "value")
}

pub fn read_samples(path: &Path) -> Result<PointTable> {
    PointTable::read_csv(path, "y", "value")
}

/// Field dump: `x_1,...,x_q,value`.
pub fn write_field(path: &Path, table: &PointTable) -> Result<()> {
    table.write_csv(path, "x", "value")
}

pub fn read_field(path: &Path) -> Result<PointTable> {
    PointTable::read_csv(path, "x", "value")
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &v in &[0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            let s = fmt_real(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
            let digits = s.split('e').next().unwrap().chars().filter(char::is_ascii_digit).count();
            assert_eq!(digits, 17);
        }
    }

    #[test]
    fn table_round_trip() {
        let pts = Points::new(2, vec![0.1, 0.2, -3.5, 1e-9]).unwrap();
        let t = PointTable::new(pts, vec![1.0 / 7.0, -2.0]).unwrap();
        let s = t.to_csv_string("y", "value");
        assert!(s.starts_with("y_1,y_2,value\n"));
        assert!(!s.contains('\r'));
        assert_eq!(PointTable::parse_csv(&s, "y", "value").unwrap(), t);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "y_1,value\n0.5,1.0\n0.7,abc\n";
        match PointTable::parse_csv(bad, "y", "value") {
            Err(SeraError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let short = "y_1,value\n0.5\n";
        assert!(matches!(PointTable::parse_csv(short, "y", "value"), Err(SeraError::Parse { .. })));
        let header = "x_1,value\n0.5,1\n";
        assert!(matches!(PointTable::parse_csv(header, "y", "value"), Err(SeraError::Parse { line: 1, .. })));
    }
}
