//! File formats: JSON with 17 significant digits and numeric CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};

use crate::error::{CliError, CliResult};

/// Writes every float as `d.dddddddddddddddde±x` (17 significant digits).
#[derive(Debug, Default, Clone)]
pub struct ExactFloatFormatter {
    pretty: serde_json::ser::PrettyFormatter<'static>,
}

impl Formatter for ExactFloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{}", fmt_f64(value))
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, ExactFloatFormatter::default());
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Data(format!("JSON serialisation failed: {e}")))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| CliError::Data(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, to_json(value)?).map_err(|e| CliError::io(path, e))
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes a header and rows of already formatted cells.
pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Parses a numeric table. A first row containing any non-numeric cell is
/// taken as a header. Errors name 1-based line and column.
pub fn parse_numeric_csv(text: &str) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("malformed CSV: {e}")))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: Vec<Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if i == 0 && parsed.iter().any(|r| r.is_err()) {
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(CliError::Data(format!(
                "ragged row at line {line}: {} columns, expected {expected}",
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, (cell, value)) in record.iter().zip(parsed).enumerate() {
            match value {
                Ok(v) if v.is_finite() => row.push(v),
                Ok(_) => {
                    return Err(CliError::Data(format!("non-finite value '{cell}' at line {line}, column {}", j + 1)))
                }
                Err(_) => {
                    return Err(CliError::Data(format!("non-numeric cell '{cell}' at line {line}, column {}", j + 1)))
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Data("input contains no numeric rows".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        let v: f64 = "1.0000000000000001e-1".parse().unwrap();
        assert_eq!(v, 0.1);
        let json = to_json(&serde_json::json!({"a": [0.5, 3]})).unwrap();
        let back: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(back["a"][0].as_f64(), Some(0.5));
        assert!(json.contains("5.0000000000000000e-1"));
    }

    #[test]
    fn csv_header_and_errors() {
        assert_eq!(parse_numeric_csv("a,b\n1,2\n3,4\n").unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(parse_numeric_csv("1,2\n3,4").unwrap().len(), 2);
        let ragged = parse_numeric_csv("1,2\n3\n").unwrap_err().to_string();
        assert!(ragged.contains("line 2"), "{ragged}");
        let text = parse_numeric_csv("1,2\n3,x\n").unwrap_err().to_string();
        assert!(text.contains("line 2, column 2"), "{text}");
        let nan = parse_numeric_csv("1,2\nNaN,1\n").unwrap_err().to_string();
        assert!(nan.contains("line 2, column 1"), "{nan}");
    }
}
