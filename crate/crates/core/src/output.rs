//! CSV emission shared by every exporter.
//!
//! Header row, `,` delimiter, `.` decimal. Floats with `0 < |x| < 1e-3` (or
//! very large ones) use scientific notation, everything else the shortest
//! round-trip decimal form, so output is byte-stable across runs.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    F(f64),
    U(u64),
    I(i64),
    S(String),
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::F(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::U(v as u64)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::S(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::S(v)
    }
}

pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e15) {
        format!("{x:e}")
    } else if x == 0.0 {
        "0".into()
    } else {
        format!("{x}")
    }
}

impl Value {
    fn render(&self, out: &mut String) {
        match self {
            Value::F(x) => out.push_str(&format_float(*x)),
            Value::U(u) => {
                let _ = write!(out, "{u}");
            }
            Value::I(i) => {
                let _ = write!(out, "{i}");
            }
            Value::S(s) => {
                if s.contains([',', '"', '\n']) {
                    out.push('"');
                    out.push_str(&s.replace('"', "\"\""));
                    out.push('"');
                } else {
                    out.push_str(s);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                v.render(&mut out);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.render().as_bytes())?;
        Ok(())
    }

    /// Column schema string recorded in manifests.
    pub fn schema(&self) -> String {
        self.columns.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(-12.25), "-12.25");
        assert_eq!(format_float(1.5e-4), "1.5e-4");
        assert_eq!(format_float(-2e-9), "-2e-9");
        assert_eq!(format_float(0.001), "0.001");
    }

    #[test]
    fn table_render() {
        let mut t = CsvTable::new(&["a", "b", "c"]);
        t.push(vec![Value::U(1), 0.25.into(), "x,y".into()]);
        assert_eq!(t.render(), "a,b,c\n1,0.25,\"x,y\"\n");
    }
}
