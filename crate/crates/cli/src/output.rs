//! Tables written as CSV or JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::Format;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            // Debug formatting round-trips every f64 exactly.
            Cell::Float(x) => format!("{x:?}"),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => json!(i),
            Cell::Float(x) if x.is_finite() => json!(x),
            Cell::Float(_) => Value::Null,
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<i64> for Cell {
    fn from(i: i64) -> Self {
        Cell::Int(i)
    }
}

impl From<i32> for Cell {
    fn from(i: i32) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Text(b.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.to_string(), v.json()))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        json!({ "columns": self.columns, "rows": rows })
    }
}

/// Everything a task produces.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub tables: Vec<Table>,
    /// Extra JSON documents, always written as JSON.
    pub documents: Vec<(String, Value)>,
    pub summary: Value,
}

impl Artifacts {
    /// Writes every table and document into `dir`; returns the written paths.
    pub fn write(&self, dir: &Path, format: Format) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for table in &self.tables {
            let (path, body) = match format {
                Format::Csv => (dir.join(format!("{}.csv", table.name)), table.to_csv()),
                Format::Json => (
                    dir.join(format!("{}.json", table.name)),
                    pretty(&table.to_json()),
                ),
            };
            fs::write(&path, body)?;
            written.push(path);
        }
        for (name, doc) in &self.documents {
            let path = dir.join(format!("{name}.json"));
            fs::write(&path, pretty(doc))?;
            written.push(path);
        }
        let path = dir.join("summary.json");
        fs::write(&path, pretty(&self.summary))?;
        written.push(path);
        Ok(written)
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_rendering() {
        let mut t = Table::new("x", &["m", "value", "note"]);
        t.push(vec![Cell::from(-3), Cell::from(0.1), Cell::from("a")]);
        t.push(vec![
            Cell::from(2usize),
            Cell::from(f64::NAN),
            Cell::from(true),
        ]);
        assert_eq!(t.to_csv(), "m,value,note\n-3,0.1,a\n2,NaN,true\n");
        let j = t.to_json();
        assert_eq!(j["rows"][0]["value"], json!(0.1));
        assert!(j["rows"][1]["value"].is_null());
    }
}
