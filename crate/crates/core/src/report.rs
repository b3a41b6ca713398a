//! Typed result tables and their CSV / JSON serializations.
//!
//! Every file starts with the provenance of the run that produced it: a
//! `# provenance: {…}` comment line in CSV, a `provenance` member in JSON.
//! Missing values are empty CSV fields and absent JSON members.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Int,
    Float,
    Bool,
    Text,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Missing,
}

impl Cell {
    fn fits(&self, kind: ColumnKind) -> bool {
        matches!(
            (self, kind),
            (Cell::Missing, _)
                | (Cell::Int(_), ColumnKind::Int)
                | (Cell::Float(_), ColumnKind::Float)
                | (Cell::Bool(_), ColumnKind::Bool)
                | (Cell::Text(_), ColumnKind::Text)
        )
    }

    fn to_field(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            // Debug is the shortest representation that parses back to the same bits
            Cell::Float(v) => format!("{v:?}"),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(v) => v.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn parse(field: &str, kind: ColumnKind) -> Result<Self> {
        if field.is_empty() {
            return Ok(Cell::Missing);
        }
        let bad = |e: &dyn std::fmt::Display| Error::Serialization(format!("bad {kind:?} field {field:?}: {e}"));
        Ok(match kind {
            ColumnKind::Int => Cell::Int(field.parse().map_err(|e| bad(&e))?),
            ColumnKind::Float => Cell::Float(field.parse().map_err(|e| bad(&e))?),
            ColumnKind::Bool => Cell::Bool(field.parse().map_err(|e| bad(&e))?),
            ColumnKind::Text => Cell::Text(field.to_string()),
        })
    }

    fn to_json(&self) -> Option<Value> {
        match self {
            Cell::Int(v) => Some(Value::from(*v)),
            Cell::Float(v) => Some(Value::from(*v)),
            Cell::Bool(v) => Some(Value::from(*v)),
            Cell::Text(v) => Some(Value::from(v.as_str())),
            Cell::Missing => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl<C: Into<Cell>> From<Option<C>> for Cell {
    fn from(v: Option<C>) -> Self {
        v.map_or(Cell::Missing, Into::into)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[(&str, ColumnKind)]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns
                .iter()
                .map(|&(n, kind)| Column { name: n.to_string(), kind })
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidArgument(format!(
                "row has {} cells, table {} has {} columns",
                row.len(),
                self.name,
                self.columns.len()
            )));
        }
        if let Some((cell, col)) = row.iter().zip(&self.columns).find(|(c, col)| !c.fits(col.kind)) {
            return Err(Error::InvalidArgument(format!("{cell:?} does not fit column {}", col.name)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| c.name == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut out: W, provenance: &Value) -> Result<()> {
        let ser = |e: &dyn std::fmt::Display| Error::Serialization(e.to_string());
        writeln!(out, "# provenance: {provenance}").map_err(|e| ser(&e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns.iter().map(|c| &c.name)).map_err(|e| ser(&e))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_field)).map_err(|e| ser(&e))?;
        }
        w.flush().map_err(|e| ser(&e))
    }

    /// Parses CSV written by [`Table::write_csv`] back into a table with the
    /// given column layout. Comment lines are skipped.
    pub fn read_csv<R: Read>(name: &str, columns: &[Column], input: R) -> Result<Self> {
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header: Vec<String> = r.headers().map_err(ser)?.iter().map(str::to_string).collect();
        let expected: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
        if header != expected {
            return Err(Error::Serialization(format!("header {header:?} does not match {expected:?}")));
        }
        let mut table = Table {
            name: name.to_string(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        };
        for record in r.records() {
            let record = record.map_err(ser)?;
            let row = record
                .iter()
                .zip(columns)
                .map(|(f, c)| Cell::parse(f, c.kind))
                .collect::<Result<Vec<_>>>()?;
            table.push(row)?;
        }
        Ok(table)
    }

    pub fn to_json(&self, provenance: &Value) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .filter_map(|(c, cell)| Some((c.name.clone(), cell.to_json()?)))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        serde_json::json!({
            "table": self.name,
            "provenance": provenance,
            "columns": self.columns,
            "rows": rows,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

/// Writes each table to `dir/<name>.<ext>` and returns the paths written.
pub fn emit_report(tables: &[Table], dir: &Path, format: ReportFormat, provenance: &Value) -> Result<Vec<PathBuf>> {
    if tables.is_empty() {
        return Err(Error::InvalidArgument("no tables to write".into()));
    }
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::with_capacity(tables.len());
    for t in tables {
        let path = dir.join(format!("{}.{}", t.name, format.extension()));
        let mut bytes = Vec::new();
        match format {
            ReportFormat::Csv => t.write_csv(&mut bytes, provenance)?,
            ReportFormat::Json => {
                serde_json::to_writer_pretty(&mut bytes, &t.to_json(provenance))
                    .map_err(|e| Error::Serialization(e.to_string()))?;
                bytes.push(b'\n');
            }
        }
        fs::write(&path, bytes).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        paths.push(path);
    }
    Ok(paths)
}
