//! Tabular output as CSV or JSON.
//!
//! CSV files start with a `# schema: <name>` comment naming the column
//! layout; JSON output is an object `{"schema": ..., "rows": [...]}`.
//! Numbers are printed with 9 significant digits.

use std::io::Write;

use serde_json::{Map, Value};

use crate::error::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    /// Written as `a;b;c` in CSV and as an array in JSON.
    List(Vec<f64>),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<Vec<f64>> for Cell {
    fn from(x: Vec<f64>) -> Self {
        Cell::List(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

/// `%.9g`-style formatting.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-5..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (8 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Vector as `a;b;c`.
pub fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(";")
}

/// JSON number rounded to 9 significant digits; non-finite values become
/// strings.
pub fn json_num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::String(fmt_num(x));
    }
    fmt_num(x)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or(Value::Null, Value::Number)
}

fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => json_num(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Num(x) => fmt_num(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::List(xs) => fmt_list(xs),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => json_num(*x),
            Cell::List(xs) => Value::Array(xs.iter().map(|&x| json_num(x)).collect()),
            Cell::Int(i) => Value::from(*i),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Empty => Value::Null,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub schema: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    /// Extra named values: JSON fields, or `# key: value` lines in CSV.
    pub meta: Vec<(&'static str, Value)>,
}

impl Table {
    pub fn new(schema: &'static str, columns: &[&'static str]) -> Self {
        Table {
            schema,
            columns: columns.to_vec(),
            rows: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &'static str, value: impl Into<Value>) {
        self.meta.push((key, round_json(value.into())));
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_json(&self) -> Value {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut m = Map::new();
                for (c, v) in self.columns.iter().zip(r) {
                    m.insert((*c).to_string(), v.json());
                }
                Value::Object(m)
            })
            .collect();
        let mut m = Map::new();
        m.insert("schema".into(), Value::String(self.schema.into()));
        for (k, v) in &self.meta {
            m.insert((*k).to_string(), v.clone());
        }
        m.insert("rows".into(), Value::Array(rows));
        Value::Object(m)
    }

    pub fn write<W: Write>(&self, format: Format, mut out: W) -> CliResult<()> {
        match format {
            Format::Csv => {
                writeln!(out, "# schema: {}", self.schema)?;
                for (k, v) in &self.meta {
                    match v {
                        Value::Number(n) if n.is_f64() => writeln!(out, "# {k}: {}", fmt_num(n.as_f64().unwrap()))?,
                        Value::String(s) => writeln!(out, "# {k}: {s}")?,
                        other => writeln!(out, "# {k}: {other}")?,
                    }
                }
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&self.columns).map_err(csv_err)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(Cell::text)).map_err(csv_err)?;
                }
                w.flush()?;
            }
            Format::Json => {
                serde_json::to_writer_pretty(&mut out, &self.to_json()).map_err(std::io::Error::from)?;
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::error::CliError {
    std::io::Error::from(e).into()
}
