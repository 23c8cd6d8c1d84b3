//! Deterministic CSV and JSON output.
//!
//! Floats are rounded to 12 significant digits before serialization so that
//! repeated runs give byte-identical files.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::Result;
use crate::semigroup::PopulationDensity;

pub const SCHEMA_VERSION: u32 = 1;

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn round_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round12(n.as_f64().unwrap());
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_value).collect()),
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, round_value(v))).collect())
        }
        other => other,
    }
}

/// Serializes `payload` with rounded floats and `schema_version` first.
pub fn to_json<T: Serialize>(kind: &str, payload: &T) -> Result<String> {
    let body = serde_json::to_value(payload).map_err(|e| crate::Error::Config(e.to_string()))?;
    let mut map = Map::new();
    map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    map.insert("kind".into(), Value::from(kind));
    match round_value(body) {
        Value::Object(fields) => map.extend(fields),
        other => {
            map.insert("data".into(), other);
        }
    }
    Ok(serde_json::to_string(&Value::Object(map)).expect("JSON values serialize"))
}

/// `{:.11e}`-style fixed 12-digit text for CSV cells.
pub fn fmt12(x: f64) -> String {
    let r = round12(x);
    if r.is_finite() {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

/// Writes a header row followed by one record per row.
pub fn write_csv<W: Write>(out: &mut W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for row in rows {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            write!(line, "{}", fmt12(*v)).unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Rows `(age, component, value)` for a density.
pub fn density_rows(phi: &PopulationDensity) -> Vec<Vec<f64>> {
    phi.grid()
        .nodes()
        .iter()
        .zip(phi.values())
        .flat_map(|(&a, v)| {
            v.iter()
                .enumerate()
                .map(move |(i, &x)| vec![a, i as f64, x])
        })
        .collect()
}
