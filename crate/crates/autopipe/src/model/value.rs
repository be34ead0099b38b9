//! Cell values and column types for in-memory tables.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

/// Column type as inferred from data or declared in a schema sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Integer,
    Real,
    Text,
    Boolean,
    Datetime,
    Unknown,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::Integer => "integer",
            Dtype::Real => "real",
            Dtype::Text => "text",
            Dtype::Boolean => "boolean",
            Dtype::Datetime => "datetime",
            Dtype::Unknown => "unknown",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, Dtype::Integer | Dtype::Real)
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A single table cell. `Null` stands for a missing value regardless of the
/// column's dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Text(String),
    Bool(bool),
    Datetime(NaiveDateTime),
    Null,
}

const DATETIME_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d",
    "%Y/%m/%d",
];

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn dtype(&self) -> Option<Dtype> {
        match self {
            Value::Int(_) => Some(Dtype::Integer),
            Value::Real(_) => Some(Dtype::Real),
            Value::Text(_) => Some(Dtype::Text),
            Value::Bool(_) => Some(Dtype::Boolean),
            Value::Datetime(_) => Some(Dtype::Datetime),
            Value::Null => None,
        }
    }

    /// Numeric view used by range constraints and min/max statistics.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Real(v) => Some(*v),
            _ => None,
        }
    }

    /// Canonical text rendering. Round-trips through `parse_as` for every
    /// dtype; `Null` renders as the empty string.
    pub fn render(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Real(v) => render_real(*v),
            Value::Text(v) => v.clone(),
            Value::Bool(v) => v.to_string(),
            Value::Datetime(v) => v.format("%Y-%m-%d %H:%M:%S").to_string(),
            Value::Null => String::new(),
        }
    }

    /// Parse raw cell text under a target dtype. Empty text is `Null`; text
    /// that does not parse under the dtype is coerced to `Null`.
    pub fn parse_as(raw: &str, dtype: Dtype) -> Value {
        let raw = raw.trim();
        if raw.is_empty() {
            return Value::Null;
        }
        match dtype {
            Dtype::Integer => raw.parse::<i64>().map(Value::Int).unwrap_or(Value::Null),
            Dtype::Real => raw.parse::<f64>().map(Value::Real).unwrap_or(Value::Null),
            Dtype::Text => Value::Text(raw.to_string()),
            Dtype::Boolean => match raw.to_ascii_lowercase().as_str() {
                "true" | "1" => Value::Bool(true),
                "false" | "0" => Value::Bool(false),
                _ => Value::Null,
            },
            Dtype::Datetime => parse_datetime(raw).map(Value::Datetime).unwrap_or(Value::Null),
            Dtype::Unknown => Value::Null,
        }
    }

    /// Best-guess dtype of a raw cell, used during type inference.
    /// Boolean is only claimed for literal true/false to keep 0/1 integer.
    pub fn sniff(raw: &str) -> Option<Dtype> {
        let raw = raw.trim();
        if raw.is_empty() {
            return None;
        }
        if raw.parse::<i64>().is_ok() {
            return Some(Dtype::Integer);
        }
        if raw.parse::<f64>().is_ok() {
            return Some(Dtype::Real);
        }
        let lower = raw.to_ascii_lowercase();
        if lower == "true" || lower == "false" {
            return Some(Dtype::Boolean);
        }
        if parse_datetime(raw).is_some() {
            return Some(Dtype::Datetime);
        }
        Some(Dtype::Text)
    }
}

fn parse_datetime(raw: &str) -> Option<NaiveDateTime> {
    for fmt in DATETIME_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt);
        }
        if let Ok(d) = chrono::NaiveDate::parse_from_str(raw, fmt) {
            return Some(d.and_hms_opt(0, 0, 0).unwrap());
        }
    }
    None
}

/// Shortest round-trip decimal rendering, with a trailing `.0` for integral
/// values so real columns stay visibly real.
fn render_real(v: f64) -> String {
    if v.is_nan() {
        return String::new();
    }
    let s = format!("{v}");
    if v.is_finite() && !s.contains('.') && !s.contains('e') && !s.contains('E') {
        format!("{s}.0")
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let cases = [
            (Value::Int(-42), Dtype::Integer),
            (Value::Real(0.1), Dtype::Real),
            (Value::Real(3.0), Dtype::Real),
            (Value::Text("hello, world".into()), Dtype::Text),
            (Value::Bool(true), Dtype::Boolean),
        ];
        for (v, dt) in cases {
            assert_eq!(Value::parse_as(&v.render(), dt), v);
        }
    }

    #[test]
    fn sniff_prefers_integer_over_real() {
        assert_eq!(Value::sniff("12"), Some(Dtype::Integer));
        assert_eq!(Value::sniff("12.5"), Some(Dtype::Real));
        assert_eq!(Value::sniff("2021-03-01"), Some(Dtype::Datetime));
        assert_eq!(Value::sniff("abc"), Some(Dtype::Text));
        assert_eq!(Value::sniff(""), None);
    }

    #[test]
    fn unparseable_cells_coerce_to_null() {
        assert_eq!(Value::parse_as("n/a", Dtype::Integer), Value::Null);
        assert_eq!(Value::parse_as("", Dtype::Text), Value::Null);
    }
}
