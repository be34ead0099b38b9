//! Columnar in-memory table with a canonical delimited-text serialization.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::value::{Dtype, Value};
use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub dtype: Dtype,
    pub values: Vec<Value>,
}

/// An in-memory table. Columns share one row count; cells may be `Null`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<Column>,
}

/// Sidecar schema record persisted next to every checkpointed table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSchema>,
    pub row_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub dtype: Dtype,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Self {
        Table { columns }
    }

    pub fn row_count(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn schema(&self) -> TableSchema {
        TableSchema {
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSchema {
                    name: c.name.clone(),
                    dtype: c.dtype,
                })
                .collect(),
            row_count: self.row_count(),
        }
    }

    /// `(name, dtype)` pairs in column order; the unit the validation critic
    /// compares across sampling levels.
    pub fn fingerprint(&self) -> Vec<(String, String)> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.dtype.name().to_string()))
            .collect()
    }

    /// Fraction of null cells per column, keyed by column name.
    pub fn null_rates(&self) -> std::collections::BTreeMap<String, f64> {
        let rows = self.row_count();
        self.columns
            .iter()
            .map(|c| {
                let nulls = c.values.iter().filter(|v| v.is_null()).count();
                let rate = if rows == 0 { 0.0 } else { nulls as f64 / rows as f64 };
                (c.name.clone(), rate)
            })
            .collect()
    }

    /// Select a subset of rows by index, preserving order.
    pub fn take_rows(&self, indices: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                dtype: c.dtype,
                values: indices.iter().map(|&i| c.values[i].clone()).collect(),
            })
            .collect();
        Table { columns }
    }

    /// Canonical CSV bytes: header row plus one canonical-rendered record per
    /// row. Identical tables always produce identical bytes.
    pub fn to_canonical_csv(&self) -> Vec<u8> {
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        writer
            .write_record(self.columns.iter().map(|c| c.name.as_str()))
            .expect("in-memory csv write");
        for row in 0..self.row_count() {
            let record: Vec<String> = self.columns.iter().map(|c| c.values[row].render()).collect();
            writer.write_record(&record).expect("in-memory csv write");
        }
        writer.into_inner().expect("in-memory csv flush")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = self.to_canonical_csv();
        let mut f = std::fs::File::create(path).map_err(|e| ModelError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| ModelError::io(path, e))?;
        Ok(())
    }

    /// Read a headered CSV, typing each column per `schema`. Columns missing
    /// from the schema fall back to text.
    pub fn read_csv_with_schema(path: &Path, schema: &TableSchema) -> Result<Table, ModelError> {
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| ModelError::Csv {
                path: path.display().to_string(),
                source: e,
            })?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| ModelError::Csv {
                path: path.display().to_string(),
                source: e,
            })?
            .iter()
            .map(|s| s.to_string())
            .collect();
        let dtypes: Vec<Dtype> = headers
            .iter()
            .map(|h| {
                schema
                    .columns
                    .iter()
                    .find(|c| &c.name == h)
                    .map_or(Dtype::Text, |c| c.dtype)
            })
            .collect();
        let mut columns: Vec<Column> = headers
            .iter()
            .zip(&dtypes)
            .map(|(name, dtype)| Column {
                name: name.clone(),
                dtype: *dtype,
                values: Vec::new(),
            })
            .collect();
        for record in reader.records() {
            let record = record.map_err(|e| ModelError::Csv {
                path: path.display().to_string(),
                source: e,
            })?;
            for (i, col) in columns.iter_mut().enumerate() {
                let raw = record.get(i).unwrap_or("");
                col.values.push(Value::parse_as(raw, col.dtype));
            }
        }
        Ok(Table { columns })
    }

    /// Number of distinct non-null rendered values in a column.
    pub fn distinct_count(&self, col: &Column) -> usize {
        let mut seen = BTreeSet::new();
        for v in &col.values {
            if !v.is_null() {
                seen.insert(v.render());
            }
        }
        seen.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        Table::new(vec![
            Column {
                name: "id".into(),
                dtype: Dtype::Integer,
                values: vec![Value::Int(1), Value::Int(2), Value::Null],
            },
            Column {
                name: "name".into(),
                dtype: Dtype::Text,
                values: vec![
                    Value::Text("a,b".into()),
                    Value::Text("c".into()),
                    Value::Text("c".into()),
                ],
            },
        ])
    }

    #[test]
    fn canonical_csv_round_trip() {
        let t = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.write_csv(&path).unwrap();
        let back = Table::read_csv_with_schema(&path, &t.schema()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_canonical_csv(), t.to_canonical_csv());
    }

    #[test]
    fn null_rates_and_distinct() {
        let t = sample();
        let rates = t.null_rates();
        assert!((rates["id"] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rates["name"], 0.0);
        assert_eq!(t.distinct_count(t.column("name").unwrap()), 2);
    }

    #[test]
    fn take_rows_preserves_order() {
        let t = sample();
        let s = t.take_rows(&[2, 0]);
        assert_eq!(s.row_count(), 2);
        assert_eq!(s.columns[0].values[1], Value::Int(1));
    }
}
