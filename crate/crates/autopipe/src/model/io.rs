//! Input file loading: delimiter auto-detection, fixed-width numeric files,
//! header detection, and majority-vote type inference.

use std::path::Path;

use super::table::{Column, Table};
use super::value::{Dtype, Value};
use super::ModelError;

/// Rows considered by the majority-vote type inference.
const TYPE_VOTE_ROWS: usize = 1000;
/// Rows 2..=11 vote on the column type used by the header heuristic.
const HEADER_PROBE_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Comma,
    Tab,
    /// Whitespace-separated fixed-width style (common for instrument dumps).
    Whitespace,
}

/// A parsed input file plus the loading decisions made along the way.
#[derive(Debug, Clone)]
pub struct LoadedFile {
    pub table: Table,
    pub has_header: bool,
    pub layout: Layout,
    pub zero_byte: bool,
}

pub fn load_input(path: &Path) -> Result<LoadedFile, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
    if bytes.is_empty() {
        return Ok(LoadedFile {
            table: Table::default(),
            has_header: false,
            layout: Layout::Comma,
            zero_byte: true,
        });
    }
    let text = String::from_utf8_lossy(&bytes);
    let layout = detect_layout(&text);
    let raw_rows = split_rows(&text, layout);
    if raw_rows.is_empty() {
        return Ok(LoadedFile {
            table: Table::default(),
            has_header: false,
            layout,
            zero_byte: false,
        });
    }
    let width = raw_rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let has_header = detect_header(&raw_rows, width);
    let (names, data_rows) = if has_header {
        let names = raw_rows[0]
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let h = h.trim();
                if h.is_empty() {
                    format!("c{i}")
                } else {
                    h.to_string()
                }
            })
            .collect::<Vec<_>>();
        (names, &raw_rows[1..])
    } else {
        ((0..width).map(|i| format!("c{i}")).collect(), &raw_rows[..])
    };

    let mut columns = Vec::with_capacity(width);
    for (i, name) in names.iter().enumerate() {
        let dtype = infer_dtype(data_rows, i);
        let values = data_rows
            .iter()
            .map(|row| Value::parse_as(row.get(i).map(String::as_str).unwrap_or(""), dtype))
            .collect();
        columns.push(Column {
            name: name.clone(),
            dtype,
            values,
        });
    }
    Ok(LoadedFile {
        table: Table::new(columns),
        has_header,
        layout,
        zero_byte: false,
    })
}

fn detect_layout(text: &str) -> Layout {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.contains('\t') {
        Layout::Tab
    } else if first.contains(',') {
        Layout::Comma
    } else {
        Layout::Whitespace
    }
}

fn split_rows(text: &str, layout: Layout) -> Vec<Vec<String>> {
    match layout {
        Layout::Whitespace => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect(),
        Layout::Comma | Layout::Tab => {
            let delim = if layout == Layout::Tab { b'\t' } else { b',' };
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .delimiter(delim)
                .from_reader(text.as_bytes());
            reader
                .records()
                .filter_map(|r| r.ok())
                .map(|r| r.iter().map(str::to_string).collect::<Vec<_>>())
                .filter(|r: &Vec<String>| !r.iter().all(|c| c.trim().is_empty()))
                .collect()
        }
    }
}

/// A file is headerless when every first-row cell parses as a number under
/// the majority type of the next ten rows. With a single row, numeric cells
/// alone decide.
fn detect_header(rows: &[Vec<String>], width: usize) -> bool {
    let first = &rows[0];
    if first.len() < width {
        return true; // ragged first row reads as a header with blanks
    }
    for i in 0..width {
        let probe_type = majority_numeric_type(&rows[1..], i);
        let cell = first.get(i).map(String::as_str).unwrap_or("");
        let numeric_ok = match probe_type {
            Some(Dtype::Integer) => !Value::parse_as(cell, Dtype::Integer).is_null(),
            Some(Dtype::Real) => !Value::parse_as(cell, Dtype::Real).is_null(),
            Some(_) => false,
            // No probe rows: fall back to "does it look numeric at all".
            None => cell.trim().parse::<f64>().is_ok(),
        };
        if !numeric_ok {
            return true;
        }
    }
    false
}

fn majority_numeric_type(rows: &[Vec<String>], col: usize) -> Option<Dtype> {
    let mut ints = 0usize;
    let mut reals = 0usize;
    let mut others = 0usize;
    for row in rows.iter().take(HEADER_PROBE_ROWS) {
        match Value::sniff(row.get(col).map(String::as_str).unwrap_or("")) {
            Some(Dtype::Integer) => ints += 1,
            Some(Dtype::Real) => reals += 1,
            Some(_) => others += 1,
            None => {}
        }
    }
    if ints + reals + others == 0 {
        None
    } else if ints >= reals && ints > others {
        Some(Dtype::Integer)
    } else if reals > others {
        Some(Dtype::Real)
    } else {
        Some(Dtype::Text)
    }
}

/// Majority vote over the first 1,000 data rows; ties resolve toward text.
/// Integer votes widen to real when both appear.
fn infer_dtype(rows: &[Vec<String>], col: usize) -> Dtype {
    let mut counts: std::collections::BTreeMap<&'static str, usize> = Default::default();
    let mut seen = 0usize;
    for row in rows.iter().take(TYPE_VOTE_ROWS) {
        if let Some(dt) = Value::sniff(row.get(col).map(String::as_str).unwrap_or("")) {
            *counts.entry(dt.name()).or_default() += 1;
            seen += 1;
        }
    }
    if seen == 0 {
        return Dtype::Unknown;
    }
    // Integer + real mixtures are real columns, not ties.
    let ints = counts.get("integer").copied().unwrap_or(0);
    let reals = counts.get("real").copied().unwrap_or(0);
    if reals > 0 && ints > 0 {
        counts.insert("real", ints + reals);
        counts.remove("integer");
    }
    let max = counts.values().copied().max().unwrap_or(0);
    let winners: Vec<&str> = counts
        .iter()
        .filter(|(_, &v)| v == max)
        .map(|(k, _)| *k)
        .collect();
    if winners.len() != 1 {
        return Dtype::Text;
    }
    match winners[0] {
        "integer" => Dtype::Integer,
        "real" => Dtype::Real,
        "boolean" => Dtype::Boolean,
        "datetime" => Dtype::Datetime,
        _ => Dtype::Text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("input.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn headered_csv_detected() {
        let (_d, p) = write_temp("year,kp\n2003,4\n2003,5\n");
        let loaded = load_input(&p).unwrap();
        assert!(loaded.has_header);
        assert_eq!(loaded.table.column_names(), vec!["year", "kp"]);
        assert_eq!(loaded.table.column("year").unwrap().dtype, Dtype::Integer);
    }

    #[test]
    fn headerless_numeric_whitespace_file() {
        let (_d, p) = write_temp("2003 12 0 37\n2003 12 1 40\n2003 12 2 33\n");
        let loaded = load_input(&p).unwrap();
        assert!(!loaded.has_header);
        assert_eq!(loaded.layout, Layout::Whitespace);
        assert_eq!(loaded.table.column_names(), vec!["c0", "c1", "c2", "c3"]);
    }

    #[test]
    fn zero_byte_file_flagged() {
        let (_d, p) = write_temp("");
        let loaded = load_input(&p).unwrap();
        assert!(loaded.zero_byte);
        assert_eq!(loaded.table.row_count(), 0);
    }

    #[test]
    fn mixed_int_real_column_widens_to_real() {
        let (_d, p) = write_temp("a\n1\n2.5\n3\n");
        let loaded = load_input(&p).unwrap();
        assert_eq!(loaded.table.column("a").unwrap().dtype, Dtype::Real);
    }

    #[test]
    fn tab_delimited_detected() {
        let (_d, p) = write_temp("x\ty\n1\tfoo\n2\tbar\n");
        let loaded = load_input(&p).unwrap();
        assert_eq!(loaded.layout, Layout::Tab);
        assert!(loaded.has_header);
    }
}
