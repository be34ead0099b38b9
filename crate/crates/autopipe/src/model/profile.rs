//! Deterministic per-file data profiling: schema, statistics, and a
//! template-generated summary. No model calls happen here.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{load_input, LoadedFile};
use super::table::Table;
use super::value::{Dtype, Value};
use super::ModelError;

/// The user's goal plus the ordered input files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub goal: String,
    pub inputs: Vec<PathBuf>,
}

impl TaskSpec {
    pub fn new(goal: impl Into<String>, inputs: Vec<PathBuf>) -> Self {
        TaskSpec {
            goal: goal.into(),
            inputs,
        }
    }

    /// Checks the TaskSpec invariants: non-empty goal, at least one input,
    /// and every input path present on disk.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.goal.trim().is_empty() {
            return Err(ModelError::InvalidTask("goal is empty".into()));
        }
        if self.inputs.is_empty() {
            return Err(ModelError::InvalidTask("no input files given".into()));
        }
        for p in &self.inputs {
            if !p.exists() {
                return Err(ModelError::InvalidTask(format!(
                    "input file not found: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

pub const SAMPLE_VALUE_CAP: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub inferred_type: Dtype,
    pub null_rate: f64,
    pub distinct_count: usize,
    pub min: Option<String>,
    pub max: Option<String>,
    pub sample_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileProfile {
    pub path: PathBuf,
    pub row_count: usize,
    pub has_header: bool,
    pub zero_byte_warning: bool,
    pub columns: Vec<ColumnProfile>,
    pub summary: String,
}

/// One profile per input file, in task order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DataProfile {
    pub files: Vec<FileProfile>,
}

impl DataProfile {
    /// All column names across files, in order, deduplicated.
    pub fn all_column_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in &self.files {
            for c in &f.columns {
                if !out.contains(&c.name) {
                    out.push(c.name.clone());
                }
            }
        }
        out
    }

    pub fn combined_summary(&self) -> String {
        self.files
            .iter()
            .map(|f| f.summary.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Profile every input file. Pure in the file bytes: identical bytes produce
/// identical profiles. Unreadable files are fatal; zero-byte files profile as
/// empty with a warning flag.
pub fn profile_inputs(task: &TaskSpec) -> Result<(DataProfile, Vec<(String, Table)>), ModelError> {
    task.validate()?;
    let mut files = Vec::new();
    let mut tables = Vec::new();
    for path in &task.inputs {
        let loaded = load_input(path)?;
        let profile = profile_file(path, &loaded);
        tables.push((input_name(path), loaded.table));
        files.push(profile);
    }
    Ok((DataProfile { files }, tables))
}

/// Stable logical name for an input file: the file stem.
pub fn input_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn profile_file(path: &Path, loaded: &LoadedFile) -> FileProfile {
    let table = &loaded.table;
    let rows = table.row_count();
    let columns: Vec<ColumnProfile> = table
        .columns
        .iter()
        .map(|col| {
            let nulls = col.values.iter().filter(|v| v.is_null()).count();
            let null_rate = if rows == 0 { 0.0 } else { nulls as f64 / rows as f64 };
            let (min, max) = min_max(col.dtype, &col.values);
            let mut samples = Vec::new();
            for v in &col.values {
                if v.is_null() {
                    continue;
                }
                let r = v.render();
                if !samples.contains(&r) {
                    samples.push(r);
                    if samples.len() == SAMPLE_VALUE_CAP {
                        break;
                    }
                }
            }
            ColumnProfile {
                name: col.name.clone(),
                inferred_type: col.dtype,
                null_rate,
                distinct_count: table.distinct_count(col),
                min,
                max,
                sample_values: samples,
            }
        })
        .collect();
    let mut profile = FileProfile {
        path: path.to_path_buf(),
        row_count: rows,
        has_header: loaded.has_header,
        zero_byte_warning: loaded.zero_byte,
        columns,
        summary: String::new(),
    };
    profile.summary = render_summary(&profile);
    profile
}

fn min_max(dtype: Dtype, values: &[Value]) -> (Option<String>, Option<String>) {
    match dtype {
        Dtype::Integer | Dtype::Real => {
            let nums: Vec<f64> = values.iter().filter_map(Value::as_f64).collect();
            if nums.is_empty() {
                (None, None)
            } else {
                let min = nums.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = nums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (
                    Some(Value::Real(min).render()),
                    Some(Value::Real(max).render()),
                )
            }
        }
        Dtype::Datetime => {
            let mut dts: Vec<&chrono::NaiveDateTime> = values
                .iter()
                .filter_map(|v| match v {
                    Value::Datetime(d) => Some(d),
                    _ => None,
                })
                .collect();
            dts.sort();
            (
                dts.first().map(|d| Value::Datetime(**d).render()),
                dts.last().map(|d| Value::Datetime(**d).render()),
            )
        }
        _ => (None, None),
    }
}

/// Fixed-template natural-language summary over the computed statistics.
fn render_summary(p: &FileProfile) -> String {
    let name = p
        .path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.path.display().to_string());
    if p.zero_byte_warning {
        return format!("File {name} is empty (0 bytes); no rows or columns profiled.");
    }
    let mut s = format!(
        "File {name}: {} rows, {} columns, {}.",
        p.row_count,
        p.columns.len(),
        if p.has_header {
            "header present"
        } else {
            "no header (synthetic column names)"
        }
    );
    for c in &p.columns {
        let _ = write!(
            s,
            " Column {} ({}): {:.1}% null, {} distinct",
            c.name,
            c.inferred_type,
            c.null_rate * 100.0,
            c.distinct_count
        );
        if let (Some(min), Some(max)) = (&c.min, &c.max) {
            let _ = write!(s, ", range {min}..{max}");
        }
        s.push('.');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn task_with(content: &str) -> (tempfile::TempDir, TaskSpec) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::File::create(&path)
            .unwrap()
            .write_all(content.as_bytes())
            .unwrap();
        let task = TaskSpec::new("profile it", vec![path]);
        (dir, task)
    }

    #[test]
    fn null_rate_direct_count() {
        // 3-row file, one null in column a.
        let (_d, task) = task_with("a,b\n1,x\n,y\n3,z\n");
        let (profile, _) = profile_inputs(&task).unwrap();
        let a = &profile.files[0].columns[0];
        assert!((a.null_rate - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn profiling_is_pure_in_file_bytes() {
        let (_d, task) = task_with("a,b\n1,x\n2,y\n");
        let (p1, _) = profile_inputs(&task).unwrap();
        let (p2, _) = profile_inputs(&task).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn wide_file_keeps_every_column() {
        let header: Vec<String> = (0..200).map(|i| format!("col{i}")).collect();
        let row: Vec<String> = (0..200).map(|i| i.to_string()).collect();
        let content = format!("{}\n{}\n", header.join(","), row.join(","));
        let (_d, task) = task_with(&content);
        let (profile, _) = profile_inputs(&task).unwrap();
        assert_eq!(profile.files[0].columns.len(), 200);
    }

    #[test]
    fn missing_input_is_fatal() {
        let task = TaskSpec::new("x", vec![PathBuf::from("/nonexistent/file.csv")]);
        assert!(profile_inputs(&task).is_err());
    }

    #[test]
    fn zero_byte_profile_flagged() {
        let (_d, task) = task_with("");
        let (profile, _) = profile_inputs(&task).unwrap();
        assert!(profile.files[0].zero_byte_warning);
        assert_eq!(profile.files[0].row_count, 0);
        assert!(profile.files[0].summary.contains("empty"));
    }
}
