//! Isolated execution of generated stage programs. Each run gets a fresh
//! interpreter process with a restricted namespace, deep-copied inputs, a
//! killable wall-clock limit, and resource tracking.

use std::io::Read;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::table::Table;

const RUNNER_SRC: &str = include_str!("runner.py");

/// Startup allowance on top of the stage wall clock before the process is
/// hard-killed (interpreter boot, library import, table serialization).
pub const HARD_KILL_GRACE_S: f64 = 20.0;

/// Bound on `elapsed_s - wall_clock_s` for timed-out stages.
pub const SCHEDULING_SLACK_S: f64 = HARD_KILL_GRACE_S;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub wall_clock_s: f64,
    pub memory_bytes: Option<u64>,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        ExecutionLimits {
            wall_clock_s: 300.0,
            memory_bytes: None,
        }
    }
}

impl ExecutionLimits {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if self.wall_clock_s <= 0.0 {
            return Err(SandboxError::Setup("wall_clock_s must be positive".into()));
        }
        Ok(())
    }
}

/// How a stage execution failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The stage raised; the traceback carries the detail.
    Exception,
    /// Wall-clock limit exceeded (cooperative alarm or hard kill).
    Timeout,
    /// No `stage_*` function in the submitted code.
    ContractNoncompliance,
    /// Stage code reached for a disallowed capability.
    SandboxViolation,
    /// Stage returned something that is not a table.
    BadReturnType,
    /// The runner itself failed; not attributable to the stage.
    Internal,
}

impl FailureKind {
    pub fn name(self) -> &'static str {
        match self {
            FailureKind::Exception => "exception",
            FailureKind::Timeout => "timeout",
            FailureKind::ContractNoncompliance => "contract_noncompliance",
            FailureKind::SandboxViolation => "sandbox_violation",
            FailureKind::BadReturnType => "bad_return_type",
            FailureKind::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageError {
    pub kind: FailureKind,
    pub message: String,
    pub traceback: String,
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub success: bool,
    pub output: Option<Table>,
    pub stdout: String,
    pub elapsed_s: f64,
    pub peak_memory_bytes: u64,
    pub memory_approximate: bool,
    pub error: Option<StageError>,
    pub warnings: Vec<String>,
}

impl ExecutionResult {
    fn failure(kind: FailureKind, message: String, traceback: String) -> ExecutionResult {
        ExecutionResult {
            success: false,
            output: None,
            stdout: String::new(),
            elapsed_s: 0.0,
            peak_memory_bytes: 0,
            memory_approximate: false,
            error: Some(StageError {
                kind,
                message,
                traceback,
            }),
            warnings: Vec::new(),
        }
    }
}

/// Stage-function discovery outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub names: Vec<String>,
    pub parse_note: Option<String>,
}

/// Top-level functions named `stage_*`, in source order. A structurally
/// broken source yields an empty list plus a note; the interpreter remains
/// the authority on full syntax.
pub fn discover_stage_functions(code: &str) -> Discovery {
    if let Some(note) = quick_syntax_note(code) {
        return Discovery {
            names: Vec::new(),
            parse_note: Some(note),
        };
    }
    let re = regex::Regex::new(r"(?m)^def\s+(stage_\w+)\s*\(").expect("static regex");
    let names = re
        .captures_iter(code)
        .map(|c| c[1].to_string())
        .collect();
    Discovery {
        names,
        parse_note: None,
    }
}

/// Cheap structural screen: unbalanced brackets or an unterminated
/// triple-quoted string mean the source cannot parse.
fn quick_syntax_note(code: &str) -> Option<String> {
    if code.matches("\"\"\"").count() % 2 == 1 || code.matches("'''").count() % 2 == 1 {
        return Some("unterminated triple-quoted string".to_string());
    }
    let mut depth: i64 = 0;
    for c in code.chars() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return Some("unbalanced brackets".to_string());
        }
    }
    (depth != 0).then(|| "unbalanced brackets".to_string())
}

fn python_bin() -> String {
    std::env::var("AUTOPIPE_PYTHON").unwrap_or_else(|_| "python3".to_string())
}

#[derive(Debug, Deserialize)]
struct RunnerResult {
    ok: bool,
    error_kind: Option<String>,
    message: String,
    traceback: String,
    stdout: String,
    elapsed_s: f64,
    peak_bytes: u64,
    approximate: bool,
}

/// Run the first discovered stage function against deep copies of `inputs`.
/// The caller's tables are never touched; the stage sees its own process.
pub fn execute_stage(
    code: &str,
    inputs: &[(String, Table)],
    limits: &ExecutionLimits,
) -> Result<ExecutionResult, SandboxError> {
    limits.validate()?;
    let discovery = discover_stage_functions(code);
    if discovery.names.is_empty() {
        let mut message = "no stage_* function found in the submitted code".to_string();
        if let Some(note) = &discovery.parse_note {
            message.push_str(&format!(" (parse failure: {note})"));
        }
        return Ok(ExecutionResult::failure(
            FailureKind::ContractNoncompliance,
            message,
            String::new(),
        ));
    }
    let mut warnings = Vec::new();
    if discovery.names.len() > 1 {
        warnings.push(format!(
            "multiple stage functions found ({}); invoking the first",
            discovery.names.join(", ")
        ));
    }
    let stage_name = &discovery.names[0];

    let dir = tempfile::tempdir().map_err(|e| SandboxError::Setup(e.to_string()))?;
    let code_file = dir.path().join("stage_code.py");
    std::fs::write(&code_file, code).map_err(|e| SandboxError::Setup(e.to_string()))?;
    let runner_file = dir.path().join("runner.py");
    std::fs::write(&runner_file, RUNNER_SRC).map_err(|e| SandboxError::Setup(e.to_string()))?;

    let mut input_specs = Vec::new();
    for (i, (name, table)) in inputs.iter().enumerate() {
        let csv = dir.path().join(format!("in_{i}.csv"));
        let schema = dir.path().join(format!("in_{i}.schema.json"));
        table
            .write_csv(&csv)
            .map_err(|e| SandboxError::Setup(e.to_string()))?;
        std::fs::write(
            &schema,
            serde_json::to_vec(&table.schema()).expect("schema serializes"),
        )
        .map_err(|e| SandboxError::Setup(e.to_string()))?;
        input_specs.push(serde_json::json!({
            "name": name,
            "csv": csv,
            "schema": schema,
        }));
    }

    let result_file = dir.path().join("result.json");
    let output_csv = dir.path().join("out.csv");
    let output_schema = dir.path().join("out.schema.json");
    let job = serde_json::json!({
        "code_file": code_file,
        "stage_name": stage_name,
        "inputs": input_specs,
        "wall_clock_s": limits.wall_clock_s,
        "memory_bytes": limits.memory_bytes,
        "result_file": result_file,
        "output_csv": output_csv,
        "output_schema": output_schema,
    });
    let job_file = dir.path().join("job.json");
    std::fs::write(&job_file, serde_json::to_vec(&job).expect("job serializes"))
        .map_err(|e| SandboxError::Setup(e.to_string()))?;

    let mut child = Command::new(python_bin())
        .arg("-I")
        .arg(&runner_file)
        .arg(&job_file)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| SandboxError::Setup(format!("cannot spawn python: {e}")))?;

    let deadline = Duration::from_secs_f64(limits.wall_clock_s + HARD_KILL_GRACE_S);
    let started = Instant::now();
    let hard_killed = wait_with_deadline(&mut child, started, deadline);
    let mut stderr_text = String::new();
    if let Some(mut stderr) = child.stderr.take() {
        let _ = stderr.read_to_string(&mut stderr_text);
    }

    let raw = std::fs::read_to_string(&result_file).ok();
    let mut result = match raw.and_then(|r| serde_json::from_str::<RunnerResult>(&r).ok()) {
        Some(runner) => interpret_runner_result(runner, &output_csv, &output_schema),
        None if hard_killed => {
            let mut r = ExecutionResult::failure(
                FailureKind::Timeout,
                format!(
                    "stage exceeded the {:.3}s wall-clock limit (hard kill)",
                    limits.wall_clock_s
                ),
                String::new(),
            );
            r.elapsed_s = limits.wall_clock_s;
            r
        }
        None => ExecutionResult::failure(
            FailureKind::Internal,
            "runner produced no result".to_string(),
            stderr_text.chars().take(4000).collect(),
        ),
    };
    result.warnings.extend(warnings);
    Ok(result)
}

fn interpret_runner_result(
    runner: RunnerResult,
    output_csv: &Path,
    output_schema: &Path,
) -> ExecutionResult {
    let error = if runner.ok {
        None
    } else {
        let kind = match runner.error_kind.as_deref() {
            Some("timeout") => FailureKind::Timeout,
            Some("sandbox_violation") => FailureKind::SandboxViolation,
            Some("bad_return_type") => FailureKind::BadReturnType,
            _ => FailureKind::Exception,
        };
        Some(StageError {
            kind,
            message: runner.message,
            traceback: runner.traceback,
        })
    };
    let output = if runner.ok {
        read_output_table(output_csv, output_schema)
    } else {
        None
    };
    match (runner.ok, output) {
        (true, Some(table)) => ExecutionResult {
            success: true,
            output: Some(table),
            stdout: runner.stdout,
            elapsed_s: runner.elapsed_s,
            peak_memory_bytes: runner.peak_bytes,
            memory_approximate: runner.approximate,
            error: None,
            warnings: Vec::new(),
        },
        (true, None) => ExecutionResult::failure(
            FailureKind::Internal,
            "stage reported success but the output table is unreadable".to_string(),
            String::new(),
        ),
        (false, _) => ExecutionResult {
            success: false,
            output: None,
            stdout: runner.stdout,
            elapsed_s: runner.elapsed_s,
            peak_memory_bytes: runner.peak_bytes,
            memory_approximate: runner.approximate,
            error,
            warnings: Vec::new(),
        },
    }
}

fn read_output_table(csv: &Path, schema: &Path) -> Option<Table> {
    let raw = std::fs::read_to_string(schema).ok()?;
    let schema: crate::model::table::TableSchema = serde_json::from_str(&raw).ok()?;
    Table::read_csv_with_schema(csv, &schema).ok()
}

/// Returns true when the child had to be hard-killed at the deadline.
fn wait_with_deadline(child: &mut Child, started: Instant, deadline: Duration) -> bool {
    loop {
        match child.try_wait() {
            Ok(Some(_)) => return false,
            Ok(None) => {
                if started.elapsed() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return true;
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return false;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::table::Column;
    use crate::model::value::{Dtype, Value};

    fn table(n: i64) -> Table {
        Table::new(vec![Column {
            name: "x".into(),
            dtype: Dtype::Integer,
            values: (0..n).map(Value::Int).collect(),
        }])
    }

    fn inputs(n: i64) -> Vec<(String, Table)> {
        vec![("data".into(), table(n))]
    }

    fn limits(wall: f64) -> ExecutionLimits {
        ExecutionLimits {
            wall_clock_s: wall,
            memory_bytes: None,
        }
    }

    #[test]
    fn discovery_prefix_filter_and_order() {
        let code = "def helper():\n    pass\n\ndef stage_clean(df):\n    return df\n\ndef stage_agg(df):\n    return df\n";
        let d = discover_stage_functions(code);
        assert_eq!(d.names, vec!["stage_clean", "stage_agg"]);
        assert!(d.parse_note.is_none());
    }

    #[test]
    fn discovery_empty_and_parse_note() {
        assert!(discover_stage_functions("x = 1\n").names.is_empty());
        let broken = "def stage_x(df:\n    return df ]]]";
        let d = discover_stage_functions(broken);
        assert!(d.names.is_empty());
        assert!(d.parse_note.is_some());
    }

    #[test]
    fn identity_stage_round_trips_rows() {
        let code = "def stage_identity(df):\n    return df\n";
        let result = execute_stage(code, &inputs(4), &limits(30.0)).unwrap();
        assert!(result.success, "error: {:?}", result.error);
        assert_eq!(result.output.unwrap().row_count(), 4);
    }

    #[test]
    fn mutating_then_raising_stage_leaves_caller_table_intact() {
        let tables = inputs(5);
        let before = tables[0].1.to_canonical_csv();
        let code = "def stage_bad(df):\n    df['x'] = 0\n    raise ValueError('boom')\n";
        let result = execute_stage(code, &tables, &limits(30.0)).unwrap();
        assert!(!result.success);
        let err = result.error.unwrap();
        assert_eq!(err.kind, FailureKind::Exception);
        assert!(err.traceback.contains("ValueError"));
        assert_eq!(tables[0].1.to_canonical_csv(), before);
    }

    #[test]
    fn free_form_script_is_contract_noncompliance() {
        let code = "result = 1 + 1\nprint(result)\n";
        let result = execute_stage(code, &inputs(2), &limits(30.0)).unwrap();
        assert!(!result.success);
        assert_eq!(
            result.error.unwrap().kind,
            FailureKind::ContractNoncompliance
        );
    }

    #[test]
    fn stdout_is_captured() {
        let code = "def stage_loud(df):\n    print('rows:', len(df))\n    return df\n";
        let result = execute_stage(code, &inputs(3), &limits(30.0)).unwrap();
        assert!(result.success);
        assert!(result.stdout.contains("rows: 3"));
    }

    #[test]
    fn cooperative_timeout_fires() {
        let code = "def stage_spin(df):\n    while True:\n        pass\n";
        let result = execute_stage(code, &inputs(2), &limits(0.3)).unwrap();
        assert!(!result.success);
        assert_eq!(result.error.unwrap().kind, FailureKind::Timeout);
        assert!(result.elapsed_s <= 0.3 + SCHEDULING_SLACK_S);
    }

    #[test]
    fn capability_import_is_sandbox_violation() {
        let code = "def stage_escape(df):\n    import os\n    return df\n";
        let result = execute_stage(code, &inputs(2), &limits(30.0)).unwrap();
        assert_eq!(result.error.unwrap().kind, FailureKind::SandboxViolation);
    }

    #[test]
    fn unknown_package_import_is_unavailable_not_violation() {
        let code = "def stage_gp(df):\n    import geopandas\n    return df\n";
        let result = execute_stage(code, &inputs(2), &limits(30.0)).unwrap();
        let err = result.error.unwrap();
        assert_eq!(err.kind, FailureKind::Exception);
        assert!(err.traceback.contains("is not available in the sandbox"));
    }

    #[test]
    fn open_is_denied() {
        let code = "def stage_fs(df):\n    open('/etc/passwd')\n    return df\n";
        let result = execute_stage(code, &inputs(2), &limits(30.0)).unwrap();
        assert_eq!(result.error.unwrap().kind, FailureKind::SandboxViolation);
    }

    #[test]
    fn non_table_return_is_bad_return_type() {
        let code = "def stage_scalar(df):\n    return 42\n";
        let result = execute_stage(code, &inputs(2), &limits(30.0)).unwrap();
        assert_eq!(result.error.unwrap().kind, FailureKind::BadReturnType);
    }

    #[test]
    fn syntax_error_surfaces_as_exception() {
        let code = "def stage_broken(df)\n    return df\n";
        let result = execute_stage(code, &inputs(2), &limits(30.0)).unwrap();
        let err = result.error.unwrap();
        assert_eq!(err.kind, FailureKind::Exception);
        assert!(err.message.contains("SyntaxError"));
    }
}
