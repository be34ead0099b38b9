//! The case folder: an append-only event stream, immutable checkpoints, code
//! revisions, and the run's final artifacts. One directory per run; a single
//! writer appends events while any number of readers replay.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::plan::Plan;
use super::table::{Table, TableSchema};
use super::ModelError;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REVISION_DIR: &str = "revisions";
pub const FINAL_DIR: &str = "final";
pub const PIPELINE_FILE: &str = "pipeline.py";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.toml";

/// Checkpoint id written after Stage 1; both backtracking levels restore it.
pub const DATA_UNDERSTANDING_CHECKPOINT: &str = "data-understanding";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Actor {
    Orchestrator,
    Architect,
    Monitor,
    GroundAgent,
    Cli,
}

impl Actor {
    pub fn name(self) -> &'static str {
        match self {
            Actor::Orchestrator => "orchestrator",
            Actor::Architect => "architect",
            Actor::Monitor => "monitor",
            Actor::GroundAgent => "ground-agent",
            Actor::Cli => "cli",
        }
    }
}

/// One record of the append-only stream. Total order is `(ts_ms, seq)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEvent {
    pub ts_ms: i64,
    pub seq: u64,
    pub actor: Actor,
    pub kind: String,
    pub payload: serde_json::Value,
}

/// Payload keys whose values vary run to run (clocks, memory meters, host
/// paths). Replay comparison strips these along with `ts_ms`.
pub const VOLATILE_PAYLOAD_KEYS: [&str; 6] = [
    "elapsed_s",
    "duration_s",
    "peak_memory_bytes",
    "case_path",
    "abs_path",
    "estimated_cost_total",
];

impl CaseEvent {
    /// Deterministic rendering with volatile fields removed; the unit of
    /// "identical event streams modulo timestamps".
    pub fn normalized(&self) -> String {
        let mut payload = self.payload.clone();
        if let serde_json::Value::Object(map) = &mut payload {
            for key in VOLATILE_PAYLOAD_KEYS {
                map.remove(key);
            }
        }
        format!(
            "{}|{}|{}|{}",
            self.seq,
            self.actor.name(),
            self.kind,
            serde_json::to_string(&payload).unwrap_or_default()
        )
    }
}

/// Anything that accepts case events. The gateway and monitor take a sink so
/// they stay testable without a full case folder.
pub trait EventSink: Sync {
    fn emit(&self, actor: Actor, kind: &str, payload: serde_json::Value);
}

/// Sink that drops everything; for unit tests.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _actor: Actor, _kind: &str, _payload: serde_json::Value) {}
}

struct WriterState {
    file: fs::File,
    last_ts: i64,
    next_seq: u64,
    closed: bool,
}

/// Open case folder with a serialized single-writer append channel.
pub struct CaseFolder {
    root: PathBuf,
    writer: Mutex<WriterState>,
}

impl CaseFolder {
    /// Create the folder layout and open the event stream for appending.
    pub fn create(root: &Path) -> Result<CaseFolder, ModelError> {
        fs::create_dir_all(root).map_err(|e| ModelError::io(root, e))?;
        for sub in [CHECKPOINT_DIR, REVISION_DIR, FINAL_DIR] {
            fs::create_dir_all(root.join(sub)).map_err(|e| ModelError::io(root, e))?;
        }
        let events = root.join(EVENTS_FILE);
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events)
            .map_err(|e| ModelError::io(&events, e))?;
        Ok(CaseFolder {
            root: root.to_path_buf(),
            writer: Mutex::new(WriterState {
                file,
                last_ts: 0,
                next_seq: 0,
                closed: false,
            }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Append with the current wall clock, clamped so timestamps never move
    /// backwards; the sequence number breaks ties at millisecond precision.
    pub fn log(&self, actor: Actor, kind: &str, payload: serde_json::Value) {
        let now = chrono::Utc::now().timestamp_millis();
        // A full disk or closed folder during logging is unrecoverable from
        // here; surface it loudly rather than silently losing the record.
        self.append_with_ts(now, actor, kind, payload)
            .expect("case event append failed");
    }

    /// Append a fully-formed event, enforcing the monotonic-timestamp
    /// invariant. Events earlier than the stream head are rejected.
    pub fn append_event(&self, event: CaseEvent) -> Result<(), ModelError> {
        let mut w = self.writer.lock().expect("event writer poisoned");
        if w.closed {
            return Err(ModelError::CaseClosed);
        }
        if event.ts_ms < w.last_ts {
            return Err(ModelError::NonMonotonicEvent {
                last: w.last_ts,
                offered: event.ts_ms,
            });
        }
        let seq = w.next_seq;
        let record = CaseEvent { seq, ..event };
        let line = serde_json::to_string(&record).expect("event serializes");
        writeln!(w.file, "{line}").map_err(|e| ModelError::io(&self.root, e))?;
        w.last_ts = record.ts_ms;
        w.next_seq = seq + 1;
        Ok(())
    }

    fn append_with_ts(
        &self,
        ts: i64,
        actor: Actor,
        kind: &str,
        payload: serde_json::Value,
    ) -> Result<(), ModelError> {
        let clamped = {
            let w = self.writer.lock().expect("event writer poisoned");
            ts.max(w.last_ts)
        };
        self.append_event(CaseEvent {
            ts_ms: clamped,
            seq: 0,
            actor,
            kind: kind.to_string(),
            payload,
        })
    }

    /// Stop accepting events. Further appends fail with `CaseClosed`.
    pub fn close(&self) {
        let mut w = self.writer.lock().expect("event writer poisoned");
        let _ = w.file.flush();
        w.closed = true;
    }

    // ---- checkpoints -----------------------------------------------------

    pub fn checkpoint_exists(&self, id: &str) -> bool {
        self.root.join(CHECKPOINT_DIR).join(id).exists()
    }

    /// Persist named tables plus a plan snapshot under a fresh checkpoint id.
    /// Contents are immutable: a duplicate id is an error.
    pub fn write_checkpoint(
        &self,
        id: &str,
        tables: &[(String, Table)],
        plan: Option<&Plan>,
    ) -> Result<(), ModelError> {
        let dir = self.root.join(CHECKPOINT_DIR).join(id);
        if dir.exists() {
            return Err(ModelError::DuplicateCheckpoint(id.to_string()));
        }
        fs::create_dir_all(&dir).map_err(|e| ModelError::io(&dir, e))?;
        let manifest: Vec<&String> = tables.iter().map(|(n, _)| n).collect();
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| ModelError::io(&dir, e))?;
        for (name, table) in tables {
            table.write_csv(&dir.join(format!("table_{name}.csv")))?;
            let schema_path = dir.join(format!("table_{name}.schema.json"));
            fs::write(
                &schema_path,
                serde_json::to_vec_pretty(&table.schema()).expect("schema serializes"),
            )
            .map_err(|e| ModelError::io(&schema_path, e))?;
        }
        if let Some(plan) = plan {
            let plan_path = dir.join("plan.json");
            fs::write(
                &plan_path,
                serde_json::to_vec_pretty(plan).expect("plan serializes"),
            )
            .map_err(|e| ModelError::io(&plan_path, e))?;
        }
        Ok(())
    }

    /// Restore a checkpoint's tables (in manifest order) and plan snapshot.
    pub fn read_checkpoint(
        &self,
        id: &str,
    ) -> Result<(Vec<(String, Table)>, Option<Plan>), ModelError> {
        let dir = self.root.join(CHECKPOINT_DIR).join(id);
        if !dir.exists() {
            return Err(ModelError::MissingCheckpoint(id.to_string()));
        }
        let manifest_raw =
            fs::read_to_string(dir.join("manifest.json")).map_err(|e| ModelError::io(&dir, e))?;
        let manifest: Vec<String> =
            serde_json::from_str(&manifest_raw).map_err(|e| ModelError::Corrupt {
                path: dir.display().to_string(),
                detail: e.to_string(),
            })?;
        let mut tables = Vec::new();
        for name in manifest {
            let schema_raw = fs::read_to_string(dir.join(format!("table_{name}.schema.json")))
                .map_err(|e| ModelError::io(&dir, e))?;
            let schema: TableSchema =
                serde_json::from_str(&schema_raw).map_err(|e| ModelError::Corrupt {
                    path: dir.display().to_string(),
                    detail: e.to_string(),
                })?;
            let table = Table::read_csv_with_schema(&dir.join(format!("table_{name}.csv")), &schema)?;
            tables.push((name, table));
        }
        let plan_path = dir.join("plan.json");
        let plan = if plan_path.exists() {
            let raw = fs::read_to_string(&plan_path).map_err(|e| ModelError::io(&plan_path, e))?;
            Some(serde_json::from_str(&raw).map_err(|e| ModelError::Corrupt {
                path: plan_path.display().to_string(),
                detail: e.to_string(),
            })?)
        } else {
            None
        };
        Ok((tables, plan))
    }

    // ---- code revisions and final artifacts -------------------------------

    pub fn save_revision(&self, substep_id: &str, revision: u32, code: &str) -> Result<PathBuf, ModelError> {
        let dir = self.root.join(REVISION_DIR).join(substep_id);
        fs::create_dir_all(&dir).map_err(|e| ModelError::io(&dir, e))?;
        let path = dir.join(format!("rev_{revision:03}.py"));
        fs::write(&path, code).map_err(|e| ModelError::io(&path, e))?;
        Ok(path)
    }

    pub fn write_config_snapshot(&self, toml_text: &str) -> Result<(), ModelError> {
        let path = self.root.join(CONFIG_SNAPSHOT_FILE);
        fs::write(&path, toml_text).map_err(|e| ModelError::io(&path, e))
    }

    pub fn write_final_output(&self, table: &Table, answer: &str) -> Result<PathBuf, ModelError> {
        let dir = self.root.join(FINAL_DIR);
        let out = dir.join("output.csv");
        table.write_csv(&out)?;
        let schema_path = dir.join("output.schema.json");
        fs::write(
            &schema_path,
            serde_json::to_vec_pretty(&table.schema()).expect("schema serializes"),
        )
        .map_err(|e| ModelError::io(&schema_path, e))?;
        let ans = dir.join("answer.txt");
        fs::write(&ans, answer).map_err(|e| ModelError::io(&ans, e))?;
        Ok(out)
    }

    pub fn write_assembled_pipeline(&self, script: &str) -> Result<PathBuf, ModelError> {
        let path = self.root.join(PIPELINE_FILE);
        fs::write(&path, script).map_err(|e| ModelError::io(&path, e))?;
        Ok(path)
    }
}

impl EventSink for CaseFolder {
    fn emit(&self, actor: Actor, kind: &str, payload: serde_json::Value) {
        self.log(actor, kind, payload);
    }
}

/// Read back a case folder's event stream in order. Corrupt lines are
/// collected as notes rather than aborting the replay.
pub fn replay_events(root: &Path) -> Result<(Vec<CaseEvent>, Vec<String>), ModelError> {
    let path = root.join(EVENTS_FILE);
    let raw = fs::read_to_string(&path).map_err(|e| ModelError::io(&path, e))?;
    let mut events = Vec::new();
    let mut notes = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CaseEvent>(line) {
            Ok(ev) => events.push(ev),
            Err(e) => notes.push(format!("line {}: {e}", i + 1)),
        }
    }
    Ok((events, notes))
}

/// Map of final-output answer text per case root; used by reports.
pub fn read_answer(root: &Path) -> Option<String> {
    fs::read_to_string(root.join(FINAL_DIR).join("answer.txt")).ok()
}

/// Restore the persisted tables of a checkpoint as a name-keyed map.
pub fn checkpoint_tables_map(
    case: &CaseFolder,
    id: &str,
) -> Result<BTreeMap<String, Table>, ModelError> {
    let (tables, _) = case.read_checkpoint(id)?;
    Ok(tables.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::table::Column;
    use crate::model::value::{Dtype, Value};

    fn table() -> Table {
        Table::new(vec![Column {
            name: "x".into(),
            dtype: Dtype::Integer,
            values: vec![Value::Int(1), Value::Int(2)],
        }])
    }

    #[test]
    fn append_replay_order() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseFolder::create(dir.path()).unwrap();
        case.log(Actor::Orchestrator, "stage", serde_json::json!({"stage": "one"}));
        case.log(Actor::Monitor, "verdict", serde_json::json!({"decision": "CONTINUE"}));
        let (events, notes) = replay_events(dir.path()).unwrap();
        assert!(notes.is_empty());
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].kind, "stage");
        assert_eq!(events[1].seq, 1);
        assert!(events[0].ts_ms <= events[1].ts_ms);
    }

    #[test]
    fn earlier_timestamp_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseFolder::create(dir.path()).unwrap();
        case.log(Actor::Cli, "start", serde_json::json!({}));
        let stale = CaseEvent {
            ts_ms: 1,
            seq: 0,
            actor: Actor::Cli,
            kind: "old".into(),
            payload: serde_json::json!({}),
        };
        assert!(matches!(
            case.append_event(stale),
            Err(ModelError::NonMonotonicEvent { .. })
        ));
    }

    #[test]
    fn closed_case_rejects_appends() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseFolder::create(dir.path()).unwrap();
        case.close();
        let ev = CaseEvent {
            ts_ms: i64::MAX,
            seq: 0,
            actor: Actor::Cli,
            kind: "late".into(),
            payload: serde_json::json!({}),
        };
        assert!(matches!(case.append_event(ev), Err(ModelError::CaseClosed)));
    }

    #[test]
    fn bulk_append_replays_every_event() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseFolder::create(dir.path()).unwrap();
        for i in 0..10_000 {
            case.log(Actor::GroundAgent, "tick", serde_json::json!({ "i": i }));
        }
        let (events, _) = replay_events(dir.path()).unwrap();
        assert_eq!(events.len(), 10_000);
        // Line-count oracle over the persisted stream.
        let raw = std::fs::read_to_string(dir.path().join(EVENTS_FILE)).unwrap();
        assert_eq!(raw.lines().count(), 10_000);
        assert!(events.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn checkpoint_round_trip_and_uniqueness() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseFolder::create(dir.path()).unwrap();
        let t = table();
        case.write_checkpoint("data-understanding", &[("sales".into(), t.clone())], None)
            .unwrap();
        let (tables, _) = case.read_checkpoint("data-understanding").unwrap();
        assert_eq!(tables[0].1.to_canonical_csv(), t.to_canonical_csv());
        let dup = case.write_checkpoint("data-understanding", &[("sales".into(), t)], None);
        assert!(matches!(dup, Err(ModelError::DuplicateCheckpoint(_))));
    }

    #[test]
    fn normalized_strips_volatile_keys() {
        let ev = CaseEvent {
            ts_ms: 123,
            seq: 7,
            actor: Actor::Monitor,
            kind: "execution".into(),
            payload: serde_json::json!({"rows_out": 5, "elapsed_s": 0.123, "peak_memory_bytes": 991}),
        };
        let norm = ev.normalized();
        assert!(norm.contains("rows_out"));
        assert!(!norm.contains("elapsed_s"));
        assert!(!norm.contains("123"));
    }
}
