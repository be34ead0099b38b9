//! Mutable pipeline state: the current stage, active tables, checkpoint
//! registry, the append-only failure log, and the cost ledger.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::case::CaseFolder;
use super::plan::Plan;
use super::table::Table;
use super::ModelError;

/// The six workflow stages, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineStage {
    DataUnderstanding,
    Planning,
    Critique,
    Expansion,
    Execution,
    Finalization,
}

impl PipelineStage {
    pub fn name(self) -> &'static str {
        match self {
            PipelineStage::DataUnderstanding => "data-understanding",
            PipelineStage::Planning => "planning",
            PipelineStage::Critique => "critique",
            PipelineStage::Expansion => "expansion",
            PipelineStage::Execution => "execution",
            PipelineStage::Finalization => "finalization",
        }
    }
}

/// One failure observation; the log only ever grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub phase_id: String,
    pub substep_id: String,
    pub level: Option<String>,
    pub category: String,
    pub detail: String,
    pub attempt: u32,
}

/// Cumulative model-call accounting, mirrored from the gateway at the end of
/// each stage so checkpoints carry a consistent snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub model_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated_cost: f64,
}

#[derive(Debug)]
pub struct PipelineState {
    pub current_stage: PipelineStage,
    /// Named tables the next substep without dependencies will receive.
    pub active_tables: Vec<(String, Table)>,
    checkpoint_ids: BTreeSet<String>,
    failure_log: Vec<FailureRecord>,
    pub cost: CostLedger,
    pub plan_revisions: u32,
}

impl PipelineState {
    pub fn new() -> Self {
        PipelineState {
            current_stage: PipelineStage::DataUnderstanding,
            active_tables: Vec::new(),
            checkpoint_ids: BTreeSet::new(),
            failure_log: Vec::new(),
            cost: CostLedger::default(),
            plan_revisions: 0,
        }
    }

    pub fn failure_log(&self) -> &[FailureRecord] {
        &self.failure_log
    }

    pub fn record_failure(&mut self, record: FailureRecord) {
        self.failure_log.push(record);
    }

    pub fn checkpoint_ids(&self) -> impl Iterator<Item = &String> {
        self.checkpoint_ids.iter()
    }

    /// Snapshot the active tables (or an explicit table set) plus the plan
    /// under `id`. Duplicate ids are rejected, both here and on disk.
    pub fn checkpoint(
        &mut self,
        case: &CaseFolder,
        id: &str,
        tables: &[(String, Table)],
        plan: Option<&Plan>,
    ) -> Result<(), ModelError> {
        if self.checkpoint_ids.contains(id) {
            return Err(ModelError::DuplicateCheckpoint(id.to_string()));
        }
        case.write_checkpoint(id, tables, plan)?;
        self.checkpoint_ids.insert(id.to_string());
        Ok(())
    }

    /// Replace the active tables with a checkpoint's contents. The failure
    /// log survives every restore.
    pub fn restore(&mut self, case: &CaseFolder, id: &str) -> Result<Option<Plan>, ModelError> {
        let (tables, plan) = case.read_checkpoint(id)?;
        self.active_tables = tables;
        Ok(plan)
    }

    pub fn has_checkpoint(&self, id: &str) -> bool {
        self.checkpoint_ids.contains(id)
    }
}

impl Default for PipelineState {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::table::Column;
    use crate::model::value::{Dtype, Value};

    #[test]
    fn failure_log_never_shrinks_across_restore() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseFolder::create(dir.path()).unwrap();
        let mut state = PipelineState::new();
        let t = Table::new(vec![Column {
            name: "a".into(),
            dtype: Dtype::Integer,
            values: vec![Value::Int(1)],
        }]);
        state
            .checkpoint(&case, "data-understanding", &[("f".into(), t)], None)
            .unwrap();
        state.record_failure(FailureRecord {
            phase_id: "p1".into(),
            substep_id: "s1".into(),
            level: Some("XS".into()),
            category: "KEY_ERROR".into(),
            detail: "missing column".into(),
            attempt: 1,
        });
        let before = state.failure_log().len();
        state.restore(&case, "data-understanding").unwrap();
        assert_eq!(state.failure_log().len(), before);
        assert_eq!(state.active_tables.len(), 1);
    }

    #[test]
    fn duplicate_checkpoint_id_rejected_in_state() {
        let dir = tempfile::tempdir().unwrap();
        let case = CaseFolder::create(dir.path()).unwrap();
        let mut state = PipelineState::new();
        state.checkpoint(&case, "c1", &[], None).unwrap();
        assert!(state.checkpoint(&case, "c1", &[], None).is_err());
    }
}
