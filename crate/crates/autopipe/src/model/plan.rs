//! Plan, phase, and substep types produced by the planning agents.

use serde::{Deserialize, Serialize};

use crate::contracts::SchemaContract;

use super::ModelError;

/// Ground-agent type. The registry of reusable agent definitions lives in
/// `agents::templates` and keys off this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentType {
    DataProcessor,
    Aggregator,
    AnswerFormatter,
    Joiner,
    Custom(String),
}

impl AgentType {
    pub fn parse(s: &str) -> AgentType {
        match s {
            "DataProcessor" => AgentType::DataProcessor,
            "Aggregator" => AgentType::Aggregator,
            "AnswerFormatter" => AgentType::AnswerFormatter,
            "Joiner" => AgentType::Joiner,
            other => AgentType::Custom(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            AgentType::DataProcessor => "DataProcessor",
            AgentType::Aggregator => "Aggregator",
            AgentType::AnswerFormatter => "AnswerFormatter",
            AgentType::Joiner => "Joiner",
            AgentType::Custom(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substep {
    pub id: String,
    pub agent_type: AgentType,
    pub objective: String,
    #[serde(default)]
    pub hints: Vec<String>,
    #[serde(default)]
    pub contract: SchemaContract,
    /// Ids of earlier substeps whose outputs feed this one; empty means the
    /// phase's active inputs.
    #[serde(default)]
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub id: String,
    pub objective: String,
    #[serde(default)]
    pub rationale: String,
    /// Populated at expansion time; 1..=3 substeps once expanded.
    #[serde(default)]
    pub substeps: Vec<Substep>,
}

pub const MAX_SUBSTEPS_PER_PHASE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub phases: Vec<Phase>,
    /// Increments only through plan-level backtracking or critique revision.
    #[serde(default)]
    pub revision: u32,
}

impl Plan {
    pub fn new(phases: Vec<Phase>) -> Self {
        Plan { phases, revision: 0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.phases.is_empty() {
            return Err(ModelError::InvalidPlan("plan has no phases".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.phases {
            if !seen.insert(&p.id) {
                return Err(ModelError::InvalidPlan(format!(
                    "duplicate phase id: {}",
                    p.id
                )));
            }
        }
        Ok(())
    }

    pub fn phase(&self, id: &str) -> Option<&Phase> {
        self.phases.iter().find(|p| p.id == id)
    }

    pub fn phase_index(&self, id: &str) -> Option<usize> {
        self.phases.iter().position(|p| p.id == id)
    }
}

/// Checks that every `depends_on` points at an earlier substep in the list.
pub fn validate_substep_deps(substeps: &[Substep]) -> Result<(), ModelError> {
    for (i, s) in substeps.iter().enumerate() {
        for dep in &s.depends_on {
            let pos = substeps.iter().position(|o| &o.id == dep);
            match pos {
                Some(j) if j < i => {}
                Some(_) => {
                    return Err(ModelError::InvalidPlan(format!(
                        "substep {} depends on later substep {dep}",
                        s.id
                    )))
                }
                None => {
                    return Err(ModelError::InvalidPlan(format!(
                        "substep {} depends on unknown substep {dep}",
                        s.id
                    )))
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn substep(id: &str, deps: &[&str]) -> Substep {
        Substep {
            id: id.into(),
            agent_type: AgentType::DataProcessor,
            objective: "x".into(),
            hints: vec![],
            contract: SchemaContract::default(),
            depends_on: deps.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn forward_dependency_rejected() {
        let steps = vec![substep("a", &["b"]), substep("b", &[])];
        assert!(validate_substep_deps(&steps).is_err());
        let steps = vec![substep("a", &[]), substep("b", &["a"])];
        assert!(validate_substep_deps(&steps).is_ok());
    }

    #[test]
    fn duplicate_phase_ids_rejected() {
        let plan = Plan::new(vec![
            Phase {
                id: "p1".into(),
                objective: "one".into(),
                rationale: String::new(),
                substeps: vec![],
            },
            Phase {
                id: "p1".into(),
                objective: "two".into(),
                rationale: String::new(),
                substeps: vec![],
            },
        ]);
        assert!(plan.validate().is_err());
    }
}
