//! Schema contracts: column-level invariants on a stage's output, violation
//! detection, and the deterministic prompt rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::table::Table;
use crate::model::value::{Dtype, Value};

#[derive(Debug, Error)]
pub enum ContractError {
    #[error("column {0} appears in more than one of add/preserve/remove")]
    OverlappingColumn(String),
    #[error("range constraint on {column} has lo {lo} > hi {hi}")]
    InvertedRange { column: String, lo: f64, hi: f64 },
    #[error("invalid pattern on {column}: {0}", .source)]
    BadPattern {
        column: String,
        source: regex::Error,
    },
}

/// Type requirement on a contract input column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeConstraint {
    Integer,
    Real,
    /// Integer or real.
    Numeric,
    Text,
    Boolean,
    Datetime,
    Any,
}

impl TypeConstraint {
    pub fn admits(self, dtype: Dtype) -> bool {
        match self {
            TypeConstraint::Integer => dtype == Dtype::Integer,
            TypeConstraint::Real => dtype == Dtype::Real,
            TypeConstraint::Numeric => dtype.is_numeric(),
            TypeConstraint::Text => dtype == Dtype::Text,
            TypeConstraint::Boolean => dtype == Dtype::Boolean,
            TypeConstraint::Datetime => dtype == Dtype::Datetime,
            TypeConstraint::Any => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TypeConstraint::Integer => "integer",
            TypeConstraint::Real => "real",
            TypeConstraint::Numeric => "numeric",
            TypeConstraint::Text => "text",
            TypeConstraint::Boolean => "boolean",
            TypeConstraint::Datetime => "datetime",
            TypeConstraint::Any => "any",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueConstraint {
    Range { lo: f64, hi: f64 },
    Enum(Vec<String>),
    Pattern(String),
    Unique,
}

/// Row-count relation between a stage's output and its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RowRelation {
    /// Exactly the input row count.
    Same,
    /// Strictly fewer rows (filters, aggregations).
    Less,
    /// Strictly more rows (expansions, unions).
    Greater,
    #[default]
    Any,
}

impl RowRelation {
    pub fn name(self) -> &'static str {
        match self {
            RowRelation::Same => "SAME",
            RowRelation::Less => "LESS",
            RowRelation::Greater => "GREATER",
            RowRelation::Any => "ANY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaContract {
    /// Required input columns with type constraints. Checked against inputs
    /// at expansion time; output columns carrying these names must keep the
    /// declared type.
    pub required_inputs: BTreeMap<String, TypeConstraint>,
    pub columns_add: Vec<String>,
    pub columns_preserve: Vec<String>,
    pub columns_remove: Vec<String>,
    pub value_constraints: BTreeMap<String, Vec<ValueConstraint>>,
    pub row_relation: RowRelation,
    /// Free-text expectations; rendered into prompts, fed to the semantic
    /// validator, never machine-checked.
    pub postconditions: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ViolationSeverity {
    Warning,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MissingColumn,
    TypeMismatch,
    ValueBreach,
    RowRelationBreach,
    RemovedNotRemoved,
    PreservedDropped,
}

impl ViolationKind {
    /// Structural breaks corrupt every downstream stage; value-level breaches
    /// are recoverable warnings.
    pub fn severity(self) -> ViolationSeverity {
        match self {
            ViolationKind::MissingColumn
            | ViolationKind::TypeMismatch
            | ViolationKind::RowRelationBreach => ViolationSeverity::Critical,
            ViolationKind::ValueBreach
            | ViolationKind::RemovedNotRemoved
            | ViolationKind::PreservedDropped => ViolationSeverity::Warning,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::MissingColumn => "missing_column",
            ViolationKind::TypeMismatch => "type_mismatch",
            ViolationKind::ValueBreach => "value_breach",
            ViolationKind::RowRelationBreach => "row_relation_breach",
            ViolationKind::RemovedNotRemoved => "removed_not_removed",
            ViolationKind::PreservedDropped => "preserved_dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub column: Option<String>,
    pub severity: ViolationSeverity,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, column: Option<&str>, detail: String) -> Violation {
        Violation {
            kind,
            column: column.map(str::to_string),
            severity: kind.severity(),
            detail,
        }
    }
}

impl SchemaContract {
    /// Structural invariants: disjoint add/preserve/remove, ordered ranges,
    /// compilable patterns.
    pub fn validate(&self) -> Result<(), ContractError> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for list in [&self.columns_add, &self.columns_preserve, &self.columns_remove] {
            let mut in_this_list = std::collections::BTreeSet::new();
            for c in list {
                if in_this_list.insert(c.as_str()) {
                    *seen.entry(c.as_str()).or_default() += 1;
                }
            }
        }
        if let Some((col, _)) = seen.iter().find(|(_, &n)| n > 1) {
            return Err(ContractError::OverlappingColumn(col.to_string()));
        }
        for (col, constraints) in &self.value_constraints {
            for c in constraints {
                match c {
                    ValueConstraint::Range { lo, hi } if lo > hi => {
                        return Err(ContractError::InvertedRange {
                            column: col.clone(),
                            lo: *lo,
                            hi: *hi,
                        })
                    }
                    ValueConstraint::Pattern(p) => {
                        regex::Regex::new(p).map_err(|source| ContractError::BadPattern {
                            column: col.clone(),
                            source,
                        })?;
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.required_inputs.is_empty()
            && self.columns_add.is_empty()
            && self.columns_preserve.is_empty()
            && self.columns_remove.is_empty()
            && self.value_constraints.is_empty()
            && self.row_relation == RowRelation::Any
            && self.postconditions.is_empty()
    }
}

/// Check every machine-checkable clause against an output table. All
/// breaches come back as violations; nothing is raised.
pub fn validate_output(
    contract: &SchemaContract,
    input_row_count: usize,
    output: &Table,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let names: std::collections::BTreeSet<&str> =
        output.columns.iter().map(|c| c.name.as_str()).collect();

    for col in &contract.columns_add {
        if !names.contains(col.as_str()) {
            violations.push(Violation::new(
                ViolationKind::MissingColumn,
                Some(col),
                format!("contract adds column {col} but the output lacks it"),
            ));
        }
    }
    for col in &contract.columns_preserve {
        if !names.contains(col.as_str()) {
            violations.push(Violation::new(
                ViolationKind::PreservedDropped,
                Some(col),
                format!("column {col} should be preserved but was dropped"),
            ));
        }
    }
    for col in &contract.columns_remove {
        if names.contains(col.as_str()) {
            violations.push(Violation::new(
                ViolationKind::RemovedNotRemoved,
                Some(col),
                format!("column {col} should be removed but is still present"),
            ));
        }
    }
    for (col, constraint) in &contract.required_inputs {
        if let Some(found) = output.column(col) {
            if !constraint.admits(found.dtype) {
                violations.push(Violation::new(
                    ViolationKind::TypeMismatch,
                    Some(col),
                    format!(
                        "column {col} must be {} but the output has {}",
                        constraint.name(),
                        found.dtype
                    ),
                ));
            }
        }
    }
    for (col, constraints) in &contract.value_constraints {
        let Some(found) = output.column(col) else {
            continue; // absence is the add/preserve checks' business
        };
        for c in constraints {
            match c {
                ValueConstraint::Range { lo, hi } => {
                    let breach = found
                        .values
                        .iter()
                        .filter_map(Value::as_f64)
                        .find(|v| v < lo || v > hi);
                    if let Some(v) = breach {
                        violations.push(Violation::new(
                            ViolationKind::ValueBreach,
                            Some(col),
                            format!("value {v} in {col} outside range [{lo}, {hi}]"),
                        ));
                    }
                }
                ValueConstraint::Enum(allowed) => {
                    let breach = found
                        .values
                        .iter()
                        .filter(|v| !v.is_null())
                        .map(Value::render)
                        .find(|v| !allowed.contains(v));
                    if let Some(v) = breach {
                        violations.push(Violation::new(
                            ViolationKind::ValueBreach,
                            Some(col),
                            format!("value {v:?} in {col} not in the allowed set"),
                        ));
                    }
                }
                ValueConstraint::Pattern(pattern) => {
                    let Ok(re) = regex::Regex::new(pattern) else {
                        continue; // rejected at contract validation time
                    };
                    let breach = found
                        .values
                        .iter()
                        .filter(|v| !v.is_null())
                        .map(Value::render)
                        .find(|v| !re.is_match(v));
                    if let Some(v) = breach {
                        violations.push(Violation::new(
                            ViolationKind::ValueBreach,
                            Some(col),
                            format!("value {v:?} in {col} does not match /{pattern}/"),
                        ));
                    }
                }
                ValueConstraint::Unique => {
                    let mut seen = std::collections::BTreeSet::new();
                    let dup = found
                        .values
                        .iter()
                        .filter(|v| !v.is_null())
                        .map(Value::render)
                        .find(|v| !seen.insert(v.clone()));
                    if let Some(v) = dup {
                        violations.push(Violation::new(
                            ViolationKind::ValueBreach,
                            Some(col),
                            format!("duplicate value {v:?} in unique column {col}"),
                        ));
                    }
                }
            }
        }
    }
    let out_rows = output.row_count();
    let relation_ok = match contract.row_relation {
        RowRelation::Same => out_rows == input_row_count,
        RowRelation::Less => out_rows < input_row_count,
        RowRelation::Greater => out_rows > input_row_count,
        RowRelation::Any => true,
    };
    if !relation_ok {
        violations.push(Violation::new(
            ViolationKind::RowRelationBreach,
            None,
            format!(
                "row relation {} breached: input {input_row_count} rows, output {out_rows}",
                contract.row_relation.name()
            ),
        ));
    }
    violations
}

/// Deterministic human-readable rendering of every clause; injected into
/// prompts at top priority.
pub fn render_contract(contract: &SchemaContract) -> String {
    if contract.is_empty() {
        return "Output contract: no constraints on this stage's output.".to_string();
    }
    let mut s = String::from("Output contract:\n");
    if !contract.required_inputs.is_empty() {
        let cols: Vec<String> = contract
            .required_inputs
            .iter()
            .map(|(c, t)| format!("{c} ({})", t.name()))
            .collect();
        let _ = writeln!(s, "- required input columns: {}", cols.join(", "));
    }
    if !contract.columns_add.is_empty() {
        let _ = writeln!(s, "- columns to add: {}", contract.columns_add.join(", "));
    }
    if !contract.columns_preserve.is_empty() {
        let _ = writeln!(
            s,
            "- columns to preserve: {}",
            contract.columns_preserve.join(", ")
        );
    }
    if !contract.columns_remove.is_empty() {
        let _ = writeln!(
            s,
            "- columns to remove: {}",
            contract.columns_remove.join(", ")
        );
    }
    for (col, constraints) in &contract.value_constraints {
        for c in constraints {
            let clause = match c {
                ValueConstraint::Range { lo, hi } => format!("{col} within [{lo}, {hi}]"),
                ValueConstraint::Enum(vals) => format!("{col} one of {{{}}}", vals.join(", ")),
                ValueConstraint::Pattern(p) => format!("{col} matches /{p}/"),
                ValueConstraint::Unique => format!("{col} unique"),
            };
            let _ = writeln!(s, "- value constraint: {clause}");
        }
    }
    let relation = match contract.row_relation {
        RowRelation::Same => "exactly the input row count",
        RowRelation::Less => "strictly fewer rows than the input",
        RowRelation::Greater => "strictly more rows than the input",
        RowRelation::Any => "any row count",
    };
    let _ = writeln!(s, "- output row count: {relation}");
    for p in &contract.postconditions {
        let _ = writeln!(s, "- postcondition: {p}");
    }
    s.trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::table::Column;

    fn col(name: &str, dtype: Dtype, values: Vec<Value>) -> Column {
        Column {
            name: name.into(),
            dtype,
            values,
        }
    }

    #[test]
    fn satisfied_add_clause_is_clean() {
        let contract = SchemaContract {
            columns_add: vec!["avg_kp".into()],
            required_inputs: [("avg_kp".to_string(), TypeConstraint::Numeric)].into(),
            ..Default::default()
        };
        let out = Table::new(vec![col("avg_kp", Dtype::Real, vec![Value::Real(3.1)])]);
        assert!(validate_output(&contract, 10, &out).is_empty());
    }

    #[test]
    fn less_relation_is_strict() {
        let contract = SchemaContract {
            row_relation: RowRelation::Less,
            ..Default::default()
        };
        let out = Table::new(vec![col(
            "x",
            Dtype::Integer,
            (0..100).map(Value::Int).collect(),
        )]);
        let violations = validate_output(&contract, 100, &out);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].kind, ViolationKind::RowRelationBreach);
        assert_eq!(violations[0].severity, ViolationSeverity::Critical);
    }

    #[test]
    fn enum_membership_breach() {
        let contract = SchemaContract {
            value_constraints: [(
                "status".to_string(),
                vec![ValueConstraint::Enum(vec!["A".into(), "B".into()])],
            )]
            .into(),
            ..Default::default()
        };
        let out = Table::new(vec![col(
            "status",
            Dtype::Text,
            vec![Value::Text("A".into()), Value::Text("C".into())],
        )]);
        let violations = validate_output(&contract, 2, &out);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].kind, ViolationKind::ValueBreach);
        assert_eq!(violations[0].column.as_deref(), Some("status"));
    }

    #[test]
    fn any_relation_never_breaches() {
        let contract = SchemaContract::default();
        let out = Table::default();
        assert!(validate_output(&contract, 1234, &out).is_empty());
    }

    #[test]
    fn overlap_rejected() {
        let contract = SchemaContract {
            columns_add: vec!["x".into()],
            columns_remove: vec!["x".into()],
            ..Default::default()
        };
        assert!(matches!(
            contract.validate(),
            Err(ContractError::OverlappingColumn(_))
        ));
    }

    #[test]
    fn rendering_is_deterministic_and_complete() {
        let contract = SchemaContract {
            columns_add: vec!["avg".into()],
            columns_preserve: vec!["year".into()],
            value_constraints: [("avg".to_string(), vec![ValueConstraint::Range { lo: 0.0, hi: 9.0 }])]
                .into(),
            row_relation: RowRelation::Less,
            ..Default::default()
        };
        let r1 = render_contract(&contract);
        let r2 = render_contract(&contract);
        assert_eq!(r1, r2);
        for needle in ["avg", "year", "[0, 9]", "fewer rows"] {
            assert!(r1.contains(needle), "missing {needle} in {r1}");
        }
        assert_eq!(r1.matches("avg within").count(), 1);
    }

    #[test]
    fn empty_contract_renders_fixed_sentence() {
        assert_eq!(
            render_contract(&SchemaContract::default()),
            "Output contract: no constraints on this stage's output."
        );
    }
}
