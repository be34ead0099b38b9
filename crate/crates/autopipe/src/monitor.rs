//! Rule-based oversight with zero model calls: threshold alerts after every
//! execution, structured verdicts, regex failure categorization with recovery
//! hints, and cross-run pattern mining.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::RowRelation;
use crate::model::case::replay_events;

/// Tolerance so an observation exactly at a threshold always fires (>=).
const THRESHOLD_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("empty traceback")]
    EmptyTraceback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorThresholds {
    pub revision_warn: u32,
    pub revision_crit: u32,
    /// Percent of input rows lost: (in - out) / in * 100.
    pub row_drop_warn_pct: f64,
    pub row_drop_crit_pct: f64,
    /// Output as a percentage of input: out / in * 100 (500% = 5x).
    pub row_growth_warn_pct: f64,
    /// Percentage-point increase of the worst column's null rate.
    pub null_increase_warn_pp: f64,
    pub wall_warn_s: f64,
    pub wall_crit_s: f64,
    /// Fraction of the run's cost budget consumed.
    pub cost_warn_frac: f64,
    pub cost_crit_frac: f64,
}

impl Default for MonitorThresholds {
    fn default() -> Self {
        MonitorThresholds {
            revision_warn: 2,
            revision_crit: 4,
            row_drop_warn_pct: 30.0,
            row_drop_crit_pct: 90.0,
            row_growth_warn_pct: 500.0,
            null_increase_warn_pp: 20.0,
            wall_warn_s: 60.0,
            wall_crit_s: 300.0,
            cost_warn_frac: 0.8,
            cost_crit_frac: 1.0,
        }
    }
}

impl MonitorThresholds {
    pub fn validate(&self) -> Result<(), String> {
        let pairs: [(&str, f64, f64); 4] = [
            ("revision", self.revision_warn as f64, self.revision_crit as f64),
            ("row_drop", self.row_drop_warn_pct, self.row_drop_crit_pct),
            ("wall", self.wall_warn_s, self.wall_crit_s),
            ("cost", self.cost_warn_frac, self.cost_crit_frac),
        ];
        for (name, warn, crit) in pairs {
            if warn > crit {
                return Err(format!("{name} warn threshold exceeds critical"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    RevisionCount,
    RowDrop,
    RowGrowth,
    NullIncrease,
    WallClock,
    CostBudget,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::RevisionCount => "revision_count",
            CheckKind::RowDrop => "row_drop",
            CheckKind::RowGrowth => "row_growth",
            CheckKind::NullIncrease => "null_increase",
            CheckKind::WallClock => "wall_clock",
            CheckKind::CostBudget => "cost_budget",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AlertSeverity {
    Warning,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub check: CheckKind,
    pub severity: AlertSeverity,
    pub observed: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Continue,
    Warn,
    Pause,
    Abort,
    Retry,
}

impl Decision {
    pub fn name(self) -> &'static str {
        match self {
            Decision::Continue => "CONTINUE",
            Decision::Warn => "WARN",
            Decision::Pause => "PAUSE",
            Decision::Abort => "ABORT",
            Decision::Retry => "RETRY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub alerts: Vec<Alert>,
}

/// Everything the rule engine looks at for one execution. Plain data; the
/// monitor can never reach a model even by accident.
#[derive(Debug, Clone)]
pub struct MonitorInput<'a> {
    pub success: bool,
    pub rows_in: u64,
    pub rows_out: Option<u64>,
    pub null_rates_before: &'a BTreeMap<String, f64>,
    pub null_rates_after: &'a BTreeMap<String, f64>,
    pub revisions: u32,
    pub elapsed_s: f64,
    pub cost_spent: f64,
    pub cost_budget: f64,
    /// The stage contract's declared row relation. A declared LESS suppresses
    /// row-drop alerts (aggregations shrink by design); a declared GREATER
    /// suppresses row-growth alerts.
    pub declared_relation: Option<RowRelation>,
}

fn crossed(observed: f64, threshold: f64) -> bool {
    observed + THRESHOLD_EPS >= threshold
}

/// Evaluate one execution against the thresholds. Pure rule evaluation; the
/// decision is a function of the alert multiset alone.
pub fn evaluate(input: &MonitorInput<'_>, thresholds: &MonitorThresholds) -> Verdict {
    let mut alerts = Vec::new();

    if crossed(input.revisions as f64, thresholds.revision_crit as f64) {
        alerts.push(Alert {
            check: CheckKind::RevisionCount,
            severity: AlertSeverity::Critical,
            observed: input.revisions as f64,
            threshold: thresholds.revision_crit as f64,
            detail: format!("{} code revisions", input.revisions),
        });
    } else if crossed(input.revisions as f64, thresholds.revision_warn as f64) {
        alerts.push(Alert {
            check: CheckKind::RevisionCount,
            severity: AlertSeverity::Warning,
            observed: input.revisions as f64,
            threshold: thresholds.revision_warn as f64,
            detail: format!("{} code revisions", input.revisions),
        });
    }

    if let (true, Some(rows_out)) = (input.rows_in > 0, input.rows_out) {
        let rows_in = input.rows_in as f64;
        let rows_out = rows_out as f64;
        let drop_declared = input.declared_relation == Some(RowRelation::Less);
        let growth_declared = input.declared_relation == Some(RowRelation::Greater);
        if rows_out < rows_in && !drop_declared {
            let drop_pct = (rows_in - rows_out) / rows_in * 100.0;
            if crossed(drop_pct, thresholds.row_drop_crit_pct) {
                alerts.push(Alert {
                    check: CheckKind::RowDrop,
                    severity: AlertSeverity::Critical,
                    observed: drop_pct,
                    threshold: thresholds.row_drop_crit_pct,
                    detail: format!("rows {} -> {}", input.rows_in, rows_out),
                });
            } else if crossed(drop_pct, thresholds.row_drop_warn_pct) {
                alerts.push(Alert {
                    check: CheckKind::RowDrop,
                    severity: AlertSeverity::Warning,
                    observed: drop_pct,
                    threshold: thresholds.row_drop_warn_pct,
                    detail: format!("rows {} -> {}", input.rows_in, rows_out),
                });
            }
        }
        if rows_out > rows_in && !growth_declared {
            let growth_pct = rows_out / rows_in * 100.0;
            if crossed(growth_pct, thresholds.row_growth_warn_pct) {
                alerts.push(Alert {
                    check: CheckKind::RowGrowth,
                    severity: AlertSeverity::Warning,
                    observed: growth_pct,
                    threshold: thresholds.row_growth_warn_pct,
                    detail: format!(
                        "rows {} -> {} ({:.1}x)",
                        input.rows_in,
                        rows_out,
                        rows_out / rows_in
                    ),
                });
            }
        }
    }

    let mut worst_col: Option<(&str, f64)> = None;
    for (col, after) in input.null_rates_after {
        let before = input.null_rates_before.get(col).copied().unwrap_or(0.0);
        let increase_pp = (after - before) * 100.0;
        if worst_col.map_or(true, |(_, w)| increase_pp > w) {
            worst_col = Some((col, increase_pp));
        }
    }
    if let Some((col, increase_pp)) = worst_col {
        if crossed(increase_pp, thresholds.null_increase_warn_pp) {
            alerts.push(Alert {
                check: CheckKind::NullIncrease,
                severity: AlertSeverity::Warning,
                observed: increase_pp,
                threshold: thresholds.null_increase_warn_pp,
                detail: format!("null rate of column {col} rose {increase_pp:.1}pp"),
            });
        }
    }

    if crossed(input.elapsed_s, thresholds.wall_crit_s) {
        alerts.push(Alert {
            check: CheckKind::WallClock,
            severity: AlertSeverity::Critical,
            observed: input.elapsed_s,
            threshold: thresholds.wall_crit_s,
            detail: format!("stage ran {:.1}s", input.elapsed_s),
        });
    } else if crossed(input.elapsed_s, thresholds.wall_warn_s) {
        alerts.push(Alert {
            check: CheckKind::WallClock,
            severity: AlertSeverity::Warning,
            observed: input.elapsed_s,
            threshold: thresholds.wall_warn_s,
            detail: format!("stage ran {:.1}s", input.elapsed_s),
        });
    }

    if input.cost_budget > 0.0 {
        let frac = input.cost_spent / input.cost_budget;
        if crossed(frac, thresholds.cost_crit_frac) {
            alerts.push(Alert {
                check: CheckKind::CostBudget,
                severity: AlertSeverity::Critical,
                observed: frac,
                threshold: thresholds.cost_crit_frac,
                detail: format!("cost {:.4} of budget {:.4}", input.cost_spent, input.cost_budget),
            });
        } else if crossed(frac, thresholds.cost_warn_frac) {
            alerts.push(Alert {
                check: CheckKind::CostBudget,
                severity: AlertSeverity::Warning,
                observed: frac,
                threshold: thresholds.cost_warn_frac,
                detail: format!("cost {:.4} of budget {:.4}", input.cost_spent, input.cost_budget),
            });
        }
    }

    Verdict {
        decision: decide(&alerts),
        alerts,
    }
}

/// Alert multiset -> decision. Criticals abort, except budget exhaustion
/// (recoverable by raising the budget: PAUSE) and revision churn (the code
/// path is stuck, not the data: RETRY). Two warnings escalate to RETRY.
fn decide(alerts: &[Alert]) -> Decision {
    let critical = |check: CheckKind| {
        alerts
            .iter()
            .any(|a| a.check == check && a.severity == AlertSeverity::Critical)
    };
    let any_other_critical = alerts.iter().any(|a| {
        a.severity == AlertSeverity::Critical
            && a.check != CheckKind::CostBudget
            && a.check != CheckKind::RevisionCount
    });
    if any_other_critical {
        return Decision::Abort;
    }
    if critical(CheckKind::CostBudget) {
        return Decision::Pause;
    }
    if critical(CheckKind::RevisionCount) {
        return Decision::Retry;
    }
    let warnings = alerts
        .iter()
        .filter(|a| a.severity == AlertSeverity::Warning)
        .count();
    match warnings {
        0 => Decision::Continue,
        1 => Decision::Warn,
        _ => Decision::Retry,
    }
}

// ---- failure categorization ------------------------------------------------

/// One of the fixed regex-based error categories, tried in priority order.
#[derive(Debug)]
pub struct FailureCategory {
    pub name: &'static str,
    pub pattern: &'static str,
    pub hint: &'static str,
}

/// The taxonomy, most specific first. Exactly one category (or OTHER)
/// matches any traceback.
pub const FAILURE_CATEGORIES: [FailureCategory; 14] = [
    FailureCategory {
        name: "TIMEOUT",
        pattern: r"(?i)StageTimeout|TimeoutError|timed out|wall-clock limit",
        hint: "Reduce the work per stage: operate on fewer columns, avoid quadratic joins, or pre-filter rows.",
    },
    FailureCategory {
        name: "MEMORY",
        pattern: r"(?i)MemoryError|out of memory|cannot allocate",
        hint: "Avoid materializing the full cross product; aggregate or filter before joining.",
    },
    FailureCategory {
        name: "PACKAGE_UNAVAILABLE",
        pattern: r"is not available in the sandbox|No module named",
        hint: "Only the pre-imported libraries are available; rewrite using pandas/numpy primitives.",
    },
    FailureCategory {
        name: "IMPORT_ERROR",
        pattern: r"ImportError|cannot import name",
        hint: "Use the pre-imported modules directly instead of re-importing submodules.",
    },
    FailureCategory {
        name: "SENTINEL_VALUE",
        pattern: r"(?i)sentinel|9999\.99|9\.99e\+?32|-9999",
        hint: "The data encodes missing values as numeric sentinels; replace them with nulls before aggregating.",
    },
    FailureCategory {
        name: "MERGE_ERROR",
        pattern: r"(?i)merge|misaligned key|cartesian|cross join",
        hint: "Check the join keys: verify key columns exist on both sides, share a dtype, and identify rows uniquely.",
    },
    FailureCategory {
        name: "KEY_ERROR",
        pattern: r"KeyError",
        hint: "A referenced column does not exist; check the available column names before indexing.",
    },
    FailureCategory {
        name: "INDEX_ERROR",
        pattern: r"IndexError|index out of (bounds|range)",
        hint: "Guard positional access against empty frames and short groups.",
    },
    FailureCategory {
        name: "TYPE_ERROR",
        pattern: r"TypeError|dtype mismatch",
        hint: "Coerce column dtypes explicitly before arithmetic or comparison.",
    },
    FailureCategory {
        name: "VALUE_ERROR",
        pattern: r"ValueError|could not convert",
        hint: "Validate cell contents before conversion; coerce errors to null and handle them.",
    },
    FailureCategory {
        name: "SYNTAX_ERROR",
        pattern: r"SyntaxError|IndentationError|invalid syntax",
        hint: "Emit a single well-formed stage function; check brackets and indentation.",
    },
    FailureCategory {
        name: "NAME_ERROR",
        pattern: r"NameError",
        hint: "Define every helper inside the stage function; only the pre-imported modules exist.",
    },
    FailureCategory {
        name: "FILE_FORMAT",
        pattern: r"(?i)ParserError|tokeniz|fixed.width|headerless",
        hint: "The input layout is unusual (headerless or fixed-width); rely on the profiled column names.",
    },
    FailureCategory {
        name: "OTHER",
        pattern: r"",
        hint: "Inspect the traceback tail and simplify the failing expression.",
    },
];

fn category_regexes() -> &'static Vec<regex::Regex> {
    static REGEXES: OnceLock<Vec<regex::Regex>> = OnceLock::new();
    REGEXES.get_or_init(|| {
        FAILURE_CATEGORIES
            .iter()
            .map(|c| regex::Regex::new(c.pattern).expect("static category pattern"))
            .collect()
    })
}

/// First matching category in priority order; OTHER when nothing matches.
/// Total and deterministic.
pub fn categorize_failure(traceback: &str) -> Result<&'static FailureCategory, MonitorError> {
    if traceback.trim().is_empty() {
        return Err(MonitorError::EmptyTraceback);
    }
    let regexes = category_regexes();
    for (category, re) in FAILURE_CATEGORIES.iter().zip(regexes) {
        if category.name == "OTHER" || re.is_match(traceback) {
            return Ok(category);
        }
    }
    Ok(&FAILURE_CATEGORIES[FAILURE_CATEGORIES.len() - 1])
}

// ---- cross-run pattern mining ----------------------------------------------

pub const DEFAULT_MINE_THRESHOLD: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreemptiveWarning {
    pub category: String,
    pub occurrences: usize,
    pub guidance: String,
}

/// Failure categories seen at least `min_occurrences` times across prior
/// case folders become preemptive warnings for new runs. Corrupt folders are
/// skipped with a note.
pub fn mine_patterns(
    case_roots: &[std::path::PathBuf],
    min_occurrences: usize,
) -> (Vec<PreemptiveWarning>, Vec<String>) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut notes = Vec::new();
    for root in case_roots {
        match collect_failure_categories(root) {
            Ok(categories) => {
                for c in categories {
                    *counts.entry(c).or_default() += 1;
                }
            }
            Err(e) => notes.push(format!("skipped {}: {e}", root.display())),
        }
    }
    let warnings = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_occurrences)
        .map(|(category, occurrences)| {
            let hint = FAILURE_CATEGORIES
                .iter()
                .find(|c| c.name == category)
                .map(|c| c.hint)
                .unwrap_or("Review prior failures of this kind before generating code.");
            PreemptiveWarning {
                guidance: format!(
                    "Prior runs failed {occurrences} times with {category}. {hint}"
                ),
                category,
                occurrences,
            }
        })
        .collect();
    (warnings, notes)
}

fn collect_failure_categories(root: &Path) -> Result<Vec<String>, String> {
    let (events, notes) = replay_events(root).map_err(|e| e.to_string())?;
    if events.is_empty() && !notes.is_empty() {
        return Err(notes.join("; "));
    }
    Ok(events
        .iter()
        .filter(|e| e.kind == "failure")
        .filter_map(|e| {
            e.payload
                .get("category")
                .and_then(|v| v.as_str())
                .map(str::to_string)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_input<'a>(
        before: &'a BTreeMap<String, f64>,
        after: &'a BTreeMap<String, f64>,
    ) -> MonitorInput<'a> {
        MonitorInput {
            success: true,
            rows_in: 1000,
            rows_out: Some(1000),
            null_rates_before: before,
            null_rates_after: after,
            revisions: 0,
            elapsed_s: 0.5,
            cost_spent: 0.0,
            cost_budget: 1.0,
            declared_relation: None,
        }
    }

    #[test]
    fn clean_run_continues_with_no_alerts() {
        let (b, a) = (BTreeMap::new(), BTreeMap::new());
        let verdict = evaluate(&base_input(&b, &a), &MonitorThresholds::default());
        assert!(verdict.alerts.is_empty());
        assert_eq!(verdict.decision, Decision::Continue);
    }

    #[test]
    fn ninety_five_percent_drop_aborts() {
        let (b, a) = (BTreeMap::new(), BTreeMap::new());
        let mut input = base_input(&b, &a);
        input.rows_out = Some(50);
        let verdict = evaluate(&input, &MonitorThresholds::default());
        assert_eq!(verdict.decision, Decision::Abort);
        assert_eq!(verdict.alerts[0].check, CheckKind::RowDrop);
        assert_eq!(verdict.alerts[0].severity, AlertSeverity::Critical);
    }

    #[test]
    fn growth_plus_null_spike_retries() {
        let b = BTreeMap::new();
        let a: BTreeMap<String, f64> = [("key".to_string(), 0.45)].into();
        let mut input = base_input(&b, &a);
        input.rows_in = 100;
        input.rows_out = Some(26_000);
        let verdict = evaluate(&input, &MonitorThresholds::default());
        assert_eq!(verdict.decision, Decision::Retry);
        assert_eq!(verdict.alerts.len(), 2);
    }

    #[test]
    fn declared_less_suppresses_row_drop() {
        let (b, a) = (BTreeMap::new(), BTreeMap::new());
        let mut input = base_input(&b, &a);
        input.rows_out = Some(1);
        input.declared_relation = Some(RowRelation::Less);
        let verdict = evaluate(&input, &MonitorThresholds::default());
        assert_eq!(verdict.decision, Decision::Continue);
    }

    #[test]
    fn cost_exhaustion_pauses() {
        let (b, a) = (BTreeMap::new(), BTreeMap::new());
        let mut input = base_input(&b, &a);
        input.cost_spent = 1.0;
        let verdict = evaluate(&input, &MonitorThresholds::default());
        assert_eq!(verdict.decision, Decision::Pause);
    }

    #[test]
    fn revision_critical_retries() {
        let (b, a) = (BTreeMap::new(), BTreeMap::new());
        let mut input = base_input(&b, &a);
        input.revisions = 4;
        let verdict = evaluate(&input, &MonitorThresholds::default());
        assert_eq!(verdict.decision, Decision::Retry);
    }

    #[test]
    fn key_error_categorized_with_hint() {
        let category =
            categorize_failure("Traceback...\nKeyError: 'kp_index'").unwrap();
        assert_eq!(category.name, "KEY_ERROR");
        assert!(category.hint.contains("column"));
    }

    #[test]
    fn merge_wording_beats_key_error() {
        let category = categorize_failure(
            "pandas/core/reshape/merge.py line 107\nKeyError: 'c0'",
        )
        .unwrap();
        assert_eq!(category.name, "MERGE_ERROR");
    }

    #[test]
    fn gibberish_is_other() {
        assert_eq!(categorize_failure("zzzz").unwrap().name, "OTHER");
        assert!(categorize_failure("  ").is_err());
    }

    #[test]
    fn categorization_is_deterministic() {
        let t = "ValueError: could not convert string to float";
        assert_eq!(
            categorize_failure(t).unwrap().name,
            categorize_failure(t).unwrap().name
        );
    }
}
