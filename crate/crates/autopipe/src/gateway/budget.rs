//! Prompt budget management: token estimation, priority-ordered block
//! composition, goal-directed schema projection, and traceback capping.

use serde::{Deserialize, Serialize};

use crate::model::profile::ColumnProfile;

/// Priority reserved for blocks that must survive composition whole or, at
/// worst, head+tail truncated.
pub const CRITICAL_PRIORITY: u32 = 0;

/// Default column cap below which schema projection is a no-op.
pub const PROJECTION_CAP: usize = 30;

const TRACEBACK_MARKER: &str = "[...traceback elided...]\n";

/// Chars-per-token heuristic; pluggable seam for provider tokenizers.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// A typed prompt block. Lower priority is more critical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBlock {
    pub label: String,
    pub priority: u32,
    pub text: String,
    pub token_estimate: usize,
}

impl PromptBlock {
    pub fn new(label: impl Into<String>, priority: u32, text: impl Into<String>) -> PromptBlock {
        let text = text.into();
        let token_estimate = estimate_tokens(&text);
        PromptBlock {
            label: label.into(),
            priority,
            text,
            token_estimate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetWarning {
    /// Composition landed at or above 80% of the budget.
    NearBudget,
    /// A critical block alone exceeded the budget and was truncated.
    CriticalTruncation,
}

#[derive(Debug, Clone)]
pub struct ComposeResult {
    pub prompt: String,
    pub dropped: Vec<String>,
    pub truncated: bool,
    pub warning: Option<BudgetWarning>,
    pub token_estimate: usize,
}

const BLOCK_SEPARATOR: &str = "\n\n";

/// Assemble blocks greedily by ascending priority (original order within a
/// priority). Non-critical blocks that do not fit are dropped whole; critical
/// blocks are head+tail truncated (60/40 of the remaining budget). The output
/// estimate never exceeds `budget`.
pub fn compose(blocks: &[PromptBlock], budget: usize) -> ComposeResult {
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by_key(|&i| blocks[i].priority); // stable: ties keep input order

    let mut prompt = String::new();
    let mut dropped = Vec::new();
    let mut truncated = false;
    let mut warning = None;

    for &i in &order {
        let block = &blocks[i];
        let sep = if prompt.is_empty() { "" } else { BLOCK_SEPARATOR };
        let current_chars = prompt.chars().count() + sep.chars().count();
        let with_block = current_chars + block.text.chars().count();
        if with_block.div_ceil(4) <= budget {
            prompt.push_str(sep);
            prompt.push_str(&block.text);
            continue;
        }
        if block.priority != CRITICAL_PRIORITY {
            dropped.push(block.label.clone());
            continue;
        }
        // Critical block: keep the head and tail of whatever budget remains.
        let avail_chars = (budget * 4).saturating_sub(current_chars);
        if avail_chars == 0 {
            truncated = true;
            warning = Some(BudgetWarning::CriticalTruncation);
            continue;
        }
        let avail_tokens = avail_chars / 4;
        let head_tokens = (avail_tokens as f64 * 0.6).floor() as usize;
        let tail_tokens = avail_tokens - head_tokens;
        let chars: Vec<char> = block.text.chars().collect();
        let head: String = chars.iter().take(head_tokens * 4).collect();
        let tail: String = chars[chars.len().saturating_sub(tail_tokens * 4)..]
            .iter()
            .collect();
        prompt.push_str(sep);
        prompt.push_str(&head);
        prompt.push_str(&tail);
        truncated = true;
        warning = Some(BudgetWarning::CriticalTruncation);
    }

    let token_estimate = estimate_tokens(&prompt);
    if warning.is_none() && budget > 0 && token_estimate * 10 >= budget * 8 {
        warning = Some(BudgetWarning::NearBudget);
    }
    ComposeResult {
        prompt,
        dropped,
        truncated,
        warning,
        token_estimate,
    }
}

/// Goal-directed schema projection: identity at or below `cap` columns,
/// otherwise keep the `cap` columns whose name tokens overlap the goal most,
/// preserving original order among the kept columns.
pub fn project_columns(
    columns: &[ColumnProfile],
    goal: &str,
    cap: usize,
) -> Vec<ColumnProfile> {
    if columns.len() <= cap {
        return columns.to_vec();
    }
    let goal_tokens = tokenize(goal);
    let mut ranked: Vec<(usize, usize)> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let overlap = tokenize(&c.name)
                .iter()
                .filter(|t| goal_tokens.contains(*t))
                .count();
            (i, overlap)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep: Vec<usize> = ranked.into_iter().take(cap).map(|(i, _)| i).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| columns[i].clone()).collect()
}

/// Lowercase tokens split on non-alphanumeric boundaries.
pub fn tokenize(text: &str) -> std::collections::BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Keep the final `max_tokens` worth of a traceback (the exception lives at
/// the end), prefixed with an elision marker when anything was cut.
pub fn cap_traceback(text: &str, max_tokens: usize) -> String {
    if estimate_tokens(text) <= max_tokens {
        return text.to_string();
    }
    let marker_tokens = estimate_tokens(TRACEBACK_MARKER);
    let keep_tokens = max_tokens.saturating_sub(marker_tokens);
    let chars: Vec<char> = text.chars().collect();
    let suffix: String = chars[chars.len().saturating_sub(keep_tokens * 4)..]
        .iter()
        .collect();
    if keep_tokens == 0 {
        // Budget too small even for the marker; keep the raw tail.
        return chars[chars.len().saturating_sub(max_tokens * 4)..]
            .iter()
            .collect();
    }
    format!("{TRACEBACK_MARKER}{suffix}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::value::Dtype;

    fn profile_col(name: &str) -> ColumnProfile {
        ColumnProfile {
            name: name.into(),
            inferred_type: Dtype::Real,
            null_rate: 0.0,
            distinct_count: 1,
            min: None,
            max: None,
            sample_values: vec![],
        }
    }

    #[test]
    fn token_estimate_is_ceiling_chars_over_four() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("12345678"), 2);
        assert_eq!(estimate_tokens("123456789"), 3);
    }

    #[test]
    fn all_blocks_fit_keeps_order_within_priority() {
        let blocks = vec![
            PromptBlock::new("b", 1, "second"),
            PromptBlock::new("a", 0, "first"),
            PromptBlock::new("c", 1, "third"),
        ];
        let out = compose(&blocks, 1000);
        assert!(out.dropped.is_empty());
        let first = out.prompt.find("first").unwrap();
        let second = out.prompt.find("second").unwrap();
        let third = out.prompt.find("third").unwrap();
        assert!(first < second && second < third);
    }

    #[test]
    fn low_priority_block_dropped_whole() {
        let blocks = vec![
            PromptBlock::new("contract", 0, "x".repeat(200)),
            PromptBlock::new("tool-hints", 5, "y".repeat(400)),
        ];
        let out = compose(&blocks, 60);
        assert_eq!(out.dropped, vec!["tool-hints".to_string()]);
        assert!(out.prompt.contains('x'));
        assert!(!out.prompt.contains('y'));
        assert!(out.token_estimate <= 60);
    }

    #[test]
    fn critical_block_head_tail_ratio() {
        // 600 chars = 150 tokens against a 100-token budget: first 60 and
        // last 40 tokens survive.
        let text: String = (0..600)
            .map(|i| if i < 300 { 'h' } else { 't' })
            .collect();
        let blocks = vec![PromptBlock::new("critical", 0, text)];
        let out = compose(&blocks, 100);
        assert!(out.truncated);
        assert_eq!(out.warning, Some(BudgetWarning::CriticalTruncation));
        assert_eq!(out.prompt.chars().count(), 400);
        assert_eq!(out.prompt.chars().filter(|&c| c == 'h').count(), 240); // 60 tokens
        assert_eq!(out.prompt.chars().filter(|&c| c == 't').count(), 160); // 40 tokens
    }

    #[test]
    fn near_budget_warning_at_eighty_percent() {
        let blocks = vec![PromptBlock::new("a", 1, "x".repeat(320))]; // 80 tokens
        let out = compose(&blocks, 100);
        assert_eq!(out.warning, Some(BudgetWarning::NearBudget));
        let out = compose(&blocks, 200);
        assert_eq!(out.warning, None);
    }

    #[test]
    fn projection_identity_at_or_below_cap() {
        let cols: Vec<ColumnProfile> = (0..20).map(|i| profile_col(&format!("c{i}"))).collect();
        let out = project_columns(&cols, "average kp index", PROJECTION_CAP);
        assert_eq!(out.len(), 20);
        assert_eq!(out, cols);
    }

    #[test]
    fn projection_keeps_goal_overlapping_columns() {
        let mut cols: Vec<ColumnProfile> = (0..200).map(|i| profile_col(&format!("m{i}"))).collect();
        cols[150] = profile_col("kp_index");
        cols[199] = profile_col("avg_kp");
        let out = project_columns(&cols, "average Kp index", 30);
        assert_eq!(out.len(), 30);
        let names: Vec<&str> = out.iter().map(|c| c.name.as_str()).collect();
        assert!(names.contains(&"kp_index"));
        assert!(names.contains(&"avg_kp"));
    }

    #[test]
    fn projection_zero_overlap_falls_back_to_original_order() {
        let cols: Vec<ColumnProfile> = (0..40).map(|i| profile_col(&format!("c{i}"))).collect();
        let out = project_columns(&cols, "zzz qqq", 30);
        let expect: Vec<String> = (0..30).map(|i| format!("c{i}")).collect();
        let got: Vec<String> = out.iter().map(|c| c.name.clone()).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn traceback_tail_preserved_verbatim() {
        let long = format!("{}\nKeyError: 'kp'", "frame line\n".repeat(300));
        let capped = cap_traceback(&long, 50);
        assert!(capped.ends_with("KeyError: 'kp'"));
        assert!(capped.starts_with(TRACEBACK_MARKER));
        assert!(estimate_tokens(&capped) <= 50);
        let short = "ValueError: tiny";
        assert_eq!(cap_traceback(short, 50), short);
    }
}
