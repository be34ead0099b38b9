//! Progressive-sample validation: escalating row budgets, UCT-based action
//! selection, the zero-model-call confidence critic, and the per-substep
//! validation loop (linear or adaptive).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::Violation;
use crate::model::table::Table;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("parent visit count must be at least 1")]
    ParentVisits,
    #[error("confidence requires at least one successful level result")]
    NoResults,
    #[error("confidence requires every level result to be a success")]
    FailedResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SamplingLevel {
    Xs,
    S,
    M,
    Full,
}

pub const LEVELS: [SamplingLevel; 4] = [
    SamplingLevel::Xs,
    SamplingLevel::S,
    SamplingLevel::M,
    SamplingLevel::Full,
];

impl SamplingLevel {
    /// Row budget; `None` means the entire table.
    pub fn row_budget(self) -> Option<usize> {
        match self {
            SamplingLevel::Xs => Some(10),
            SamplingLevel::S => Some(100),
            SamplingLevel::M => Some(1000),
            SamplingLevel::Full => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SamplingLevel::Xs => "XS",
            SamplingLevel::S => "S",
            SamplingLevel::M => "M",
            SamplingLevel::Full => "FULL",
        }
    }

    pub fn index(self) -> usize {
        LEVELS.iter().position(|l| *l == self).unwrap()
    }

    /// Exploration-constant multiplier by depth: generate diverse variants
    /// while failure is cheap, exploit near full scale.
    pub fn exploration_factor(self) -> f64 {
        match self {
            SamplingLevel::Xs => 1.5,
            SamplingLevel::S => 1.2,
            SamplingLevel::M => 1.0,
            SamplingLevel::Full => 0.8,
        }
    }
}

/// Uniform sample without replacement, deterministic in `(row_count, level,
/// seed)` and order-preserving. FULL returns the whole table.
pub fn draw_sample(table: &Table, level: SamplingLevel, seed: u64) -> Table {
    let rows = table.row_count();
    let Some(budget) = level.row_budget() else {
        return table.clone();
    };
    let k = budget.min(rows);
    if k == rows {
        return table.clone();
    }
    let mut indices = sample_indices(rows, level, seed);
    indices.truncate(k);
    indices.sort_unstable();
    table.take_rows(&indices)
}

/// The shuffled index order a given `(rows, level, seed)` produces; exposed
/// so fixtures can be constructed around known draws.
pub fn sample_indices(rows: usize, level: SamplingLevel, seed: u64) -> Vec<usize> {
    let salt = (level.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let mut indices: Vec<usize> = (0..rows).collect();
    indices.shuffle(&mut rng);
    indices
}

// ---- UCT action selection ---------------------------------------------------

/// Actions available at each validation decision point, in fixed tie-break
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UctAction {
    ScaleUp,
    Refine,
    Restart,
    Commit,
}

pub const UCT_ACTIONS: [UctAction; 4] = [
    UctAction::ScaleUp,
    UctAction::Refine,
    UctAction::Restart,
    UctAction::Commit,
];

impl UctAction {
    pub fn label(self) -> &'static str {
        match self {
            UctAction::ScaleUp => "SCALE_UP",
            UctAction::Refine => "REFINE",
            UctAction::Restart => "RESTART",
            UctAction::Commit => "COMMIT",
        }
    }
}

/// Per-action bandit statistics under the 0/1 reward model: reward 1 when the
/// action's resulting execution succeeds with no contract violation.
#[derive(Debug, Clone, Default)]
pub struct UctStats {
    reward_sum: [f64; 4],
    visits: [u64; 4],
}

impl UctStats {
    pub fn new() -> UctStats {
        UctStats::default()
    }

    pub fn record(&mut self, action: UctAction, reward: f64) {
        let i = UCT_ACTIONS.iter().position(|a| *a == action).unwrap();
        self.reward_sum[i] += reward;
        self.visits[i] += 1;
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().sum()
    }

    pub fn arm(&self, action: UctAction) -> (f64, u64) {
        let i = UCT_ACTIONS.iter().position(|a| *a == action).unwrap();
        (self.reward_sum[i], self.visits[i])
    }
}

/// Upper-confidence score: `w/n + c * sqrt(ln N / n)`. Unvisited actions get
/// the +inf sentinel so they are tried first.
pub fn uct_score(w: f64, n: u64, parent_n: u64, c: f64) -> Result<f64, SamplingError> {
    if parent_n < 1 {
        return Err(SamplingError::ParentVisits);
    }
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    let n_f = n as f64;
    Ok(w / n_f + c * ((parent_n as f64).ln() / n_f).sqrt())
}

/// Argmax of the depth-scaled UCT scores, ties broken by the fixed action
/// order. With no visits at all, the first action wins outright.
pub fn select_action(stats: &UctStats, level: SamplingLevel, base_c: f64) -> UctAction {
    select_action_among(stats, level, base_c, &UCT_ACTIONS)
}

/// Same argmax restricted to a candidate set; the validation loop masks
/// actions whose budget is exhausted.
fn select_action_among(
    stats: &UctStats,
    level: SamplingLevel,
    base_c: f64,
    candidates: &[UctAction],
) -> UctAction {
    let parent = stats.total_visits();
    if parent == 0 {
        return candidates[0];
    }
    let c = base_c * level.exploration_factor();
    let mut best = candidates[0];
    let mut best_score = f64::NEG_INFINITY;
    for &action in candidates {
        let (w, n) = stats.arm(action);
        let score = uct_score(w, n, parent, c).expect("parent >= 1");
        if score > best_score {
            best = action;
            best_score = score;
        }
    }
    best
}

// ---- confidence critic -------------------------------------------------------

/// Elapsed-time floor for the linearity check so micro-benchmark noise on
/// tiny samples cannot zero the score.
pub const TIME_FLOOR_S: f64 = 0.05;

pub const DEFAULT_COMMIT_THRESHOLD: f64 = 0.92;

/// Row-ratio stability tolerance (10%).
const ROW_RATIO_TOLERANCE: f64 = 0.10;
/// Time growth must stay within this factor of linear.
const TIME_LINEAR_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: SamplingLevel,
    pub success: bool,
    pub schema_fingerprint: Vec<(String, String)>,
    pub rows_in: u64,
    pub rows_out: u64,
    pub elapsed_s: f64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub schema_score: f64,
    pub row_score: f64,
    pub time_score: f64,
    pub depth_score: f64,
    pub composite: f64,
    pub commit: bool,
}

/// Cross-level stability score: the product of schema, row-count, time, and
/// depth sub-scores. Inspects execution metadata only; never calls a model.
pub fn critic_confidence(
    results: &[LevelResult],
    threshold: f64,
) -> Result<ConfidenceReport, SamplingError> {
    if results.is_empty() {
        return Err(SamplingError::NoResults);
    }
    if results.iter().any(|r| !r.success) {
        return Err(SamplingError::FailedResult);
    }

    let schema_score = if results
        .windows(2)
        .all(|w| w[0].schema_fingerprint == w[1].schema_fingerprint)
    {
        1.0
    } else {
        0.0
    };

    let constant_output = results.windows(2).all(|w| w[0].rows_out == w[1].rows_out);
    let ratios: Option<Vec<f64>> = results
        .iter()
        .map(|r| (r.rows_in > 0).then(|| r.rows_out as f64 / r.rows_in as f64))
        .collect();
    let ratio_stable = ratios.is_some_and(|rs| {
        let min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = rs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max <= min * (1.0 + ROW_RATIO_TOLERANCE) + 1e-12
    });
    let row_score = if constant_output || ratio_stable { 1.0 } else { 0.0 };

    let time_score = if results.windows(2).all(|w| {
        let scale = if w[0].rows_in > 0 {
            (w[1].rows_in as f64 / w[0].rows_in as f64).max(1.0)
        } else {
            1.0
        };
        let prev = w[0].elapsed_s.max(TIME_FLOOR_S);
        let next = w[1].elapsed_s.max(TIME_FLOOR_S);
        next <= TIME_LINEAR_FACTOR * prev * scale
    }) {
        1.0
    } else {
        0.0
    };

    let depth_score = match results.len() {
        1 => 0.0,
        2 => 0.60,
        _ => 0.95,
    };

    let composite = schema_score * row_score * time_score * depth_score;
    Ok(ConfidenceReport {
        schema_score,
        row_score,
        time_score,
        depth_score,
        composite,
        commit: composite > threshold,
    })
}

// ---- validation loop ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Linear,
    Uct,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub strategy: SamplingStrategy,
    pub refinement_budget: u32,
    pub base_c: f64,
    pub commit_threshold: f64,
    /// Let the critic skip remaining levels under the linear strategy.
    pub critic_early_stop: bool,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            strategy: SamplingStrategy::Linear,
            refinement_budget: 3,
            base_c: std::f64::consts::SQRT_2,
            commit_threshold: DEFAULT_COMMIT_THRESHOLD,
            critic_early_stop: false,
            seed: 0,
        }
    }
}

/// One failed attempt: what broke and the evidence to refine or recover with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptFailure {
    pub level: SamplingLevel,
    pub kind: String,
    pub detail: String,
    pub traceback: String,
}

/// Why the loop is asking for code.
pub enum CodegenReason<'a> {
    Initial,
    Refine(&'a AttemptFailure),
    Restart,
}

/// What one execution attempt came to, as judged by the caller (sandbox
/// outcome, contract check, and monitor verdict combined).
pub enum AttemptDisposition {
    /// Level passed: execution succeeded, no critical violations, monitor
    /// said CONTINUE or WARN.
    Success(LevelResult),
    /// Execution or contract failure; refinement at the same level may help.
    Failure(AttemptFailure),
    /// Monitor escalated (ABORT, or RETRY on an anomalous success): hand the
    /// substep to recovery instead of refining locally.
    Escalate(AttemptFailure),
    /// Monitor PAUSE: persist and halt the run.
    Pause,
}

/// The driver's side of the loop: code generation (gateway-backed or
/// scripted) and execution (sandbox + contracts + monitor + events).
pub trait ValidationHooks {
    type Error;

    fn generate(&mut self, reason: CodegenReason<'_>) -> Result<String, Self::Error>;

    fn execute(
        &mut self,
        code: &str,
        level: SamplingLevel,
        revisions_so_far: u32,
    ) -> Result<AttemptDisposition, Self::Error>;
}

#[derive(Debug)]
pub struct AcceptedValidation {
    pub code: String,
    pub results: Vec<LevelResult>,
    pub revisions_used: u32,
    pub committed_early: bool,
    pub critic: Option<ConfidenceReport>,
}

#[derive(Debug)]
pub enum ValidationOutcome {
    Accepted(AcceptedValidation),
    Failed {
        evidence: Vec<AttemptFailure>,
        revisions_used: u32,
    },
    Paused,
}

/// Validate one substep's generated code across the sampling levels.
pub fn run_validation<H: ValidationHooks>(
    hooks: &mut H,
    config: &ValidationConfig,
) -> Result<ValidationOutcome, H::Error> {
    match config.strategy {
        SamplingStrategy::Linear => run_linear(hooks, config),
        SamplingStrategy::Uct => run_uct(hooks, config),
    }
}

fn run_linear<H: ValidationHooks>(
    hooks: &mut H,
    config: &ValidationConfig,
) -> Result<ValidationOutcome, H::Error> {
    let mut code = hooks.generate(CodegenReason::Initial)?;
    let mut revisions = 0u32;
    let mut results: Vec<LevelResult> = Vec::new();
    let mut evidence: Vec<AttemptFailure> = Vec::new();

    for level in LEVELS {
        let mut budget = config.refinement_budget;
        loop {
            match hooks.execute(&code, level, revisions)? {
                AttemptDisposition::Success(result) => {
                    results.push(result);
                    if config.critic_early_stop && level != SamplingLevel::Full {
                        if let Ok(report) = critic_confidence(&results, config.commit_threshold) {
                            if report.commit {
                                return Ok(ValidationOutcome::Accepted(AcceptedValidation {
                                    code,
                                    results,
                                    revisions_used: revisions,
                                    committed_early: true,
                                    critic: Some(report),
                                }));
                            }
                        }
                    }
                    break;
                }
                AttemptDisposition::Failure(failure) => {
                    evidence.push(failure.clone());
                    if budget == 0 {
                        return Ok(ValidationOutcome::Failed {
                            evidence,
                            revisions_used: revisions,
                        });
                    }
                    budget -= 1;
                    revisions += 1;
                    code = hooks.generate(CodegenReason::Refine(&failure))?;
                }
                AttemptDisposition::Escalate(failure) => {
                    evidence.push(failure);
                    return Ok(ValidationOutcome::Failed {
                        evidence,
                        revisions_used: revisions,
                    });
                }
                AttemptDisposition::Pause => return Ok(ValidationOutcome::Paused),
            }
        }
    }
    Ok(ValidationOutcome::Accepted(AcceptedValidation {
        code,
        results,
        revisions_used: revisions,
        committed_early: false,
        critic: None,
    }))
}

/// Adaptive loop: pick SCALE_UP / REFINE / RESTART / COMMIT by depth-scaled
/// UCT. REFINE and RESTART consume the refinement budget; COMMIT defers to
/// the critic. Decision count is bounded, so the loop always terminates.
fn run_uct<H: ValidationHooks>(
    hooks: &mut H,
    config: &ValidationConfig,
) -> Result<ValidationOutcome, H::Error> {
    let mut code = hooks.generate(CodegenReason::Initial)?;
    let mut revisions = 0u32;
    let mut stats = UctStats::new();
    let mut results: Vec<LevelResult> = Vec::new();
    let mut evidence: Vec<AttemptFailure> = Vec::new();
    let mut last_failure: Option<AttemptFailure> = None;
    let max_decisions = LEVELS.len() as u32 * (1 + config.refinement_budget);

    for _ in 0..max_decisions {
        let frontier = results.len().min(LEVELS.len() - 1);
        let level = LEVELS[frontier];
        let can_revise = revisions < config.refinement_budget;
        let candidates: Vec<UctAction> = UCT_ACTIONS
            .iter()
            .copied()
            .filter(|a| can_revise || !matches!(a, UctAction::Refine | UctAction::Restart))
            .collect();
        let action = select_action_among(&stats, level, config.base_c, &candidates);
        match action {
            UctAction::ScaleUp => {
                if results.len() == LEVELS.len() {
                    return Ok(ValidationOutcome::Accepted(AcceptedValidation {
                        code,
                        results,
                        revisions_used: revisions,
                        committed_early: false,
                        critic: None,
                    }));
                }
                match hooks.execute(&code, level, revisions)? {
                    AttemptDisposition::Success(result) => {
                        results.push(result);
                        stats.record(UctAction::ScaleUp, 1.0);
                        if results.len() == LEVELS.len() {
                            return Ok(ValidationOutcome::Accepted(AcceptedValidation {
                                code,
                                results,
                                revisions_used: revisions,
                                committed_early: false,
                                critic: None,
                            }));
                        }
                    }
                    AttemptDisposition::Failure(failure) => {
                        stats.record(UctAction::ScaleUp, 0.0);
                        evidence.push(failure.clone());
                        last_failure = Some(failure);
                    }
                    AttemptDisposition::Escalate(failure) => {
                        evidence.push(failure);
                        return Ok(ValidationOutcome::Failed {
                            evidence,
                            revisions_used: revisions,
                        });
                    }
                    AttemptDisposition::Pause => return Ok(ValidationOutcome::Paused),
                }
            }
            UctAction::Refine | UctAction::Restart => {
                if revisions >= config.refinement_budget {
                    return Ok(ValidationOutcome::Failed {
                        evidence,
                        revisions_used: revisions,
                    });
                }
                revisions += 1;
                let (reason, exec_level) = if action == UctAction::Refine {
                    match &last_failure {
                        Some(f) => (CodegenReason::Refine(f), level),
                        None => (CodegenReason::Restart, level),
                    }
                } else {
                    results.clear();
                    (CodegenReason::Restart, SamplingLevel::Xs)
                };
                code = hooks.generate(reason)?;
                match hooks.execute(&code, exec_level, revisions)? {
                    AttemptDisposition::Success(result) => {
                        if action == UctAction::Restart {
                            results.clear();
                        }
                        results.push(result);
                        stats.record(action, 1.0);
                        last_failure = None;
                    }
                    AttemptDisposition::Failure(failure) => {
                        stats.record(action, 0.0);
                        evidence.push(failure.clone());
                        last_failure = Some(failure);
                    }
                    AttemptDisposition::Escalate(failure) => {
                        evidence.push(failure);
                        return Ok(ValidationOutcome::Failed {
                            evidence,
                            revisions_used: revisions,
                        });
                    }
                    AttemptDisposition::Pause => return Ok(ValidationOutcome::Paused),
                }
            }
            UctAction::Commit => {
                let report = critic_confidence(&results, config.commit_threshold).ok();
                match report {
                    Some(report) if report.commit => {
                        let committed_early = results.len() < LEVELS.len();
                        stats.record(UctAction::Commit, 1.0);
                        return Ok(ValidationOutcome::Accepted(AcceptedValidation {
                            code,
                            results,
                            revisions_used: revisions,
                            committed_early,
                            critic: Some(report),
                        }));
                    }
                    _ => stats.record(UctAction::Commit, 0.0),
                }
            }
        }
    }
    Ok(ValidationOutcome::Failed {
        evidence,
        revisions_used: revisions,
    })
}
