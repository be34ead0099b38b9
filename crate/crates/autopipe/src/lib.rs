//! Autonomous data-pipeline orchestration engine.
//!
//! Turns a natural-language goal plus tabular input files into an executed,
//! validated multi-stage pipeline. Three persistent meta-agents (orchestrator,
//! architect, monitor) plan and oversee; ephemeral ground agents generate and
//! run stage programs inside a process sandbox. Reliability comes from
//! progressive-sample validation, schema contracts, rule-based monitoring,
//! and two-level backtracking, with every decision replayable from the run's
//! case folder.

pub mod contracts;
pub mod gateway;
pub mod model;
pub mod monitor;
pub mod packs;
pub mod sampling;
pub mod sandbox;
