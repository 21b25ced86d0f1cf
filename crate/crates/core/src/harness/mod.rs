//! Orchestration: per-task loops, suite runs, traces, replay and reporting.

pub mod config;
pub mod engine;
pub mod replay;
pub mod report;
pub mod suite;
pub mod trace;

pub use engine::Engine;
pub use replay::{replay, replay_records, ReplayError, ReplayReport};
pub use report::{format_table, report, ReportRow};
pub use suite::{run_suite, SuiteError, SuiteSummary};
pub use trace::{Mode, TaskResult, Trace, TraceEvent, TraceRecord};
