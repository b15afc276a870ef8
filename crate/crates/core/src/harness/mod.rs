//! Scenario configuration, the event loop that composes every module,
//! slowdown against a pure-DRAM replay, and report output.

pub mod emit;
pub mod engine;
pub mod report;
pub mod scenario;

pub use emit::{emit_report, load_report, Format};
pub use engine::{attach_slowdown, dram_replay_scenario, load_traces, run_managed, run_scenario, run_with_traces};
pub use report::{EpochRecord, MigrationRecord, MoveKind, RunReport, TimeBreakdown, VmReport, WindowRecord, SCHEMA_VERSION};
pub use scenario::{FirstTouch, Policy, Scenario, TraceSource, VmSpec};
