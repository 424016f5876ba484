//! Accuracy reports, constraint-violation probes and adversarial query ranking.

pub mod dks;
pub mod probes;
pub mod report;

pub use dks::{find_dks, DksConfig, DksEntry, DksRanking, PickMode};
pub use probes::{is_violation, probe_ratios, violation_count, violation_probes, violation_ratio, write_probes, Probe};
pub use report::{evaluate, percentile, qerrors_long_csv, AccuracyRow, EvalReport, Evaluation, QErrorSummary, ViolationRow};
