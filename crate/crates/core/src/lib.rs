//! A laboratory for constraint-regularized learned cardinality estimation.
//!
//! The crate covers the full loop: synthetic star-schema data with an exact
//! oracle, workload synthesis, a histogram baseline, a set-based neural
//! estimator with its own small autodiff engine, the constraint library that
//! turns database domain knowledge into loss terms and extra training samples,
//! the training loop, and evaluation (q-error reports, violation probes and the
//! search for queries whose subqueries the model badly underestimates).

pub mod baseline;
pub mod constraints;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod mscn;
pub mod nn;
pub mod oracle;
pub mod query;
pub mod schema;
pub mod seed;
pub mod trainer;
pub mod workload;

pub use constraints::{ConstraintApplication, ConstraintKind, LossForm, LossTerm};
pub use dataset::{generate_dataset, load_dataset, save_dataset, ColumnRef, Correlation, Dataset};
pub use error::{Error, Result};
pub use estimator::{Estimator, FnEstimator, OracleEstimator};
pub use eval::{evaluate, find_dks, violation_probes, violation_ratio, DksConfig, DksRanking, EvalReport, PickMode, Probe};
pub use mscn::{Featurizer, MscnEstimator, MscnModel};
pub use oracle::{execute_count, Cardinality};
pub use query::{CmpOp, LabeledQuery, Predicate, Query};
pub use schema::{ColumnDef, ColumnKind, Edge, Orientation, SchemaDef, TableDef, TableRole};
pub use trainer::{qerror, train, ConstraintMode, TrainConfig, TrainLog};
pub use workload::{PkFkRelation, SplitSpec, WorkloadConfig};
