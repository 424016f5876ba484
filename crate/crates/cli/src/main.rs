//! `cordonlab`: pipeline driver writing self-describing run directories.

mod commands;
mod error;
mod run_dir;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cordonlab", version, about = "Constraint-regularized learned cardinality estimation laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic star schema.
    GenSchema(GenSchemaArgs),
    /// Generate a dataset for a schema.
    GenData(GenDataArgs),
    /// Generate labeled train/test/OOD workloads.
    GenWorkload(GenWorkloadArgs),
    /// Train an MSCN model.
    Train(TrainArgs),
    /// Q-error report (and optional violation ratios) for estimators.
    Eval(EvalArgs),
    /// Generate constraint probes and measure violation ratios.
    ProbeViolations(ProbeArgs),
    /// Rank candidate queries by predicted subquery underestimation.
    FindDks(DksArgs),
    /// Join eval reports from run directories into one table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrientationArg {
    /// Fact table holds the foreign keys.
    FactHoldsFk,
    /// Fact table holds the primary key referenced by every dimension.
    FactHoldsPk,
}

#[derive(Args, Serialize)]
pub struct GenSchemaArgs {
    #[arg(long, value_enum, default_value = "fact-holds-fk")]
    pub orientation: OrientationArg,
    #[arg(long, default_value_t = 4)]
    pub dims: usize,
    #[arg(long, default_value_t = 20_000)]
    pub fact_rows: usize,
    #[arg(long, default_value_t = 500)]
    pub dim_rows: usize,
    #[arg(long, default_value_t = 2)]
    pub numeric: usize,
    #[arg(long, default_value_t = 1)]
    pub categorical: usize,
    #[arg(long, default_value_t = 100)]
    pub domain: u64,
    #[arg(long, default_value_t = 12)]
    pub categorical_domain: u64,
    #[arg(long, default_value_t = 0.6)]
    pub skew: f64,
    #[arg(long, default_value_t = 0.8)]
    pub fk_skew: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `table.col=table.col:strength`; the second column follows the first.
    #[arg(long = "correlate")]
    pub correlations: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct GenWorkloadArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub min_joins: usize,
    #[arg(long, default_value_t = 4)]
    pub max_joins: usize,
    #[arg(long, default_value_t = 1)]
    pub min_preds: usize,
    #[arg(long, default_value_t = 4)]
    pub max_preds: usize,
    /// Hold out this many queries as `test.jsonl`.
    #[arg(long, default_value_t = 0)]
    pub test: usize,
    /// Build `ood.jsonl` from the subqueries of this many test queries.
    #[arg(long, default_value_t = 0, requires = "test")]
    pub ood_parents: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Off,
    Random,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InequalityArg {
    Pseudo,
    Bound,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HingeArg {
    Log,
    Linear,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long, value_enum, default_value = "random")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 64)]
    pub sample_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub label_fraction: f64,
    #[arg(long, value_enum, default_value = "pseudo")]
    pub inequality: InequalityArg,
    #[arg(long, default_value_t = 5)]
    pub pseudo_k: usize,
    #[arg(long, value_enum, default_value = "log")]
    pub hinge: HingeArg,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    /// Keep PK-FK equality samples out of the empirical loss.
    #[arg(long)]
    pub no_augment_samples: bool,
    /// Consistency terms compare the split halves with the model's own parent estimate.
    #[arg(long)]
    pub label_free_consistency: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `name=path/to/model.json`, repeatable.
    #[arg(long = "model")]
    pub models: Vec<String>,
    /// Include the histogram baseline as `baseline`.
    #[arg(long)]
    pub baseline: bool,
    /// `name=path/to/queries.jsonl`, repeatable.
    #[arg(long = "set", required = true)]
    pub sets: Vec<String>,
    /// Also measure violation ratios on probes built from these queries.
    #[arg(long)]
    pub probe_queries: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Consistency,
    PkfkEquality,
    PkfkInequality,
    All,
}

#[derive(Args, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub kind: KindArg,
    /// Probes kept per kind.
    #[arg(long, default_value_t = 2000)]
    pub limit: usize,
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DksKindArg {
    Consistency,
    PkfkEquality,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PickArg {
    AllSubqueries,
    /// Score only the subquery the histogram baseline rates largest.
    LargestOnly,
}

#[derive(Args, Serialize)]
pub struct DksArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "consistency")]
    pub kind: DksKindArg,
    #[arg(long, value_enum, default_value = "all-subqueries")]
    pub pick: PickArg,
    #[arg(long, default_value_t = 4, conflicts_with = "no_join_cap")]
    pub max_joins: usize,
    #[arg(long)]
    pub no_join_cap: bool,
    #[arg(long, default_value_t = 1)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct ReportArgs {
    /// Run directories holding `eval.json` / `violations.json`, searched one level deep.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Defaults to the first run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::GenSchema(a) => commands::gen_schema(&a),
        Command::GenData(a) => commands::gen_data(&a),
        Command::GenWorkload(a) => commands::gen_workload(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::ProbeViolations(a) => commands::probe_violations(&a),
        Command::FindDks(a) => commands::find_dks(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(dir) => println!("{}", dir.display()),
        Err(e) => {
            eprintln!("{}", e.line());
            std::process::exit(e.exit_code());
        }
    }
}
