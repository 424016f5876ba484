use std::io::BufRead;
use std::path::{Path, PathBuf};

use cordonlab_core::baseline::{BaselineEstimator, DEFAULT_BUCKETS};
use cordonlab_core::constraints::{HingeSpace, InequalityMode};
use cordonlab_core::dataset::{load_dataset, save_dataset, ColumnRef, Correlation};
use cordonlab_core::eval::{evaluate, qerrors_long_csv, violation_count, AccuracyRow, ViolationRow};
use cordonlab_core::nn::OptimizerKind;
use cordonlab_core::query::{parse_jsonl_line, read_workload, write_workload};
use cordonlab_core::schema::{synthetic_star, StarParams};
use cordonlab_core::seed::derive_seed;
use cordonlab_core::workload::{generate_workload, ood_set, train_test_split};
use cordonlab_core::{
    generate_dataset, ConstraintKind, ConstraintMode, Dataset, DksConfig, Error, EvalReport, Estimator, MscnEstimator,
    MscnModel, Orientation, PickMode, Query, SchemaDef, TrainConfig, WorkloadConfig,
};

use crate::error::{usage, CliResult};
use crate::run_dir::RunDir;
use crate::*;

pub const DATASET_FILE: &str = "dataset.bin";
pub const SCHEMA_FILE: &str = "schema.json";
pub const MODEL_FILE: &str = "model.json";

fn load_data(run: &mut RunDir, path: &Path) -> CliResult<Dataset> {
    run.input("data", path);
    Ok(load_dataset(path)?)
}

/// Reads queries from workload-format JSONL, labels optional.
fn read_queries(path: &Path) -> CliResult<Vec<Query>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (q, _) = parse_jsonl_line(&line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(q);
    }
    Ok(out)
}

fn named_path(spec: &str, flag: &str) -> CliResult<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(usage(format!("--{flag} expects name=path, got `{spec}`"))),
    }
}

fn estimators(run: &mut RunDir, ds: &Dataset, models: &[String], baseline: bool) -> CliResult<Vec<Box<dyn Estimator>>> {
    let mut out: Vec<Box<dyn Estimator>> = Vec::new();
    if baseline {
        out.push(Box::new(BaselineEstimator::from_dataset(ds, DEFAULT_BUCKETS)?));
    }
    for spec in models {
        let (name, path) = named_path(spec, "model")?;
        run.input(&format!("model:{name}"), &path);
        let model = MscnModel::load(&path, &ds.schema.fingerprint())?;
        out.push(Box::new(MscnEstimator::new(model, ds)?.named(name)));
    }
    Ok(out)
}

pub fn gen_schema(a: &GenSchemaArgs) -> CliResult<PathBuf> {
    let mut run = RunDir::open(&a.out, "gen-schema")?;
    run.echo_config(a)?;
    let schema = synthetic_star(&StarParams {
        orientation: match a.orientation {
            OrientationArg::FactHoldsFk => Orientation::FactHoldsFk,
            OrientationArg::FactHoldsPk => Orientation::FactHoldsPk,
        },
        fact_rows: a.fact_rows,
        dim_rows: vec![a.dim_rows; a.dims],
        numeric_per_table: a.numeric,
        categorical_per_table: a.categorical,
        domain_size: a.domain,
        categorical_domain: a.categorical_domain,
        skew: a.skew,
        fk_skew: a.fk_skew,
    })?;
    run.write(SCHEMA_FILE, schema.to_json_pretty() + "\n")?;
    run.seed("master", 0);
    run.commit()
}

fn parse_correlation(spec: &str) -> CliResult<Correlation> {
    let bad = || usage(format!("--correlate expects table.col=table.col:strength, got `{spec}`"));
    let (pair, strength) = spec.rsplit_once(':').ok_or_else(bad)?;
    let (a, b) = pair.split_once('=').ok_or_else(bad)?;
    let col = |s: &str| s.split_once('.').map(|(t, c)| ColumnRef::new(t, c)).ok_or_else(bad);
    Ok(Correlation {
        a: col(a)?,
        b: col(b)?,
        strength: strength.parse().map_err(|_| bad())?,
    })
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<PathBuf> {
    let correlations = a.correlations.iter().map(|c| parse_correlation(c)).collect::<CliResult<Vec<_>>>()?;
    let mut run = RunDir::open(&a.out, "gen-data")?;
    run.echo_config(a)?;
    run.input("schema", &a.schema);
    run.seed("master", a.seed);
    let schema = SchemaDef::from_json(&std::fs::read_to_string(&a.schema)?)?;
    let ds = generate_dataset(&schema, a.seed, &correlations)?;
    save_dataset(&ds, &run.file(DATASET_FILE))?;
    run.commit()
}

pub fn gen_workload(a: &GenWorkloadArgs) -> CliResult<PathBuf> {
    if a.min_joins > a.max_joins || a.min_preds > a.max_preds {
        return Err(usage("minimum exceeds maximum in join or predicate range"));
    }
    let mut run = RunDir::open(&a.out, "gen-workload")?;
    run.echo_config(a)?;
    run.seed("master", a.seed);
    let ds = load_data(&mut run, &a.data)?;
    let pool = generate_workload(
        &ds,
        &WorkloadConfig {
            n: a.n + a.test,
            join_range: (a.min_joins, a.max_joins),
            pred_range: (a.min_preds, a.max_preds),
            seed: a.seed,
        },
    )?;
    if a.test == 0 {
        write_workload(&run.file("train.jsonl"), &pool)?;
    } else {
        let (train, test) = train_test_split(pool, a.test, a.seed)?;
        write_workload(&run.file("train.jsonl"), &train)?;
        write_workload(&run.file("test.jsonl"), &test)?;
        if a.ood_parents > 0 {
            let ood = ood_set(&ds, &test, a.ood_parents, a.seed, &train)?;
            write_workload(&run.file("ood.jsonl"), &ood)?;
        }
    }
    run.commit()
}

pub fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        omega: a.omega,
        constraint_mode: match a.mode {
            ModeArg::Off => ConstraintMode::Off,
            ModeArg::Random => ConstraintMode::Random,
            ModeArg::All => ConstraintMode::All,
        },
        inequality_mode: match a.inequality {
            InequalityArg::Pseudo => InequalityMode::Pseudo,
            InequalityArg::Bound => InequalityMode::Bound,
        },
        pseudo_k: a.pseudo_k,
        label_fraction: a.label_fraction,
        seed: a.seed,
        hinge_space: match a.hinge {
            HingeArg::Log => HingeSpace::Log,
            HingeArg::Linear => HingeSpace::Linear,
        },
        hidden: a.hidden,
        sample_size: a.sample_size,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        augment_samples: !a.no_augment_samples,
        consistency_uses_label: !a.label_free_consistency,
        ..TrainConfig::default()
    }
}

pub fn train(a: &TrainArgs) -> CliResult<PathBuf> {
    let cfg = train_config(a);
    cfg.validate()?;
    let mut run = RunDir::open(&a.out, "train")?;
    run.echo_config(&cfg)?;
    run.seed("master", a.seed);
    run.seed("featurizer", derive_seed(a.seed, "featurizer", 0));
    let ds = load_data(&mut run, &a.data)?;
    run.input("workload", &a.workload);
    let workload = read_workload(&a.workload)?;
    let (model, log) = cordonlab_core::train(&ds, &workload, &cfg)?;
    model.save(&run.file(MODEL_FILE))?;
    log.write_csv(&run.file("train_log.csv"))?;
    run.commit()
}

pub fn eval(a: &EvalArgs) -> CliResult<PathBuf> {
    if a.models.is_empty() && !a.baseline {
        return Err(usage("eval needs --model name=path or --baseline"));
    }
    let sets = a.sets.iter().map(|s| named_path(s, "set")).collect::<CliResult<Vec<_>>>()?;
    let mut run = RunDir::open(&a.out, "eval")?;
    run.echo_config(a)?;
    run.seed("master", a.seed);
    let ds = load_data(&mut run, &a.data)?;
    let ests = estimators(&mut run, &ds, &a.models, a.baseline)?;
    let mut report = EvalReport::default();
    let mut long: Vec<(String, String, Vec<f64>)> = Vec::new();
    for (set, path) in &sets {
        run.input(&format!("set:{set}"), path);
        let w = read_workload(path)?;
        for est in &ests {
            let e = evaluate(est.as_ref(), &w)?;
            report.accuracy.push(AccuracyRow {
                estimator: est.name().to_string(),
                query_set: set.clone(),
                summary: e.summary,
            });
            long.push((est.name().to_string(), set.clone(), e.qerrors));
        }
    }
    if let Some(path) = &a.probe_queries {
        run.input("probe_queries", path);
        let qs = read_queries(path)?;
        report.violations = violation_rows(&ds, &qs, &ConstraintKind::ALL, a.probes, a.seed, &ests)?;
    }
    let rows: Vec<(&str, &str, &[f64])> = long.iter().map(|(e, s, q)| (e.as_str(), s.as_str(), q.as_slice())).collect();
    run.write("qerrors_long.csv", qerrors_long_csv(&rows))?;
    run.write("accuracy.csv", report.accuracy_csv())?;
    if !report.violations.is_empty() {
        run.write("violations.csv", report.violations_csv())?;
    }
    run.write("eval.json", serde_json::to_string_pretty(&report)? + "\n")?;
    run.commit()
}

fn violation_rows(
    ds: &Dataset,
    queries: &[Query],
    kinds: &[ConstraintKind],
    limit: usize,
    seed: u64,
    ests: &[Box<dyn Estimator>],
) -> CliResult<Vec<ViolationRow>> {
    let mut rows = Vec::new();
    for &kind in kinds {
        let mut probes = cordonlab_core::violation_probes(&ds.schema, queries, kind, seed);
        probes.truncate(limit);
        for est in ests {
            let violations = violation_count(est.as_ref(), &probes, kind)?;
            rows.push(ViolationRow {
                estimator: est.name().to_string(),
                kind,
                probes: probes.len(),
                violations,
                ratio: violations as f64 / probes.len() as f64,
            });
        }
    }
    Ok(rows)
}

pub fn probe_violations(a: &ProbeArgs) -> CliResult<PathBuf> {
    let kinds: Vec<ConstraintKind> = match a.kind {
        KindArg::All => ConstraintKind::ALL.to_vec(),
        KindArg::Consistency => vec![ConstraintKind::Consistency],
        KindArg::PkfkEquality => vec![ConstraintKind::PkFkEquality],
        KindArg::PkfkInequality => vec![ConstraintKind::PkFkInequality],
    };
    let mut run = RunDir::open(&a.out, "probe-violations")?;
    run.echo_config(a)?;
    run.seed("master", a.seed);
    let ds = load_data(&mut run, &a.data)?;
    run.input("queries", &a.queries);
    let queries = read_queries(&a.queries)?;
    for &kind in &kinds {
        let mut probes = cordonlab_core::violation_probes(&ds.schema, &queries, kind, a.seed);
        probes.truncate(a.limit);
        cordonlab_core::eval::write_probes(&run.file(&format!("probes-{kind}.jsonl")), &probes)?;
    }
    let ests = estimators(&mut run, &ds, &a.models, a.baseline)?;
    if !ests.is_empty() {
        let report = EvalReport {
            accuracy: Vec::new(),
            violations: violation_rows(&ds, &queries, &kinds, a.limit, a.seed, &ests)?,
        };
        run.write("violations.csv", report.violations_csv())?;
        run.write("violations.json", serde_json::to_string_pretty(&report)? + "\n")?;
    }
    run.commit()
}

pub fn find_dks(a: &DksArgs) -> CliResult<PathBuf> {
    let cfg = DksConfig {
        k: a.k,
        kind: match a.kind {
            DksKindArg::Consistency => ConstraintKind::Consistency,
            DksKindArg::PkfkEquality => ConstraintKind::PkFkEquality,
        },
        pick_mode: match a.pick {
            PickArg::AllSubqueries => PickMode::AllSubqueries,
            PickArg::LargestOnly => PickMode::LargestOnly,
        },
        seed: a.seed,
        max_joins: (!a.no_join_cap).then_some(a.max_joins),
        splits: a.splits,
    };
    let mut run = RunDir::open(&a.out, "find-dks")?;
    run.echo_config(&cfg)?;
    run.seed("master", a.seed);
    let ds = load_data(&mut run, &a.data)?;
    run.input("model", &a.model);
    run.input("candidates", &a.candidates);
    let model = MscnModel::load(&a.model, &ds.schema.fingerprint())?;
    let est = MscnEstimator::new(model, &ds)?;
    let candidates = read_queries(&a.candidates)?;
    let cheap = match cfg.pick_mode {
        PickMode::LargestOnly => Some(BaselineEstimator::from_dataset(&ds, DEFAULT_BUCKETS)?),
        PickMode::AllSubqueries => None,
    };
    let ranking = cordonlab_core::find_dks(
        &est,
        &ds.schema,
        &candidates,
        &cfg,
        cheap.as_ref().map(|c| c as &dyn Estimator),
    )?;
    ranking.write_jsonl(&run.file("dks.jsonl"))?;
    run.commit()
}

/// `eval.json` and `violations.json` files in `dir` and its immediate subdirectories, sorted.
fn report_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut dirs = vec![dir.to_path_buf()];
    let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subs.sort();
    dirs.extend(subs);
    let mut out = Vec::new();
    for d in dirs {
        for name in ["eval.json", "violations.json"] {
            let p = d.join(name);
            if p.is_file() {
                out.push(p);
            }
        }
    }
    Ok(out)
}

pub fn report(a: &ReportArgs) -> CliResult<PathBuf> {
    let target = a.out.clone().unwrap_or_else(|| a.runs[0].clone());
    let mut merged = EvalReport::default();
    let mut inputs = Vec::new();
    for dir in &a.runs {
        if !dir.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("run directory {} not found", dir.display()),
            ))
            .into());
        }
        for f in report_files(dir)? {
            let part: EvalReport = serde_json::from_str(&std::fs::read_to_string(&f)?)
                .map_err(|e| Error::Format(format!("{}: {e}", f.display())))?;
            merged.merge(part);
            inputs.push(f);
        }
    }
    if merged.accuracy.is_empty() && merged.violations.is_empty() {
        return Err(Error::Validation("no eval.json or violations.json found in the given runs".into()).into());
    }
    let mut run = RunDir::open(&target, "report")?;
    run.echo_config(a)?;
    for (i, f) in inputs.iter().enumerate() {
        run.input(&format!("report:{i}"), f);
    }
    run.write("report.csv", merged.wide_csv())?;
    run.write("report_accuracy.csv", merged.accuracy_csv())?;
    run.write("report_violations.csv", merged.violations_csv())?;
    run.commit()
}
