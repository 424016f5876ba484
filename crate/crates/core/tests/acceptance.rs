//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::collections::HashSet;
use std::time::Instant;

use cordonlab_core::baseline::{BaselineEstimator, DEFAULT_BUCKETS};
use cordonlab_core::constraints::{
    augment, augment_pkfk_inequality, applicable, pseudo_label, AugmentOptions, HingeSpace, InequalityMode, LossForm, LossTerm,
};
use cordonlab_core::dataset::{save_dataset, ColumnRef, Correlation};
use cordonlab_core::eval::dks::{consistency_degree, pkfk_degree};
use cordonlab_core::eval::{is_violation, percentile, QErrorSummary};
use cordonlab_core::mscn::Featurizer;
use cordonlab_core::nn::grad_check;
use cordonlab_core::query::write_workload;
use cordonlab_core::schema::{synthetic_star, StarParams};
use cordonlab_core::seed::rng_for;
use cordonlab_core::trainer::loss_graph;
use cordonlab_core::workload::{
    drop_table, enumerate_subqueries, generate_workload, generate_workload_filtered, ood_set, pk_drop_options,
    split_candidates, train_test_split,
};
use cordonlab_core::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

/// 1 fact x 4 dimensions, two attribute pairs correlated at strength 0.8.
fn star() -> Result<(SchemaDef, Vec<Correlation>)> {
    let schema = synthetic_star(&StarParams::default())?;
    let corr = vec![
        Correlation {
            a: ColumnRef::new("fact", "n1"),
            b: ColumnRef::new("fact", "n2"),
            strength: 0.8,
        },
        Correlation {
            a: ColumnRef::new("d1", "n1"),
            b: ColumnRef::new("d1", "n2"),
            strength: 0.8,
        },
    ];
    Ok((schema, corr))
}

fn queries(w: &[LabeledQuery]) -> Vec<Query> {
    w.iter().map(|l| l.query.clone()).collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    percentile(&s, 50.0)
}

fn summary(est: &dyn Estimator, w: &[LabeledQuery]) -> Result<QErrorSummary> {
    Ok(eval::evaluate(est, w)?.summary)
}

// ---------------------------------------------------------------- 1

fn oracle_exactness() -> Result<Outcome> {
    let mut counts = [0usize; 3];
    let mut bad = 0usize;
    let mut ds_seed = 0u64;
    while counts.iter().any(|c| *c < 1000) {
        if ds_seed > 200 {
            return outcome(false, format!("only {counts:?} cases after 200 datasets"));
        }
        let mut rng = rng_for(SEED, "c1-dataset", ds_seed);
        let dims = rng.gen_range(2..=4);
        let schema = synthetic_star(&StarParams {
            orientation: if ds_seed.is_multiple_of(2) { Orientation::FactHoldsFk } else { Orientation::FactHoldsPk },
            fact_rows: rng.gen_range(300..1500),
            dim_rows: (0..dims).map(|_| rng.gen_range(20..200)).collect(),
            ..StarParams::default()
        })?;
        let ds = generate_dataset(&schema, ds_seed, &[])?;
        let w = generate_workload(
            &ds,
            &WorkloadConfig {
                n: 60,
                join_range: (0, dims),
                pred_range: (0, 3),
                seed: ds_seed,
            },
        )?;
        let qs = queries(&w);
        for kind in ConstraintKind::ALL {
            for p in violation_probes(&schema, &qs, kind, ds_seed) {
                if counts[kind.index()] >= 1000 {
                    break;
                }
                counts[kind.index()] += 1;
                let c: Vec<u64> = p
                    .queries()
                    .iter()
                    .map(|(_, q)| execute_count(&ds, q))
                    .collect::<Result<_>>()?;
                let ok = match p {
                    Probe::Consistency { .. } => c[0] == c[1] + c[2],
                    Probe::PkFkEquality { .. } => c[0] == c[1],
                    Probe::PkFkInequality { .. } => c[0] <= c[1],
                };
                bad += usize::from(!ok);
            }
        }
        ds_seed += 1;
    }
    outcome(
        bad == 0,
        format!("{counts:?} cases over {ds_seed} datasets, {bad} mismatches"),
    )
}

// ---------------------------------------------------------------- 2

fn gradient_correctness() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let (mut checked, mut skipped, mut failed) = (0, 0, 0);
    let mut forms = [0usize; 3];
    for i in 0..50u64 {
        let mut rng = rng_for(SEED, "c2", i);
        let schema = synthetic_star(&StarParams {
            orientation: if i % 2 == 0 { Orientation::FactHoldsFk } else { Orientation::FactHoldsPk },
            fact_rows: 400,
            dim_rows: vec![30, 40, 50],
            ..StarParams::default()
        })?;
        let ds = generate_dataset(&schema, i, &[])?;
        let w = generate_workload(
            &ds,
            &WorkloadConfig {
                n: 40,
                join_range: (0, 3),
                pred_range: (1, 3),
                seed: i,
            },
        )?;
        let f = Featurizer::new(&ds, [4, 8][i as usize % 2], i)?;
        let model = MscnModel::new(&f, [4, 6, 8][i as usize % 3], i)?;
        let mut picked: Vec<LabeledQuery> = Vec::new();
        for kind in [ConstraintKind::PkFkInequality, ConstraintKind::Consistency] {
            if let Some(lq) = w.iter().find(|l| applicable(kind, &schema, &l.query)) {
                picked.push(lq.clone());
            }
        }
        picked.extend(w.choose_multiple(&mut rng, 3).cloned());
        let opts = AugmentOptions {
            inequality_mode: if i % 3 == 0 { InequalityMode::Pseudo } else { InequalityMode::Bound },
            pseudo_k: 3,
            consistency_uses_label: i % 2 == 0,
        };
        let predictor = |qs: &[Query]| -> Result<Vec<f64>> {
            let fs = qs.iter().map(|q| f.featurize(q)).collect::<Result<Vec<_>>>()?;
            Ok(model.predict_raw(&fs.iter().collect::<Vec<_>>())?.into_iter().map(f64::exp).collect())
        };
        let mut terms: Vec<LossTerm> = Vec::new();
        for lq in &picked {
            for kind in ConstraintKind::ALL {
                if applicable(kind, &schema, &lq.query) {
                    terms.extend(augment(kind, &schema, lq, &opts, Some(&predictor), &mut rng)?.loss_terms);
                }
            }
        }
        // every graph carries a hinge and a sum-equality term
        if !terms.iter().any(|t| t.form == LossForm::HingeLowerBound) {
            if let Some(lq) = picked.iter().find(|l| applicable(ConstraintKind::PkFkInequality, &schema, &l.query)) {
                terms.extend(
                    augment_pkfk_inequality(&schema, &lq.query, InequalityMode::Bound, 1, None, &mut rng)?.loss_terms,
                );
            }
        }
        for t in &terms {
            forms[t.form as usize] += 1;
        }
        let has = |form| terms.iter().any(|t: &LossTerm| t.form == form);
        if !has(LossForm::HingeLowerBound) || !has(LossForm::SumEquality) {
            return outcome(false, format!("graph {i} lacks a hinge or sum-equality term"));
        }
        let hinge = if i % 4 == 1 { HingeSpace::Linear } else { HingeSpace::Log };
        let omega = rng.gen_range(0.1..2.0);
        let mut store = model.store.clone();
        let report = grad_check(
            &mut store,
            |st, g| loss_graph(&model, st, &f, g, &picked, &terms, omega, hinge),
            1e-5,
            1e-4,
        )?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
        skipped += report.skipped;
        failed += usize::from(!report.passed());
    }
    outcome(
        failed == 0 && worst <= 1e-4,
        format!(
            "50 graphs, terms by form {forms:?}, {checked} coordinates checked, {skipped} near kinks skipped, max rel error {worst:.2e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn pipeline_bytes(dir: &std::path::Path) -> Result<Vec<Vec<u8>>> {
    let schema = synthetic_star(&StarParams {
        fact_rows: 3000,
        dim_rows: vec![100, 120, 140, 160],
        ..StarParams::default()
    })?;
    let (_, corr) = star()?;
    let ds = generate_dataset(&schema, SEED, &corr)?;
    save_dataset(&ds, &dir.join("data.bin"))?;
    let w = generate_workload(
        &ds,
        &WorkloadConfig {
            n: 300,
            join_range: (0, 4),
            pred_range: (1, 3),
            seed: SEED,
        },
    )?;
    write_workload(&dir.join("workload.jsonl"), &w)?;
    let cfg = TrainConfig {
        epochs: 3,
        hidden: 16,
        batch_size: 64,
        seed: SEED,
        ..TrainConfig::default()
    };
    let (model, _) = train(&ds, &w, &cfg)?;
    model.save(&dir.join("model.json"))?;
    ["data.bin", "workload.jsonl", "model.json"]
        .iter()
        .map(|f| Ok(std::fs::read(dir.join(f))?))
        .collect()
}

fn determinism() -> Result<Outcome> {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let ra = pipeline_bytes(a.path())?;
    let rb = pipeline_bytes(b.path())?;
    let same: Vec<bool> = ra.iter().zip(&rb).map(|(x, y)| x == y).collect();
    let sizes: Vec<usize> = ra.iter().map(Vec::len).collect();
    outcome(
        same.iter().all(|s| *s),
        format!("dataset/workload/checkpoint identical: {same:?}, bytes {sizes:?}"),
    )
}

// ---------------------------------------------------------------- shared lab

struct Lab {
    ds: Dataset,
    train: Vec<LabeledQuery>,
    test: Vec<LabeledQuery>,
    ood: Vec<LabeledQuery>,
    probe_source: Vec<Query>,
}

impl Lab {
    fn build() -> Result<Self> {
        let (schema, corr) = star()?;
        let ds = generate_dataset(&schema, SEED, &corr)?;
        let cfg = WorkloadConfig {
            n: 6500,
            join_range: (0, 4),
            pred_range: (1, 4),
            seed: SEED,
        };
        let pool = generate_workload(&ds, &cfg)?;
        let (mut train, test) = train_test_split(pool, 1000, SEED)?;
        if train.len() < 5000 {
            return Err(Error::Generation(format!("only {} unique training queries", train.len())));
        }
        train.truncate(5000);
        let ood = ood_set(&ds, &test, 200, SEED, &train)?;
        let seen: HashSet<String> = train.iter().map(|l| l.query.canonical_key()).collect();
        let probe_source = generate_workload(
            &ds,
            &WorkloadConfig {
                n: 6000,
                seed: SEED + 1,
                ..cfg
            },
        )?
        .into_iter()
        .map(|l| l.query)
        .filter(|q| !seen.contains(&q.canonical_key()))
        .collect();
        Ok(Self {
            ds,
            train,
            test,
            ood,
            probe_source,
        })
    }

    fn fit(&self, mode: ConstraintMode, fraction: f64) -> Result<(MscnEstimator, TrainLog)> {
        let cfg = TrainConfig {
            constraint_mode: mode,
            omega: 1.0,
            epochs: 40,
            label_fraction: fraction,
            seed: SEED,
            ..TrainConfig::default()
        };
        let (model, log) = train(&self.ds, &self.train, &cfg)?;
        Ok((MscnEstimator::new(model, &self.ds)?, log))
    }

    fn probes(&self, kind: ConstraintKind) -> Vec<Probe> {
        let mut p = violation_probes(&self.ds.schema, &self.probe_source, kind, SEED);
        p.truncate(2000);
        p
    }
}

struct Models {
    off: Vec<(f64, MscnEstimator)>,
    random: Vec<(f64, MscnEstimator, TrainLog)>,
    all: (MscnEstimator, TrainLog),
}

const FRACTIONS: [f64; 4] = [0.1, 0.2, 0.5, 1.0];

impl Models {
    fn fit(lab: &Lab) -> Result<Self> {
        let mut off = Vec::new();
        let mut random = Vec::new();
        for f in FRACTIONS {
            let t = Instant::now();
            off.push((f, lab.fit(ConstraintMode::Off, f)?.0));
            let (est, log) = lab.fit(ConstraintMode::Random, f)?;
            random.push((f, est, log));
            eprintln!("  trained off/random at fraction {f} in {:.1}s", t.elapsed().as_secs_f64());
        }
        let t = Instant::now();
        let all = lab.fit(ConstraintMode::All, 1.0)?;
        eprintln!("  trained all in {:.1}s", t.elapsed().as_secs_f64());
        Ok(Self { off, random, all })
    }

    fn off_at(&self, f: f64) -> &MscnEstimator {
        &self.off.iter().find(|m| m.0 == f).expect("fraction trained").1
    }

    fn random_at(&self, f: f64) -> (&MscnEstimator, &TrainLog) {
        let m = self.random.iter().find(|m| m.0 == f).expect("fraction trained");
        (&m.1, &m.2)
    }
}

// ---------------------------------------------------------------- 4

fn learning_beats_baseline(lab: &Lab, m: &Models) -> Result<Outcome> {
    let base = BaselineEstimator::from_dataset(&lab.ds, DEFAULT_BUCKETS)?;
    let b = summary(&base, &lab.test)?;
    let n = summary(m.off_at(1.0), &lab.test)?;
    outcome(
        n.median < b.median,
        format!("in-dis median q-error: mscn {:.3} vs baseline {:.3}", n.median, b.median),
    )
}

// ---------------------------------------------------------------- 5

fn violation_reduction(lab: &Lab, m: &Models) -> Result<Outcome> {
    let mut parts = Vec::new();
    let (mut all_fall, mut big) = (true, 0);
    for kind in ConstraintKind::ALL {
        let probes = lab.probes(kind);
        if probes.len() < 2000 {
            return outcome(false, format!("only {} {kind} probes", probes.len()));
        }
        let off = violation_ratio(m.off_at(1.0), &probes, kind)?;
        let on = violation_ratio(m.random_at(1.0).0, &probes, kind)?;
        let reduction = if off > 0.0 { (off - on) / off } else { 0.0 };
        all_fall &= on < off;
        big += usize::from(reduction >= 0.2);
        parts.push(format!("{kind} {off:.4}->{on:.4} ({:.0}%)", 100.0 * reduction));
    }
    outcome(all_fall && big >= 2, format!("2000 probes each: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 6

fn ood_tail(lab: &Lab, m: &Models) -> Result<Outcome> {
    let off = summary(m.off_at(1.0), &lab.ood)?;
    let on = summary(m.random_at(1.0).0, &lab.ood)?;
    outcome(
        on.p95 <= off.p95,
        format!(
            "{} OOD queries, p95 constrained {:.3} vs unconstrained {:.3} (median {:.3} vs {:.3})",
            lab.ood.len(),
            on.p95,
            off.p95,
            on.median,
            off.median
        ),
    )
}

// ---------------------------------------------------------------- 7

fn label_fraction(lab: &Lab, m: &Models) -> Result<Outcome> {
    let mut rows = Vec::new();
    for f in FRACTIONS {
        let off = summary(m.off_at(f), &lab.ood)?.p95;
        let on = summary(m.random_at(f).0, &lab.ood)?.p95;
        rows.push(format!("{f}: off {off:.2} / random {on:.2}"));
    }
    let half = summary(m.random_at(0.5).0, &lab.ood)?.p95;
    let full = summary(m.off_at(1.0), &lab.ood)?.p95;
    outcome(
        half <= full,
        format!("OOD p95 by fraction [{}]; random@0.5 {half:.3} vs off@1.0 {full:.3}", rows.join("; ")),
    )
}

// ---------------------------------------------------------------- 8

fn random_vs_all(lab: &Lab, m: &Models) -> Result<Outcome> {
    let (rand_est, rand_log) = m.random_at(1.0);
    let (all_est, all_log) = &m.all;
    let (tr, ta) = (rand_log.mean_epoch_seconds(), all_log.mean_epoch_seconds());
    let (mr, ma) = (summary(rand_est, &lab.test)?.median, summary(all_est, &lab.test)?.median);
    let close = (mr - ma).abs() <= 0.2 * mr.min(ma);
    outcome(
        tr < ta && close,
        format!("epoch seconds random {tr:.3} vs all {ta:.3}; median q-error random {mr:.3} vs all {ma:.3}"),
    )
}

// ---------------------------------------------------------------- 9

fn pseudo_label_exactness() -> Result<Outcome> {
    let mut checked = 0usize;
    let mut wrong = 0usize;
    for (oi, o) in [Orientation::FactHoldsFk, Orientation::FactHoldsPk].into_iter().enumerate() {
        let schema = synthetic_star(&StarParams {
            orientation: o,
            fact_rows: 1500,
            dim_rows: vec![60, 80, 100],
            ..StarParams::default()
        })?;
        let ds = generate_dataset(&schema, oi as u64, &[])?;
        let oracle = OracleEstimator::new(&ds);
        let predictor = |qs: &[Query]| oracle.estimate_batch(qs);
        let w = generate_workload(
            &ds,
            &WorkloadConfig {
                n: 300,
                join_range: (1, 3),
                pred_range: (1, 3),
                seed: oi as u64,
            },
        )?;
        for k in [1, 5, 10] {
            for (i, lq) in w.iter().enumerate() {
                for (table, rel) in pk_drop_options(&schema, &lq.query) {
                    let (q1, _) = drop_table(&schema, &lq.query, &table)?;
                    if rel != PkFkRelation::Inequality || split_candidates(&schema, &q1).is_empty() {
                        continue;
                    }
                    let mut rng = rng_for(SEED, "c9", (k * 1000 + i) as u64);
                    let label = pseudo_label(&schema, &q1, k, &predictor, &mut rng)?;
                    checked += 1;
                    wrong += usize::from(label != execute_count(&ds, &q1)? as f64);
                }
            }
        }
    }
    outcome(
        checked > 0 && wrong == 0,
        format!("{checked} pseudo-labels over k in {{1,5,10}}, {wrong} inexact"),
    )
}

// ---------------------------------------------------------------- 10

fn dks_efficacy(lab: &Lab) -> Result<Outcome> {
    let (table, column) = ("fact", "n2");
    let values = lab.ds.column(table, column).expect("designated column");
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let threshold = sorted[(3 * sorted.len()).div_ceil(4) - 1];
    let mut distinct = sorted.clone();
    distinct.dedup();
    let top: Vec<i64> = distinct.into_iter().filter(|v| *v >= threshold).collect();
    let touches = |q: &Query| {
        q.predicates()
            .iter()
            .any(|p| p.table == table && p.column == column && top.iter().any(|v| p.op.eval(*v, p.value)))
    };

    let train_w: Vec<LabeledQuery> = lab.train.iter().filter(|l| !touches(&l.query)).cloned().collect();
    let cfg = TrainConfig {
        constraint_mode: ConstraintMode::Off,
        epochs: 40,
        seed: SEED,
        ..TrainConfig::default()
    };
    let (model, _) = train(&lab.ds, &train_w, &cfg)?;
    let est = MscnEstimator::new(model, &lab.ds)?;

    let seen: HashSet<String> = lab.train.iter().map(|l| l.query.canonical_key()).collect();
    let candidates: Vec<Query> = generate_workload_filtered(
        &lab.ds,
        &WorkloadConfig {
            n: 400,
            join_range: (0, 4),
            pred_range: (1, 4),
            seed: SEED + 10,
        },
        |q| touches(q) && !seen.contains(&q.canonical_key()),
    )?
    .into_iter()
    .map(|l| l.query)
    .collect();

    let before = lab.ds.executions();
    let ranking = find_dks(
        &est,
        &lab.ds.schema,
        &candidates,
        &DksConfig {
            k: 20,
            kind: ConstraintKind::Consistency,
            seed: SEED,
            ..DksConfig::default()
        },
        None,
    )?;
    let executed = lab.ds.executions() - before;

    let factor = |q: &Query| -> Result<f64> {
        let subs = enumerate_subqueries(&lab.ds.schema, q);
        let e = est.estimate_batch(&subs)?;
        let mut worst = 0.0f64;
        for (s, e) in subs.iter().zip(e) {
            worst = worst.max(execute_count(&lab.ds, s)? as f64 / e);
        }
        Ok(worst)
    };
    let top_f: Vec<f64> = ranking.entries.iter().map(|e| factor(&e.query)).collect::<Result<_>>()?;
    let mut rng = rng_for(SEED, "c10-random", 0);
    let random_f: Vec<f64> = candidates
        .choose_multiple(&mut rng, 20)
        .map(factor)
        .collect::<Result<_>>()?;
    let (mt, mr) = (median(&top_f), median(&random_f));
    outcome(
        executed == 0 && ranking.entries.len() == 20 && mt >= 2.0 * mr,
        format!(
            "{} training queries after exclusion, {} candidates; median true underestimation top-20 {mt:.3} vs random-20 {mr:.3}; {executed} executions during ranking",
            train_w.len(),
            candidates.len()
        ),
    )
}

// ---------------------------------------------------------------- 11

fn unit_exactness() -> Result<Outcome> {
    let mut checks: Vec<(&str, bool)> = vec![
        ("qerror(10,100)=10", qerror(10.0, 100.0)? == 10.0),
        ("qerror(100,10)=10", qerror(100.0, 10.0)? == 10.0),
        ("qerror(7,7)=1", qerror(7.0, 7.0)? == 1.0),
        ("qerror(0,_) rejected", qerror(0.0, 5.0).is_err()),
        ("r_cc=3 violates", is_violation(ConstraintKind::Consistency, 3.0)),
        ("r_cc=1.9 holds", !is_violation(ConstraintKind::Consistency, 1.9)),
        ("r_cc=2 holds", !is_violation(ConstraintKind::Consistency, 2.0)),
        ("r_cc=0.5 holds", !is_violation(ConstraintKind::Consistency, 0.5)),
        ("r_cc=0.49 violates", is_violation(ConstraintKind::Consistency, 0.49)),
        ("r_pkfk=1 holds", !is_violation(ConstraintKind::PkFkInequality, 1.0)),
        ("r_pkfk=1.01 violates", is_violation(ConstraintKind::PkFkInequality, 1.01)),
        ("degree (100,300,700)=10", consistency_degree(100.0, 300.0, 700.0) == 10.0),
        ("degree (100,700)=7", pkfk_degree(100.0, 700.0) == 7.0),
    ];

    // the same numbers through the ranking itself
    let schema = synthetic_star(&StarParams::default())?;
    let single = Query::new(["fact"], vec![Predicate::new("fact", "c1", CmpOp::Eq, 1)]);
    let lo_hi = FnEstimator::new("worked", |q: &Query| {
        Ok(if *q == single {
            100.0
        } else if q.predicates().iter().any(|p| p.op == CmpOp::Lt) {
            300.0
        } else {
            700.0
        })
    });
    let r = find_dks(&lo_hi, &schema, std::slice::from_ref(&single), &DksConfig::default(), None)?;
    checks.push(("ranked consistency degree 10", r.entries[0].degree == 10.0));

    let pair = Query::new(["fact", "d1"], vec![Predicate::new("fact", "c1", CmpOp::Eq, 1)]);
    let drop = FnEstimator::new("worked", |q: &Query| {
        Ok(match q.tables().len() {
            2 => 100.0,
            _ if q.has_table("fact") => 700.0,
            _ => 1.0,
        })
    });
    let cfg = DksConfig {
        kind: ConstraintKind::PkFkEquality,
        ..DksConfig::default()
    };
    let r = find_dks(&drop, &schema, std::slice::from_ref(&pair), &cfg, None)?;
    checks.push(("ranked pkfk degree 7", r.entries[0].degree == 7.0));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} exact checks", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

// ---------------------------------------------------------------- driver

fn report(id: usize, name: &str, started: Instant, r: Result<Outcome>, failures: &mut usize) {
    let secs = started.elapsed().as_secs_f64();
    match r {
        Ok(o) => {
            *failures += usize::from(!o.pass);
            println!("{} criterion {id} ({name}): {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        }
        Err(e) => {
            *failures += 1;
            println!("FAIL criterion {id} ({name}): error: {e} [{secs:.1}s]");
        }
    }
}

fn main() {
    let mut failures = 0;
    let t = Instant::now();
    report(1, "oracle constraint exactness", t, oracle_exactness(), &mut failures);
    let t = Instant::now();
    report(2, "gradient correctness", t, gradient_correctness(), &mut failures);
    let t = Instant::now();
    report(3, "determinism", t, determinism(), &mut failures);

    let t = Instant::now();
    let lab = Lab::build().and_then(|lab| {
        eprintln!(
            "  lab: {} train, {} test, {} ood, {} probe sources in {:.1}s",
            lab.train.len(),
            lab.test.len(),
            lab.ood.len(),
            lab.probe_source.len(),
            t.elapsed().as_secs_f64()
        );
        let models = Models::fit(&lab)?;
        Ok((lab, models))
    });
    match &lab {
        Ok((lab, m)) => {
            let t = Instant::now();
            report(4, "learning beats baseline", t, learning_beats_baseline(lab, m), &mut failures);
            let t = Instant::now();
            report(5, "violation reduction", t, violation_reduction(lab, m), &mut failures);
            let t = Instant::now();
            report(6, "OOD tail", t, ood_tail(lab, m), &mut failures);
            let t = Instant::now();
            report(7, "label-fraction sweep", t, label_fraction(lab, m), &mut failures);
            let t = Instant::now();
            report(8, "random vs all", t, random_vs_all(lab, m), &mut failures);
        }
        Err(e) => {
            for (id, name) in [(4, "learning beats baseline"), (5, "violation reduction"), (6, "OOD tail"), (7, "label-fraction sweep"), (8, "random vs all")] {
                println!("FAIL criterion {id} ({name}): setup error: {e}");
                failures += 1;
            }
        }
    }
    let t = Instant::now();
    report(9, "pseudo-label exactness", t, pseudo_label_exactness(), &mut failures);
    let t = Instant::now();
    match &lab {
        Ok((lab, _)) => report(10, "DKS efficacy", t, dks_efficacy(lab), &mut failures),
        Err(e) => {
            println!("FAIL criterion 10 (DKS efficacy): setup error: {e}");
            failures += 1;
        }
    }
    let t = Instant::now();
    report(11, "unit exactness", t, unit_exactness(), &mut failures);

    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
