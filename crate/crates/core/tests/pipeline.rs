use cordonlab_core::schema::{synthetic_star, StarParams};
use cordonlab_core::workload::{generate_workload, ood_set, train_test_split};
use cordonlab_core::{
    evaluate, execute_count, find_dks, generate_dataset, load_dataset, save_dataset, train, violation_probes,
    violation_ratio, ColumnRef, ConstraintKind, ConstraintMode, Correlation, DksConfig, Error, MscnEstimator,
    MscnModel, OracleEstimator, Orientation, Query, TrainConfig, WorkloadConfig,
};

fn params(orientation: Orientation) -> StarParams {
    StarParams { orientation, fact_rows: 3000, dim_rows: vec![120; 3], ..StarParams::default() }
}

fn end_to_end(orientation: Orientation) {
    let tmp = tempfile::tempdir().unwrap();
    let schema = synthetic_star(&params(orientation)).unwrap();
    let corr = [Correlation { a: ColumnRef::new("fact", "n1"), b: ColumnRef::new("fact", "n2"), strength: 0.8 }];
    let ds = generate_dataset(&schema, 11, &corr).unwrap();
    save_dataset(&ds, &tmp.path().join("d.bin")).unwrap();
    let ds = load_dataset(&tmp.path().join("d.bin")).unwrap();

    let pool = generate_workload(&ds, &WorkloadConfig { n: 400, join_range: (0, 3), pred_range: (1, 3), seed: 11 }).unwrap();
    let (train_set, test) = train_test_split(pool, 80, 11).unwrap();
    let ood = ood_set(&ds, &test, 10, 11, &train_set).unwrap();
    assert!(ood.iter().all(|o| !train_set.iter().any(|t| t.query == o.query)));

    let cfg = TrainConfig { epochs: 3, hidden: 24, batch_size: 32, sample_size: 16, ..TrainConfig::default() };
    let (model, log) = train(&ds, &train_set, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 3);
    model.save(&tmp.path().join("m.json")).unwrap();
    let model = MscnModel::load(&tmp.path().join("m.json"), &ds.schema.fingerprint()).unwrap();
    let est = MscnEstimator::new(model, &ds).unwrap();

    for set in [&test, &ood] {
        let e = evaluate(&est, set).unwrap();
        assert_eq!(e.qerrors.len(), set.len());
        assert!(e.qerrors.iter().all(|&q| q >= 1.0 && q.is_finite()));
    }

    let queries: Vec<Query> = test.iter().map(|l| l.query.clone()).collect();
    let oracle = OracleEstimator::new(&ds);
    for kind in [ConstraintKind::Consistency, ConstraintKind::PkFkEquality, ConstraintKind::PkFkInequality] {
        let probes = violation_probes(&ds.schema, &queries, kind, 11);
        if probes.is_empty() {
            continue;
        }
        assert_eq!(violation_ratio(&oracle, &probes, kind).unwrap(), 0.0, "{kind:?}");
        let r = violation_ratio(&est, &probes, kind).unwrap();
        assert!((0.0..=1.0).contains(&r));
    }

    let before = ds.executions();
    let ranking = find_dks(&est, &ds.schema, &queries, &DksConfig { k: 5, ..DksConfig::default() }, None).unwrap();
    assert_eq!(ds.executions(), before, "ranking must not execute queries");
    assert!(ranking.entries.len() <= 5);
    assert!(ranking.entries.windows(2).all(|w| w[0].degree >= w[1].degree));
    let _ = execute_count(&ds, &queries[0]).unwrap();
}

#[test]
fn pipeline_fact_holds_fk() {
    end_to_end(Orientation::FactHoldsFk);
}

#[test]
fn pipeline_fact_holds_pk() {
    end_to_end(Orientation::FactHoldsPk);
}

#[test]
fn checkpoint_rejects_foreign_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&synthetic_star(&params(Orientation::FactHoldsFk)).unwrap(), 1, &[]).unwrap();
    let wl = generate_workload(&ds, &WorkloadConfig { n: 64, join_range: (0, 2), pred_range: (1, 2), seed: 1 }).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        hidden: 8,
        sample_size: 8,
        constraint_mode: ConstraintMode::Off,
        ..TrainConfig::default()
    };
    let (model, _) = train(&ds, &wl, &cfg).unwrap();
    model.save(&tmp.path().join("m.json")).unwrap();
    let other = synthetic_star(&StarParams { dim_rows: vec![120; 2], ..params(Orientation::FactHoldsFk) }).unwrap();
    let err = MscnModel::load(&tmp.path().join("m.json"), &other.fingerprint()).unwrap_err();
    assert!(matches!(err, Error::Fingerprint { .. }), "{err}");
}
