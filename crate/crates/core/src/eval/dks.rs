use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintKind;
use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::query::{to_jsonl_line, Query};
use crate::schema::SchemaDef;
use crate::seed::rng_for;
use crate::workload::{drop_table, enumerate_subqueries, pk_drop_options, sample_split, split_query, PkFkRelation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickMode {
    #[default]
    AllSubqueries,
    /// Score only the subquery the cheap estimator rates largest.
    LargestOnly,
}

impl FromStr for PickMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_subqueries" | "all" => Ok(PickMode::AllSubqueries),
            "largest_only" | "largest" => Ok(PickMode::LargestOnly),
            _ => Err(Error::Config(format!("unknown pick mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DksConfig {
    pub k: usize,
    /// `Consistency` or `PkFkEquality`.
    pub kind: ConstraintKind,
    pub pick_mode: PickMode,
    pub seed: u64,
    /// Candidates with more joins are skipped; `None` keeps all.
    pub max_joins: Option<usize>,
    /// Consistency splits averaged per subquery.
    pub splits: usize,
}

impl Default for DksConfig {
    fn default() -> Self {
        Self {
            k: 20,
            kind: ConstraintKind::Consistency,
            pick_mode: PickMode::AllSubqueries,
            seed: 0,
            max_joins: Some(4),
            splits: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DksEntry {
    pub query: Query,
    pub degree: f64,
    /// The subquery attaining `degree`; `None` when nothing was scorable.
    pub witness: Option<Query>,
    pub kind: ConstraintKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DksRanking {
    pub entries: Vec<DksEntry>,
}

impl DksRanking {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let wire = |q: &Query| serde_json::from_str::<serde_json::Value>(&to_jsonl_line(q, None, None)).expect("wire query");
            let line = serde_json::json!({
                "query": wire(&e.query),
                "degree": e.degree,
                "witness": e.witness.as_ref().map(wire),
                "kind": e.kind,
            });
            s.push_str(&line.to_string());
            s.push('\n');
        }
        s
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Predicted underestimation degree from estimates of a scored subquery and its probe queries.
pub fn consistency_degree(c_qi: f64, c_q1: f64, c_q2: f64) -> f64 {
    (c_q1 + c_q2) / c_qi
}

pub fn pkfk_degree(c_qi: f64, c_qb: f64) -> f64 {
    c_qb / c_qi
}

/// A scored subquery: probe groups whose degrees are combined.
struct Plan {
    subquery: Query,
    groups: Vec<Vec<usize>>,
}

/// Ranks `candidates` by the largest predicted underestimation over their
/// subqueries. Only `est` (and `cheap` in largest-only mode) are consulted.
pub fn find_dks(
    est: &dyn Estimator,
    schema: &SchemaDef,
    candidates: &[Query],
    cfg: &DksConfig,
    cheap: Option<&dyn Estimator>,
) -> Result<DksRanking> {
    if cfg.kind == ConstraintKind::PkFkInequality {
        return Err(Error::Config("DKS ranking supports consistency and pkfk_equality".into()));
    }
    if cfg.splits == 0 {
        return Err(Error::Config("splits must be at least 1".into()));
    }
    if cfg.pick_mode == PickMode::LargestOnly && cheap.is_none() {
        return Err(Error::Config("largest_only pick mode needs a cheap estimator".into()));
    }

    let kept: Vec<&Query> = candidates
        .iter()
        .filter(|q| cfg.max_joins.is_none_or(|m| q.join_count() <= m))
        .collect();
    let mut subsets: Vec<Vec<Query>> = kept.iter().map(|q| enumerate_subqueries(schema, q)).collect();

    if let (PickMode::LargestOnly, Some(cheap)) = (cfg.pick_mode, cheap) {
        let flat: Vec<Query> = subsets.iter().flatten().cloned().collect();
        let sizes = cheap.estimate_batch(&flat)?;
        let mut off = 0;
        for subs in &mut subsets {
            let n = subs.len();
            let mut best = 0;
            for i in 1..n {
                if sizes[off + i] > sizes[off + best] {
                    best = i;
                }
            }
            *subs = vec![subs.swap_remove(best)];
            off += n;
        }
    }

    let mut index: HashMap<Query, usize> = HashMap::new();
    let mut unique: Vec<Query> = Vec::new();
    let mut slot = |q: Query| -> usize {
        *index.entry(q).or_insert_with_key(|q| {
            unique.push(q.clone());
            unique.len() - 1
        })
    };

    let mut plans: Vec<Vec<Plan>> = Vec::with_capacity(kept.len());
    for (ci, subs) in subsets.into_iter().enumerate() {
        let mut rng = rng_for(cfg.seed, "dks", ci as u64);
        let mut cand = Vec::new();
        for qi in subs {
            let mut groups = Vec::new();
            match cfg.kind {
                ConstraintKind::Consistency => {
                    for _ in 0..cfg.splits {
                        let Some(spec) = sample_split(schema, &qi, &mut rng) else { break };
                        let (a, b) = split_query(schema, &qi, &spec)?;
                        groups.push(vec![slot(qi.clone()), slot(a), slot(b)]);
                    }
                }
                _ => {
                    for (t, rel) in pk_drop_options(schema, &qi) {
                        if rel == PkFkRelation::Equality {
                            let (qb, _) = drop_table(schema, &qi, &t)?;
                            groups.push(vec![slot(qi.clone()), slot(qb)]);
                        }
                    }
                }
            }
            if !groups.is_empty() {
                cand.push(Plan { subquery: qi, groups });
            }
        }
        plans.push(cand);
    }

    let values = est.estimate_batch(&unique)?;
    let mut entries: Vec<DksEntry> = kept
        .iter()
        .zip(plans)
        .map(|(q, cand)| {
            let mut best: Option<(f64, Query)> = None;
            for plan in cand {
                let degrees = plan.groups.iter().map(|g| match g.len() {
                    3 => consistency_degree(values[g[0]], values[g[1]], values[g[2]]),
                    _ => pkfk_degree(values[g[0]], values[g[1]]),
                });
                // consistency averages its splits; PK-FK takes the worst drop
                let d = match cfg.kind {
                    ConstraintKind::Consistency => degrees.sum::<f64>() / plan.groups.len() as f64,
                    _ => degrees.fold(f64::NAN, f64::max),
                };
                // 0/0 from an empty subquery carries no signal
                if d.is_nan() {
                    continue;
                }
                if best.as_ref().is_none_or(|(b, _)| d > *b) {
                    best = Some((d, plan.subquery));
                }
            }
            let (degree, witness) = match best {
                Some((d, w)) => (d, Some(w)),
                None => (0.0, None),
            };
            DksEntry {
                query: (*q).clone(),
                degree,
                witness,
                kind: cfg.kind,
            }
        })
        .collect();

    entries.sort_by(|a, b| b.degree.total_cmp(&a.degree).then_with(|| a.query.cmp(&b.query)));
    entries.truncate(cfg.k);
    Ok(DksRanking { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, Dataset};
    use crate::estimator::{FnEstimator, OracleEstimator};
    use crate::schema::{synthetic_star, Orientation, StarParams};
    use crate::workload::{generate_workload, WorkloadConfig};

    fn setup(o: Orientation) -> (Dataset, Vec<Query>) {
        let schema = synthetic_star(&StarParams {
            orientation: o,
            fact_rows: 1000,
            dim_rows: vec![40, 50, 60],
            ..StarParams::default()
        })
        .unwrap();
        let ds = generate_dataset(&schema, 3, &[]).unwrap();
        let w = generate_workload(
            &ds,
            &WorkloadConfig {
                n: 60,
                join_range: (0, 3),
                pred_range: (1, 3),
                seed: 5,
            },
        )
        .unwrap();
        (ds, w.into_iter().map(|l| l.query).collect())
    }

    #[test]
    fn worked_degrees() {
        assert_eq!(consistency_degree(100.0, 300.0, 700.0), 10.0);
        assert_eq!(pkfk_degree(100.0, 700.0), 7.0);
    }

    #[test]
    fn oracle_degrees_are_one() {
        for o in [Orientation::FactHoldsPk, Orientation::FactHoldsFk] {
            let (ds, qs) = setup(o);
            let oracle = OracleEstimator::new(&ds);
            for kind in [ConstraintKind::Consistency, ConstraintKind::PkFkEquality] {
                let cfg = DksConfig {
                    k: qs.len(),
                    kind,
                    ..DksConfig::default()
                };
                let r = find_dks(&oracle, &ds.schema, &qs, &cfg, None).unwrap();
                assert_eq!(r.entries.len(), qs.len());
                let scored: Vec<&DksEntry> = r.entries.iter().filter(|e| e.witness.is_some()).collect();
                assert!(!scored.is_empty(), "{kind} {o:?}");
                for e in &scored {
                    assert_eq!(e.degree, 1.0, "{kind} {}", e.query);
                }
                // scored entries tie, so they follow canonical order; unscored trail
                let n = scored.len();
                assert!(r.entries[..n].windows(2).all(|w| w[0].query <= w[1].query));
                assert!(r.entries[n..].iter().all(|e| e.degree == 0.0 && e.witness.is_none()));
            }
        }
    }

    #[test]
    fn ranking_invariants_and_no_execution() {
        let (ds, qs) = setup(Orientation::FactHoldsFk);
        let skew = FnEstimator::new("skew", |q: &Query| {
            let p: i64 = q.predicates().iter().map(|p| p.value).sum();
            Ok(1.0 + (p % 97) as f64 * q.tables().len() as f64)
        });
        let before = ds.executions();
        let cfg = DksConfig {
            k: 10,
            seed: 2,
            ..DksConfig::default()
        };
        let r = find_dks(&skew, &ds.schema, &qs, &cfg, None).unwrap();
        assert_eq!(ds.executions(), before);
        assert_eq!(r.entries.len(), 10);
        assert!(r.entries.windows(2).all(|w| w[0].degree >= w[1].degree));
        for e in &r.entries {
            let w = e.witness.as_ref().unwrap();
            assert!(enumerate_subqueries(&ds.schema, &e.query).contains(w));
        }
        assert_eq!(r, find_dks(&skew, &ds.schema, &qs, &cfg, None).unwrap());
    }

    #[test]
    fn largest_only_uses_cheap_pick() {
        let (ds, qs) = setup(Orientation::FactHoldsFk);
        let oracle = OracleEstimator::new(&ds);
        let cfg = DksConfig {
            k: 5,
            pick_mode: PickMode::LargestOnly,
            ..DksConfig::default()
        };
        assert!(matches!(find_dks(&oracle, &ds.schema, &qs, &cfg, None), Err(Error::Config(_))));
        // cheap estimator prefers the fewest tables: the pick is a single-table subquery
        let cheap = FnEstimator::new("cheap", |q: &Query| Ok(1e6 / q.tables().len() as f64));
        let r = find_dks(&oracle, &ds.schema, &qs, &cfg, Some(&cheap)).unwrap();
        for e in r.entries.iter().filter_map(|e| e.witness.as_ref()) {
            assert_eq!(e.tables().len(), 1);
        }
    }

    #[test]
    fn join_cap_and_kind_checks() {
        let (ds, qs) = setup(Orientation::FactHoldsFk);
        let oracle = OracleEstimator::new(&ds);
        let cfg = DksConfig {
            k: 1000,
            max_joins: Some(1),
            ..DksConfig::default()
        };
        let r = find_dks(&oracle, &ds.schema, &qs, &cfg, None).unwrap();
        assert_eq!(r.entries.len(), qs.iter().filter(|q| q.join_count() <= 1).count());
        let bad = DksConfig {
            kind: ConstraintKind::PkFkInequality,
            ..DksConfig::default()
        };
        assert!(find_dks(&oracle, &ds.schema, &qs, &bad, None).is_err());
    }

    #[test]
    fn jsonl_fields() {
        let (ds, qs) = setup(Orientation::FactHoldsFk);
        let r = find_dks(&OracleEstimator::new(&ds), &ds.schema, &qs, &DksConfig { k: 3, ..DksConfig::default() }, None).unwrap();
        let text = r.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["kind"], "consistency");
        assert!(v["query"]["tables"].is_array());
        assert!(v["degree"].is_number());
    }
}
