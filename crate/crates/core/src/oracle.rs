//! Exact cardinality evaluation: the ground-truth labeler.
//!
//! Joins are evaluated count-only. For each joined table a per-key summary is
//! built once (a pass flag for PK-side dimensions, a match count for FK-side
//! dimensions), then the probe side is scanned a single time.

use rand::seq::index;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::query::{CmpOp, Query};
use crate::schema::Orientation;
use crate::seed::rng_for;

pub type Cardinality = u64;

/// Default number of sampled rows per table for bitmap features.
pub const DEFAULT_SAMPLE_SIZE: usize = 64;

struct Filter<'a> {
    columns: Vec<(&'a [i64], CmpOp, i64)>,
}

impl<'a> Filter<'a> {
    fn new(ds: &'a Dataset, q: &Query, table: &str) -> Result<Self> {
        let data = ds
            .table(table)
            .ok_or_else(|| Error::Validation(format!("unknown table {table}")))?;
        let columns = q
            .predicates_on(table)
            .map(|p| {
                data.column(&p.column)
                    .map(|vals| (vals, p.op, p.value))
                    .ok_or_else(|| Error::Validation(format!("unknown column {}.{}", p.table, p.column)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { columns })
    }

    #[inline]
    fn passes(&self, row: usize) -> bool {
        self.columns.iter().all(|(vals, op, v)| op.eval(vals[row], *v))
    }
}

fn key_space(keys: &[i64]) -> usize {
    keys.iter().copied().max().map_or(0, |m| m as usize + 1)
}

/// Exact number of rows produced by `q` over `ds`.
pub fn execute_count(ds: &Dataset, q: &Query) -> Result<Cardinality> {
    let schema = &ds.schema;
    q.validate(schema)?;
    ds.record_execution();

    if q.tables().len() == 1 {
        let t = q.tables().iter().next().expect("one table");
        let n = ds.table(t).expect("validated").row_count();
        let f = Filter::new(ds, q, t)?;
        return Ok((0..n).filter(|&r| f.passes(r)).count() as u64);
    }

    let fact = schema.fact();
    match schema.orientation {
        Orientation::FactHoldsFk => {
            // Build: per dimension, which primary keys survive its predicates.
            let mut probes = Vec::new();
            for t in q.tables().iter().filter(|t| **t != fact.name) {
                let (_, e) = schema.edge_of(t).expect("validated dimension");
                let pk = ds.column(t, &e.pk_column).expect("key column");
                let f = Filter::new(ds, q, t)?;
                let mut pass = vec![false; key_space(pk)];
                for (row, k) in pk.iter().enumerate() {
                    pass[*k as usize] = f.passes(row);
                }
                let fk = ds.column(&fact.name, &e.fk_column).expect("key column");
                probes.push((fk, pass));
            }
            let f = Filter::new(ds, q, &fact.name)?;
            let count = (0..fact.row_count)
                .filter(|&r| f.passes(r) && probes.iter().all(|(fk, pass)| pass[fk[r] as usize]))
                .count();
            Ok(count as u64)
        }
        Orientation::FactHoldsPk => {
            let pk_col = &schema.edges[0].pk_column;
            let pk = ds.column(&fact.name, pk_col).expect("key column");
            let space = key_space(pk);
            // Build: per dimension, how many surviving rows reference each key.
            let mut counts = Vec::new();
            for t in q.tables().iter().filter(|t| **t != fact.name) {
                let (_, e) = schema.edge_of(t).expect("validated dimension");
                let fk = ds.column(t, &e.fk_column).expect("key column");
                let f = Filter::new(ds, q, t)?;
                let mut c = vec![0u64; space];
                for (row, k) in fk.iter().enumerate() {
                    if f.passes(row) {
                        c[*k as usize] += 1;
                    }
                }
                counts.push(c);
            }
            let product = |k: usize| counts.iter().map(|c| c[k]).product::<u64>();
            let total = if q.has_table(&fact.name) {
                let f = Filter::new(ds, q, &fact.name)?;
                (0..fact.row_count)
                    .filter(|&r| f.passes(r))
                    .map(|r| product(pk[r] as usize))
                    .sum()
            } else {
                (0..space).map(product).sum()
            };
            Ok(total)
        }
    }
}

/// Fixed per-table row samples for one `(dataset, s, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub requested: usize,
    /// Sorted sampled row indices per schema table (schema order).
    pub rows: Vec<Vec<usize>>,
}

impl SampleSet {
    /// Samples without replacement; `s` is clamped to each table's row count.
    pub fn new(ds: &Dataset, s: usize, seed: u64) -> Result<Self> {
        if s == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        let rows = ds
            .schema
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let n = t.row_count;
                let mut rng = rng_for(seed, "sample", i as u64);
                let mut rows = index::sample(&mut rng, n, s.min(n)).into_vec();
                rows.sort_unstable();
                rows
            })
            .collect();
        Ok(Self { requested: s, rows })
    }

    pub fn bitmaps(&self, ds: &Dataset, q: &Query) -> Result<SampleBitmaps> {
        q.validate(&ds.schema)?;
        let tables = q
            .tables()
            .iter()
            .map(|t| {
                let ti = ds.schema.table_index(t).expect("validated");
                let f = Filter::new(ds, q, t)?;
                let bits = self.rows[ti].iter().map(|&r| f.passes(r)).collect::<Vec<_>>();
                Ok(TableBitmap {
                    table: t.clone(),
                    effective_s: bits.len(),
                    bits,
                })
            })
            .collect::<Result<_>>()?;
        Ok(SampleBitmaps {
            requested_s: self.requested,
            tables,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableBitmap {
    pub table: String,
    pub effective_s: usize,
    pub bits: Vec<bool>,
}

/// Per-table bitmaps marking which sampled rows satisfy the local predicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBitmaps {
    pub requested_s: usize,
    pub tables: Vec<TableBitmap>,
}

impl SampleBitmaps {
    pub fn table(&self, name: &str) -> Option<&TableBitmap> {
        self.tables.iter().find(|t| t.table == name)
    }
}

pub fn sample_bitmaps(ds: &Dataset, q: &Query, s: usize, seed: u64) -> Result<SampleBitmaps> {
    SampleSet::new(ds, s, seed)?.bitmaps(ds, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, ColumnData, TableData};
    use crate::query::Predicate;
    use crate::schema::{synthetic_star, ColumnDef, ColumnKind, Edge, SchemaDef, StarParams, TableDef, TableRole};

    fn micro() -> Dataset {
        let schema = SchemaDef {
            tables: vec![
                TableDef {
                    name: "fact".into(),
                    role: TableRole::Fact,
                    row_count: 3,
                    columns: vec![ColumnDef {
                        name: "a".into(),
                        kind: ColumnKind::Numeric,
                        domain_size: 4,
                        skew: 0.0,
                    }],
                },
                TableDef {
                    name: "dim".into(),
                    role: TableRole::Dimension,
                    row_count: 3,
                    columns: vec![],
                },
            ],
            edges: vec![Edge {
                pk_table: "fact".into(),
                pk_column: "pk".into(),
                fk_table: "dim".into(),
                fk_column: "fk".into(),
                fk_skew: 0.0,
            }],
            orientation: Orientation::FactHoldsPk,
        };
        let col = |n: &str, v: Vec<i64>| ColumnData {
            name: n.into(),
            values: v,
        };
        Dataset::from_tables(
            schema,
            0,
            vec![
                TableData {
                    name: "fact".into(),
                    columns: vec![col("pk", vec![1, 2, 3]), col("a", vec![1, 1, 2])],
                },
                TableData {
                    name: "dim".into(),
                    columns: vec![col("fk", vec![1, 1, 3])],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn micro_join_by_hand() {
        let ds = micro();
        // pk=1 (a=1) matches two dim rows, pk=2 (a=1) matches none.
        let q = Query::new(["fact", "dim"], vec![Predicate::new("fact", "a", CmpOp::Eq, 1)]);
        assert_eq!(execute_count(&ds, &q).unwrap(), 2);
        assert_eq!(execute_count(&ds, &Query::new(["fact", "dim"], vec![])).unwrap(), 3);
        assert_eq!(ds.executions(), 2);
    }

    #[test]
    fn full_scan_and_empty_range() {
        let schema = synthetic_star(&StarParams {
            fact_rows: 700,
            dim_rows: vec![50, 60],
            ..StarParams::default()
        })
        .unwrap();
        let ds = generate_dataset(&schema, 3, &[]).unwrap();
        assert_eq!(execute_count(&ds, &Query::new(["fact"], vec![])).unwrap(), 700);
        let empty = Query::new(["fact", "d1"], vec![Predicate::new("d1", "n1", CmpOp::Lt, 0)]);
        assert_eq!(execute_count(&ds, &empty).unwrap(), 0);
        // Predicate-free join with every dimension keeps the fact row count.
        assert_eq!(execute_count(&ds, &Query::new(["fact", "d1", "d2"], vec![])).unwrap(), 700);
    }

    #[test]
    fn rejects_unknown_names() {
        let ds = micro();
        let q = Query::new(["nope"], vec![]);
        assert!(matches!(execute_count(&ds, &q), Err(Error::Validation(_))));
        let q = Query::new(["fact"], vec![Predicate::new("fact", "zz", CmpOp::Eq, 1)]);
        assert!(matches!(execute_count(&ds, &q), Err(Error::Validation(_))));
    }

    #[test]
    fn bitmaps_vacuous_and_empty() {
        let schema = synthetic_star(&StarParams {
            fact_rows: 300,
            dim_rows: vec![40],
            ..StarParams::default()
        })
        .unwrap();
        let ds = generate_dataset(&schema, 1, &[]).unwrap();
        let q = Query::new(["fact", "d1"], vec![]);
        let bm = sample_bitmaps(&ds, &q, 64, 5).unwrap();
        assert!(bm.tables.iter().all(|t| t.bits.iter().all(|b| *b)));
        assert_eq!(bm.table("fact").unwrap().effective_s, 64);
        assert_eq!(bm.table("d1").unwrap().effective_s, 40, "clamped to row count");

        let q = Query::new(["fact"], vec![Predicate::new("fact", "n1", CmpOp::Lt, 0)]);
        let bm = sample_bitmaps(&ds, &q, 64, 5).unwrap();
        assert!(bm.tables[0].bits.iter().all(|b| !*b));
        assert_eq!(bm, sample_bitmaps(&ds, &q, 64, 5).unwrap());
    }

    #[test]
    fn full_sample_matches_exact_selectivity() {
        let schema = synthetic_star(&StarParams {
            fact_rows: 500,
            dim_rows: vec![30],
            ..StarParams::default()
        })
        .unwrap();
        let ds = generate_dataset(&schema, 2, &[]).unwrap();
        for v in [3, 10, 40, 90] {
            let q = Query::new(["fact"], vec![Predicate::new("fact", "n2", CmpOp::Le, v)]);
            let bm = sample_bitmaps(&ds, &q, 500, 0).unwrap();
            let pop = bm.tables[0].bits.iter().filter(|b| **b).count();
            assert_eq!(pop as u64, execute_count(&ds, &q).unwrap());
        }
    }
}
