//! Equi-depth histograms under attribute independence, with key-based join
//! selectivity: the traditional reference estimator.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::query::{CmpOp, Query};
use crate::schema::{Orientation, SchemaDef};

pub const DEFAULT_BUCKETS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: i64,
    pub hi: i64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnHistogram {
    pub buckets: Vec<Bucket>,
    pub distinct: u64,
}

impl ColumnHistogram {
    pub fn build(values: &[i64], buckets: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let mut distinct = 0;
        for (i, v) in sorted.iter().enumerate() {
            if i == 0 || sorted[i - 1] != *v {
                distinct += 1;
            }
        }
        let mut out: Vec<Bucket> = Vec::new();
        for i in 0..buckets {
            let (a, b) = (i * n / buckets, (i + 1) * n / buckets);
            if a == b {
                continue;
            }
            let (lo, hi) = (sorted[a], sorted[b - 1]);
            match out.last_mut() {
                Some(prev) if prev.lo == prev.hi && lo == hi && prev.hi == lo => prev.count += (b - a) as u64,
                _ => out.push(Bucket {
                    lo,
                    hi,
                    count: (b - a) as u64,
                }),
            }
        }
        Self { buckets: out, distinct }
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().map(|b| b.count).sum()
    }

    /// Estimated fraction of rows with value `< v`.
    fn fraction_below(&self, v: i64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let mut below = 0.0;
        for b in &self.buckets {
            if v > b.hi {
                below += b.count as f64;
            } else if v > b.lo {
                below += b.count as f64 * (v - b.lo) as f64 / (b.hi - b.lo + 1) as f64;
            }
        }
        below / total as f64
    }

    pub fn selectivity(&self, op: CmpOp, v: i64) -> f64 {
        match op {
            CmpOp::Lt => self.fraction_below(v),
            CmpOp::Le => self.fraction_below(v.saturating_add(1)),
            CmpOp::Gt => 1.0 - self.fraction_below(v.saturating_add(1)),
            CmpOp::Ge => 1.0 - self.fraction_below(v),
            CmpOp::Eq if self.distinct == 0 => 0.0,
            CmpOp::Eq => 1.0 / self.distinct as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableStats {
    pub rows: u64,
    pub columns: BTreeMap<String, ColumnHistogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub schema_fingerprint: String,
    pub buckets: usize,
    pub tables: BTreeMap<String, TableStats>,
}

impl BaselineStats {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Full-scan equi-depth statistics for every attribute column.
pub fn build_stats(ds: &Dataset, buckets: usize) -> Result<BaselineStats> {
    if buckets == 0 {
        return Err(Error::Config("histograms need at least one bucket".into()));
    }
    let mut tables = BTreeMap::new();
    for t in &ds.schema.tables {
        let mut columns = BTreeMap::new();
        for c in &t.columns {
            let values = ds.column(&t.name, &c.name).expect("generated column");
            columns.insert(c.name.clone(), ColumnHistogram::build(values, buckets));
        }
        tables.insert(
            t.name.clone(),
            TableStats {
                rows: t.row_count as u64,
                columns,
            },
        );
    }
    Ok(BaselineStats {
        schema_fingerprint: ds.schema.fingerprint(),
        buckets,
        tables,
    })
}

pub fn baseline_estimate(stats: &BaselineStats, schema: &SchemaDef, q: &Query) -> Result<f64> {
    let table_stats = |t: &str| {
        stats
            .tables
            .get(t)
            .ok_or_else(|| Error::Config(format!("no statistics for table {t}")))
    };
    let mut est = 1.0;
    for t in q.tables() {
        est *= table_stats(t)?.rows as f64;
    }
    for p in q.predicates() {
        let h = table_stats(&p.table)?
            .columns
            .get(&p.column)
            .ok_or_else(|| Error::Config(format!("no statistics for column {}.{}", p.table, p.column)))?;
        est *= h.selectivity(p.op, p.value);
    }
    if q.tables().len() > 1 {
        match schema.orientation {
            Orientation::FactHoldsPk => {
                let fact = table_stats(&schema.fact().name)?.rows as f64;
                est /= fact.powi(q.tables().len() as i32 - 1);
            }
            Orientation::FactHoldsFk => {
                for t in q.tables().iter().filter(|t| !schema.is_fact(t)) {
                    est /= table_stats(t)?.rows as f64;
                }
            }
        }
    }
    Ok(est.max(1.0))
}

pub struct BaselineEstimator {
    stats: BaselineStats,
    schema: SchemaDef,
}

impl BaselineEstimator {
    pub fn new(stats: BaselineStats, schema: SchemaDef) -> Self {
        Self { stats, schema }
    }

    pub fn from_dataset(ds: &Dataset, buckets: usize) -> Result<Self> {
        Ok(Self::new(build_stats(ds, buckets)?, ds.schema.clone()))
    }

    pub fn stats(&self) -> &BaselineStats {
        &self.stats
    }
}

impl Estimator for BaselineEstimator {
    fn name(&self) -> &str {
        "baseline"
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        baseline_estimate(&self.stats, &self.schema, q)
    }
}
