use std::hash::{Hash, Hasher};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::oracle::SampleSet;
use crate::query::{CmpOp, Query};
use crate::schema::SchemaDef;

/// A variable-size set of equal-width vectors. An empty set is one zero row with mask 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SetFeatures {
    pub width: usize,
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
}

impl SetFeatures {
    fn from_rows(width: usize, rows: Vec<Vec<f64>>) -> Self {
        if rows.is_empty() {
            return Self {
                width,
                values: vec![0.0; width],
                mask: vec![0.0],
            };
        }
        let mask = vec![1.0; rows.len()];
        Self {
            width,
            values: rows.concat(),
            mask,
        }
    }

    pub fn rows(&self) -> usize {
        self.mask.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.width..(r + 1) * self.width]
    }

    pub fn is_empty_set(&self) -> bool {
        self.mask.iter().all(|m| *m == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub tables: SetFeatures,
    pub joins: SetFeatures,
    pub preds: SetFeatures,
}

impl Hash for FeatureSet {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for s in [&self.tables, &self.joins, &self.preds] {
            s.width.hash(state);
            s.mask.iter().for_each(|v| v.to_bits().hash(state));
            s.values.iter().for_each(|v| v.to_bits().hash(state));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureWidths {
    pub table: usize,
    pub join: usize,
    pub pred: usize,
}

impl FeatureWidths {
    pub fn of(schema: &SchemaDef, s: usize) -> Self {
        Self {
            table: schema.tables.len() + s,
            join: schema.edges.len(),
            pred: schema.total_columns() + CmpOp::ALL.len() + 1,
        }
    }
}

/// Encodes queries for one schema and one fixed row sample.
#[derive(Debug, Clone)]
pub struct Featurizer {
    schema: SchemaDef,
    s: usize,
    sample_seed: u64,
    /// Per table, per attribute column: values at the sampled rows.
    samples: Vec<Vec<Vec<i64>>>,
}

impl Featurizer {
    pub fn new(ds: &Dataset, s: usize, sample_seed: u64) -> Result<Self> {
        let set = SampleSet::new(ds, s, sample_seed)?;
        let samples = ds
            .schema
            .tables
            .iter()
            .zip(&set.rows)
            .map(|(t, rows)| {
                t.columns
                    .iter()
                    .map(|c| {
                        let vals = ds.column(&t.name, &c.name).expect("generated column");
                        rows.iter().map(|&r| vals[r]).collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            schema: ds.schema.clone(),
            s,
            sample_seed,
            samples,
        })
    }

    pub fn schema(&self) -> &SchemaDef {
        &self.schema
    }

    pub fn sample_size(&self) -> usize {
        self.s
    }

    pub fn sample_seed(&self) -> u64 {
        self.sample_seed
    }

    pub fn widths(&self) -> FeatureWidths {
        FeatureWidths::of(&self.schema, self.s)
    }

    pub fn featurize(&self, q: &Query) -> Result<FeatureSet> {
        let schema = &self.schema;
        q.validate(schema)?;
        let w = self.widths();
        let n_tables = schema.tables.len();

        let mut table_rows = Vec::with_capacity(q.tables().len());
        for t in q.tables() {
            let ti = schema.table_index(t).expect("validated");
            let def = &schema.tables[ti];
            let mut row = vec![0.0; w.table];
            row[ti] = 1.0;
            let cols = &self.samples[ti];
            let preds: Vec<_> = q
                .predicates_on(t)
                .map(|p| (def.column_index(&p.column).expect("validated"), p.op, p.value))
                .collect();
            let effective = cols.first().map_or(def.row_count.min(self.s), Vec::len);
            for k in 0..effective {
                if preds.iter().all(|(c, op, v)| op.eval(cols[*c][k], *v)) {
                    row[n_tables + k] = 1.0;
                }
            }
            table_rows.push(row);
        }

        let mut join_rows = Vec::new();
        if q.tables().len() >= 2 {
            for (ei, e) in schema.edges.iter().enumerate() {
                let dim = if schema.is_fact(&e.pk_table) { &e.fk_table } else { &e.pk_table };
                if q.has_table(dim) {
                    let mut row = vec![0.0; w.join];
                    row[ei] = 1.0;
                    join_rows.push(row);
                }
            }
        }

        let n_cols = schema.total_columns();
        let mut pred_rows = Vec::with_capacity(q.predicates().len());
        for p in q.predicates() {
            let gi = schema.global_column_index(&p.table, &p.column).expect("validated");
            let def = schema.table(&p.table).and_then(|t| t.column(&p.column)).expect("validated");
            let mut row = vec![0.0; w.pred];
            row[gi] = 1.0;
            row[n_cols + p.op.index()] = 1.0;
            let denom = (def.domain_size.max(2) - 1) as f64;
            row[w.pred - 1] = p.value as f64 / denom;
            pred_rows.push(row);
        }

        Ok(FeatureSet {
            tables: SetFeatures::from_rows(w.table, table_rows),
            joins: SetFeatures::from_rows(w.join, join_rows),
            preds: SetFeatures::from_rows(w.pred, pred_rows),
        })
    }
}

/// One-shot featurization with a freshly drawn sample.
pub fn featurize(ds: &Dataset, q: &Query, s: usize, seed: u64) -> Result<FeatureSet> {
    if q.tables().is_empty() {
        return Err(Error::Validation("query joins no tables".into()));
    }
    Featurizer::new(ds, s, seed)?.featurize(q)
}
