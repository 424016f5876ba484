//! Workload synthesis and the constraint-guided query transforms.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::oracle::execute_count;
use crate::query::{CmpOp, LabeledQuery, Predicate, Query};
use crate::schema::{ColumnKind, Orientation, SchemaDef};
use crate::seed::{rng_for, Rng};

/// A consistency split: `column < point` versus `column >= point`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitSpec {
    pub table: String,
    pub column: String,
    pub point: i64,
}

/// How the cardinality of a PK-side drop relates to the original query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PkFkRelation {
    /// `|q'| = |q|`: the dropped table carried no predicate.
    Equality,
    /// `|q'| >= |q|`: the dropped table carried predicates.
    Inequality,
}

/// Unreferenced numeric columns with at least two domain values in `q`'s tables.
pub fn split_candidates(schema: &SchemaDef, q: &Query) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for t in q.tables() {
        let Some(def) = schema.table(t) else { continue };
        for c in &def.columns {
            if c.kind == ColumnKind::Numeric && c.domain_size >= 2 && !q.references_column(t, &c.name) {
                out.push((t.clone(), c.name.clone()));
            }
        }
    }
    out
}

/// Picks a split column uniformly and a point uniformly from `(0, domain_size)`.
pub fn sample_split(schema: &SchemaDef, q: &Query, rng: &mut Rng) -> Option<SplitSpec> {
    let candidates = split_candidates(schema, q);
    let (table, column) = candidates.choose(rng)?.clone();
    let domain = schema.table(&table)?.column(&column)?.domain_size as i64;
    let point = rng.gen_range(1..domain);
    Some(SplitSpec { table, column, point })
}

pub fn split_query(schema: &SchemaDef, q: &Query, spec: &SplitSpec) -> Result<(Query, Query)> {
    let na = |m: String| Err(Error::Applicability(m));
    if !q.has_table(&spec.table) {
        return na(format!("split column {}.{} is outside the join graph", spec.table, spec.column));
    }
    let col = schema
        .table(&spec.table)
        .and_then(|t| t.column(&spec.column))
        .ok_or_else(|| Error::Applicability(format!("unknown split column {}.{}", spec.table, spec.column)))?;
    if col.kind != ColumnKind::Numeric {
        return na(format!("split column {}.{} is categorical", spec.table, spec.column));
    }
    if q.references_column(&spec.table, &spec.column) {
        return na(format!("split column {}.{} is already referenced", spec.table, spec.column));
    }
    if spec.point <= 0 || spec.point >= col.domain_size as i64 {
        return na(format!("split point {} outside (0, {})", spec.point, col.domain_size));
    }
    let lo = q.with_predicate(Predicate::new(&spec.table, &spec.column, CmpOp::Lt, spec.point));
    let hi = q.with_predicate(Predicate::new(&spec.table, &spec.column, CmpOp::Ge, spec.point));
    Ok((lo, hi))
}

/// PK-side tables that can be dropped from `q`, with the relation each drop implies.
pub fn pk_drop_options(schema: &SchemaDef, q: &Query) -> Vec<(String, PkFkRelation)> {
    let fact = &schema.fact().name;
    if !q.has_table(fact) || q.tables().len() < 2 {
        return Vec::new();
    }
    let relation = |t: &str| {
        if q.has_predicate_on(t) {
            PkFkRelation::Inequality
        } else {
            PkFkRelation::Equality
        }
    };
    match schema.orientation {
        Orientation::FactHoldsPk => vec![(fact.clone(), relation(fact))],
        Orientation::FactHoldsFk => q
            .tables()
            .iter()
            .filter(|t| *t != fact)
            .map(|t| (t.clone(), relation(t)))
            .collect(),
    }
}

pub fn drop_table(schema: &SchemaDef, q: &Query, table: &str) -> Result<(Query, PkFkRelation)> {
    let relation = pk_drop_options(schema, q)
        .into_iter()
        .find(|(t, _)| t == table)
        .map(|(_, r)| r)
        .ok_or_else(|| Error::Applicability(format!("{table} is not a droppable PK-side table of {q}")))?;
    Ok((q.without_table(table), relation))
}

/// Drops the first droppable PK-side table in canonical order.
pub fn drop_pk_table(schema: &SchemaDef, q: &Query) -> Result<(Query, PkFkRelation)> {
    let (t, _) = pk_drop_options(schema, q)
        .into_iter()
        .next()
        .ok_or_else(|| Error::Applicability(format!("no droppable PK-side table in {q}")))?;
    drop_table(schema, q, &t)
}

/// PK-side tables that can be joined to `q` without predicates.
pub fn pk_add_options(schema: &SchemaDef, q: &Query) -> Vec<String> {
    let fact = &schema.fact().name;
    match schema.orientation {
        Orientation::FactHoldsPk if !q.has_table(fact) => vec![fact.clone()],
        Orientation::FactHoldsPk => Vec::new(),
        Orientation::FactHoldsFk if q.has_table(fact) => schema
            .tables
            .iter()
            .filter(|t| t.name != *fact && !q.has_table(&t.name))
            .map(|t| t.name.clone())
            .collect(),
        Orientation::FactHoldsFk => Vec::new(),
    }
}

pub fn add_table(schema: &SchemaDef, q: &Query, table: &str) -> Result<Query> {
    if !pk_add_options(schema, q).iter().any(|t| t == table) {
        return Err(Error::Applicability(format!("{table} cannot be joined to {q} on its key")));
    }
    Ok(q.with_table(table))
}

/// Joins the first addable PK-side table in canonical order.
pub fn add_pk_table(schema: &SchemaDef, q: &Query) -> Result<Query> {
    let t = pk_add_options(schema, q)
        .into_iter()
        .next()
        .ok_or_else(|| Error::Applicability(format!("nothing can be added to {q}")))?;
    add_table(schema, q, &t)
}

/// All connected sub-join-graphs of `q`, each keeping its tables' predicates.
/// Ordered by size, then canonically; the last element is `q` itself.
pub fn enumerate_subqueries(schema: &SchemaDef, q: &Query) -> Vec<Query> {
    let tables: Vec<&String> = q.tables().iter().collect();
    let n = tables.len();
    let mut out = Vec::new();
    for mask in 1u32..(1u32 << n) {
        let keep: BTreeSet<String> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| tables[i].clone())
            .collect();
        if Query::is_connected_set(schema, &keep) {
            out.push(q.restrict_to(&keep));
        }
    }
    out.sort_by(|a, b| a.tables().len().cmp(&b.tables().len()).then_with(|| a.cmp(b)));
    out
}

/// All connected table sets of the given size, in canonical order.
pub fn join_graphs(schema: &SchemaDef, size: usize) -> Vec<BTreeSet<String>> {
    let names: Vec<&String> = schema.tables.iter().map(|t| &t.name).collect();
    let n = names.len();
    let mut out: Vec<BTreeSet<String>> = Vec::new();
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() as usize != size {
            continue;
        }
        let set: BTreeSet<String> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| names[i].clone()).collect();
        if Query::is_connected_set(schema, &set) {
            out.push(set);
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub n: usize,
    /// Inclusive range of join counts.
    pub join_range: (usize, usize),
    /// Inclusive range of predicate counts.
    pub pred_range: (usize, usize),
    pub seed: u64,
}

const MAX_ATTEMPTS_PER_QUERY: usize = 10_000;

fn random_query(ds: &Dataset, cfg: &WorkloadConfig, graphs: &[Vec<BTreeSet<String>>], rng: &mut Rng) -> Query {
    let schema = &ds.schema;
    let joins = rng.gen_range(cfg.join_range.0..=cfg.join_range.1);
    let tables = graphs[joins - cfg.join_range.0].choose(rng).expect("nonempty").clone();
    let mut columns: Vec<(&str, usize)> = Vec::new();
    for t in &tables {
        let def = schema.table(t).expect("schema table");
        columns.extend((0..def.columns.len()).map(|i| (t.as_str(), i)));
    }
    let n_preds = rng.gen_range(cfg.pred_range.0..=cfg.pred_range.1).min(columns.len());
    let (chosen, _) = columns.partial_shuffle(rng, n_preds);
    let mut preds = Vec::with_capacity(n_preds);
    for (t, ci) in chosen.iter() {
        let def = &schema.table(t).expect("schema table").columns[*ci];
        let values = ds.column(t, &def.name).expect("generated column");
        let value = values[rng.gen_range(0..values.len())];
        let op = match def.kind {
            ColumnKind::Categorical => CmpOp::Eq,
            ColumnKind::Numeric => *CmpOp::ALL.choose(rng).expect("five ops"),
        };
        preds.push(Predicate::new(*t, &def.name, op, value));
    }
    Query::new(tables, preds)
}

/// Generates `cfg.n` labeled queries with nonzero cardinality.
pub fn generate_workload(ds: &Dataset, cfg: &WorkloadConfig) -> Result<Vec<LabeledQuery>> {
    generate_workload_filtered(ds, cfg, |_| true)
}

/// As [`generate_workload`], additionally rejecting queries failing `accept`.
pub fn generate_workload_filtered<F>(ds: &Dataset, cfg: &WorkloadConfig, accept: F) -> Result<Vec<LabeledQuery>>
where
    F: Fn(&Query) -> bool,
{
    let schema = &ds.schema;
    let (jlo, jhi) = cfg.join_range;
    let (plo, phi) = cfg.pred_range;
    if jlo > jhi || plo > phi {
        return Err(Error::Config(format!("empty range in {cfg:?}")));
    }
    let max_joins = schema.tables.len() - 1;
    if jhi > max_joins {
        return Err(Error::Config(format!("join range {jlo}..={jhi} exceeds the {max_joins} joins the schema allows")));
    }
    let graphs: Vec<Vec<BTreeSet<String>>> = (jlo..=jhi).map(|j| join_graphs(schema, j + 1)).collect();
    if let Some(j) = graphs.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!("no connected join graph with {} joins", jlo + j)));
    }

    let mut out = Vec::with_capacity(cfg.n);
    let mut attempts = 0usize;
    for i in 0..cfg.n {
        let mut rng = rng_for(cfg.seed, "workload", i as u64);
        let mut tries = 0;
        loop {
            tries += 1;
            attempts += 1;
            if tries > MAX_ATTEMPTS_PER_QUERY {
                return Err(Error::Generation(format!(
                    "query #{i} rejected {MAX_ATTEMPTS_PER_QUERY} times under {cfg:?}"
                )));
            }
            let q = random_query(ds, cfg, &graphs, &mut rng);
            if !accept(&q) {
                continue;
            }
            let card = execute_count(ds, &q)?;
            if card > 0 {
                out.push(LabeledQuery { query: q, cardinality: card });
                break;
            }
        }
    }
    if cfg.n > 0 && attempts > cfg.n * 100 {
        return Err(Error::Generation(format!(
            "rejection rate {:.2}% exceeds 99% under {cfg:?}",
            100.0 * (attempts - cfg.n) as f64 / attempts as f64
        )));
    }
    Ok(out)
}

/// Deduplicates `pool` on canonical form and splits it into disjoint
/// `(train, test)` sets with `n_test` test queries.
pub fn train_test_split(pool: Vec<LabeledQuery>, n_test: usize, seed: u64) -> Result<(Vec<LabeledQuery>, Vec<LabeledQuery>)> {
    let mut seen = HashSet::new();
    let mut unique: Vec<LabeledQuery> = pool
        .into_iter()
        .filter(|lq| seen.insert(lq.query.canonical_key()))
        .collect();
    if n_test > unique.len() {
        return Err(Error::Config(format!("{n_test} test queries requested from {} unique", unique.len())));
    }
    unique.shuffle(&mut rng_for(seed, "split", 0));
    let train = unique.split_off(n_test);
    Ok((train, unique))
}

/// The subquery closure of `parents` sampled queries from `test`, labeled,
/// deduplicated and disjoint from `exclude`.
pub fn ood_set(
    ds: &Dataset,
    test: &[LabeledQuery],
    parents: usize,
    seed: u64,
    exclude: &[LabeledQuery],
) -> Result<Vec<LabeledQuery>> {
    let mut seen: HashSet<String> = exclude.iter().map(|lq| lq.query.canonical_key()).collect();
    let mut rng = rng_for(seed, "ood", 0);
    let picked: Vec<&LabeledQuery> = test.choose_multiple(&mut rng, parents.min(test.len())).collect();
    let mut out = Vec::new();
    for parent in picked {
        for sub in enumerate_subqueries(&ds.schema, &parent.query) {
            if !seen.insert(sub.canonical_key()) {
                continue;
            }
            let card = execute_count(ds, &sub)?;
            if card > 0 {
                out.push(LabeledQuery { query: sub, cardinality: card });
            }
        }
    }
    Ok(out)
}
