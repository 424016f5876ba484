//! Query representation and the JSONL workload format.
//!
//! A [`Query`] is always held in canonical form: tables sorted and deduplicated,
//! predicates sorted by `(table, column, op, value)`. Two queries are equal iff
//! their canonical serializations are equal.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, Orientation, SchemaDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    pub const ALL: [CmpOp; 5] = [CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ge, CmpOp::Gt];

    #[inline]
    pub fn eval(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for CmpOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "<" => CmpOp::Lt,
            "<=" | "≤" => CmpOp::Le,
            "=" => CmpOp::Eq,
            ">=" | "≥" => CmpOp::Ge,
            ">" => CmpOp::Gt,
            other => return Err(Error::Format(format!("unknown operator {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Predicate {
    pub table: String,
    pub column: String,
    pub op: CmpOp,
    pub value: i64,
}

impl Predicate {
    pub fn new(table: impl Into<String>, column: impl Into<String>, op: CmpOp, value: i64) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
            op,
            value,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}{}{}", self.table, self.column, self.op, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Query {
    tables: BTreeSet<String>,
    predicates: Vec<Predicate>,
}

impl Query {
    pub fn new<I, S>(tables: I, mut predicates: Vec<Predicate>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        predicates.sort();
        predicates.dedup();
        Self {
            tables: tables.into_iter().map(Into::into).collect(),
            predicates,
        }
    }

    pub fn tables(&self) -> &BTreeSet<String> {
        &self.tables
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn has_table(&self, t: &str) -> bool {
        self.tables.contains(t)
    }

    pub fn join_count(&self) -> usize {
        self.tables.len().saturating_sub(1)
    }

    pub fn predicates_on<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a Predicate> + 'a {
        self.predicates.iter().filter(move |p| p.table == table)
    }

    pub fn has_predicate_on(&self, table: &str) -> bool {
        self.predicates.iter().any(|p| p.table == table)
    }

    pub fn references_column(&self, table: &str, column: &str) -> bool {
        self.predicates.iter().any(|p| p.table == table && p.column == column)
    }

    /// Copy with one more predicate.
    pub fn with_predicate(&self, p: Predicate) -> Query {
        let mut preds = self.predicates.clone();
        preds.push(p);
        Query::new(self.tables.iter().cloned(), preds)
    }

    /// Copy with `table` added (no new predicates).
    pub fn with_table(&self, table: &str) -> Query {
        let mut tables = self.tables.clone();
        tables.insert(table.to_string());
        Query {
            tables,
            predicates: self.predicates.clone(),
        }
    }

    /// Copy with `table` and all of its predicates removed.
    pub fn without_table(&self, table: &str) -> Query {
        let mut tables = self.tables.clone();
        tables.remove(table);
        Query {
            tables,
            predicates: self.predicates.iter().filter(|p| p.table != table).cloned().collect(),
        }
    }

    /// Restriction to a subset of tables, keeping exactly their predicates.
    pub fn restrict_to(&self, keep: &BTreeSet<String>) -> Query {
        Query {
            tables: keep.clone(),
            predicates: self
                .predicates
                .iter()
                .filter(|p| keep.contains(&p.table))
                .cloned()
                .collect(),
        }
    }

    /// Whether `tables` forms a connected join graph under the orientation's rules.
    pub fn is_connected_set(schema: &SchemaDef, tables: &BTreeSet<String>) -> bool {
        if tables.len() <= 1 {
            return true;
        }
        match schema.orientation {
            // Dimensions join each other on the shared key when the fact is absent.
            Orientation::FactHoldsPk => true,
            Orientation::FactHoldsFk => tables.contains(&schema.fact().name),
        }
    }

    pub fn validate(&self, schema: &SchemaDef) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::Validation("query has no tables".into()));
        }
        for t in &self.tables {
            if schema.table(t).is_none() {
                return Err(Error::Validation(format!("unknown table {t}")));
            }
        }
        for (i, p) in self.predicates.iter().enumerate() {
            if !self.tables.contains(&p.table) {
                return Err(Error::Validation(format!("predicate {p} on a table outside the query")));
            }
            let col = schema
                .table(&p.table)
                .and_then(|t| t.column(&p.column))
                .ok_or_else(|| Error::Validation(format!("unknown column {}.{}", p.table, p.column)))?;
            if col.kind == ColumnKind::Categorical && p.op != CmpOp::Eq {
                return Err(Error::Validation(format!("categorical column in {p} only supports '='")));
            }
            if self.predicates[..i]
                .iter()
                .any(|o| o.table == p.table && o.column == p.column)
            {
                return Err(Error::Validation(format!("more than one predicate on {}.{}", p.table, p.column)));
            }
        }
        if !Self::is_connected_set(schema, &self.tables) {
            return Err(Error::Validation(format!("join graph of {self} is not connected")));
        }
        Ok(())
    }

    /// Canonical serialized form without a label.
    pub fn canonical_key(&self) -> String {
        serde_json::to_string(&WireQuery::from_query(self, None, None)).expect("query serializes")
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tables: Vec<&str> = self.tables.iter().map(String::as_str).collect();
        write!(f, "{}", tables.join("⋈"))?;
        if !self.predicates.is_empty() {
            let preds: Vec<String> = self.predicates.iter().map(ToString::to_string).collect();
            write!(f, " [{}]", preds.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledQuery {
    pub query: Query,
    pub cardinality: u64,
}

#[derive(Serialize, Deserialize)]
struct WireQuery {
    tables: Vec<String>,
    predicates: Vec<(String, String, String, i64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cardinality: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generated_by: Option<String>,
}

impl WireQuery {
    fn from_query(q: &Query, cardinality: Option<u64>, generated_by: Option<&str>) -> Self {
        Self {
            tables: q.tables.iter().cloned().collect(),
            predicates: q
                .predicates
                .iter()
                .map(|p| (p.table.clone(), p.column.clone(), p.op.symbol().to_string(), p.value))
                .collect(),
            cardinality,
            generated_by: generated_by.map(str::to_string),
        }
    }

    fn into_query(self) -> Result<Query> {
        let preds = self
            .predicates
            .into_iter()
            .map(|(t, c, op, v)| Ok(Predicate::new(t, c, op.parse()?, v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Query::new(self.tables, preds))
    }
}

/// One JSONL line (without the trailing newline).
pub fn to_jsonl_line(q: &Query, cardinality: Option<u64>, generated_by: Option<&str>) -> String {
    serde_json::to_string(&WireQuery::from_query(q, cardinality, generated_by)).expect("query serializes")
}

/// Parses one JSONL line into a query and its optional label.
pub fn parse_jsonl_line(line: &str) -> Result<(Query, Option<u64>)> {
    let wire: WireQuery = serde_json::from_str(line)?;
    let card = wire.cardinality;
    Ok((wire.into_query()?, card))
}

pub fn write_workload(path: &Path, queries: &[LabeledQuery]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for lq in queries {
        writeln!(out, "{}", to_jsonl_line(&lq.query, Some(lq.cardinality), None))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes unlabeled or annotated queries, e.g. generated probe sets.
pub fn write_queries(path: &Path, queries: &[(Query, Option<u64>)], generated_by: Option<&str>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (q, c) in queries {
        writeln!(out, "{}", to_jsonl_line(q, *c, generated_by))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_workload(path: &Path) -> Result<Vec<LabeledQuery>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (query, card) = parse_jsonl_line(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        let cardinality = card.ok_or_else(|| Error::Format(format!("line {} has no cardinality", i + 1)))?;
        out.push(LabeledQuery { query, cardinality });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jsonl_line_layout() {
        let q = Query::new(
            ["fact", "d1"],
            vec![
                Predicate::new("fact", "n1", CmpOp::Le, 5),
                Predicate::new("d1", "c1", CmpOp::Eq, 2),
            ],
        );
        assert_eq!(
            to_jsonl_line(&q, Some(17), None),
            r#"{"tables":["d1","fact"],"predicates":[["d1","c1","=",2],["fact","n1","<=",5]],"cardinality":17}"#
        );
        assert_eq!(parse_jsonl_line(&to_jsonl_line(&q, Some(17), None)).unwrap(), (q, Some(17)));
    }

    #[test]
    fn predicate_order_does_not_matter() {
        let a = Predicate::new("t", "a", CmpOp::Lt, 3);
        let b = Predicate::new("t", "b", CmpOp::Gt, 1);
        assert_eq!(
            Query::new(["t"], vec![a.clone(), b.clone()]),
            Query::new(["t"], vec![b, a])
        );
    }

    fn arb_query() -> impl Strategy<Value = Query> {
        let pred = ("[a-d]{1,3}", "[a-z]{1,4}", 0usize..5, -5i64..200)
            .prop_map(|(t, c, op, v)| Predicate::new(t, c, CmpOp::ALL[op], v));
        (prop::collection::btree_set("[a-d]{1,3}", 1..4), prop::collection::vec(pred, 0..6))
            .prop_map(|(t, p)| Query::new(t, p))
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(q in arb_query(), card in proptest::option::of(0u64..1_000_000)) {
            let line = to_jsonl_line(&q, card, None);
            prop_assert_eq!(parse_jsonl_line(&line).unwrap(), (q.clone(), card));
            prop_assert_eq!(q.canonical_key(), to_jsonl_line(&q, None, None));
        }
    }
}
