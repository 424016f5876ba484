//! Deterministic synthetic data over a [`SchemaDef`] and its on-disk format.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, SchemaDef, TableRole};
use crate::seed::{rng_for, Rng};

pub const FORMAT_TAG: &str = "cordonlab-ds";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
        }
    }
}

/// Makes `b` a noisy function of `a`: each row takes the mapped value of `a`
/// with probability `strength`, otherwise keeps its independent draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub a: ColumnRef,
    pub b: ColumnRef,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnData {
    pub name: String,
    pub values: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableData {
    pub name: String,
    pub columns: Vec<ColumnData>,
}

impl TableData {
    pub fn column(&self, name: &str) -> Option<&[i64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn row_count(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }
}

/// Generated rows for every table of a schema.
///
/// Immutable once built. The only interior state is a counter of exact query
/// executions, used to audit code paths that must not touch the data.
#[derive(Debug)]
pub struct Dataset {
    pub schema: SchemaDef,
    pub seed: u64,
    pub correlations: Vec<Correlation>,
    pub tables: Vec<TableData>,
    executions: AtomicU64,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Self {
            schema: self.schema.clone(),
            seed: self.seed,
            correlations: self.correlations.clone(),
            tables: self.tables.clone(),
            executions: AtomicU64::new(0),
        }
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.seed == other.seed
            && self.correlations == other.correlations
            && self.tables == other.tables
    }
}

impl Dataset {
    /// Wraps hand-built tables, checking them against the schema.
    pub fn from_tables(schema: SchemaDef, seed: u64, tables: Vec<TableData>) -> Result<Self> {
        schema.validate()?;
        let ds = Self {
            schema,
            seed,
            correlations: Vec::new(),
            tables,
            executions: AtomicU64::new(0),
        };
        ds.verify_integrity()?;
        Ok(ds)
    }

    pub fn table(&self, name: &str) -> Option<&TableData> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&[i64]> {
        self.table(table).and_then(|t| t.column(column))
    }

    /// Number of exact executions performed against this dataset so far.
    pub fn executions(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    pub(crate) fn record_execution(&self) {
        self.executions.fetch_add(1, Ordering::Relaxed);
    }

    /// Full-scan check of row counts, PK uniqueness and referential integrity.
    pub fn verify_integrity(&self) -> Result<()> {
        for t in &self.schema.tables {
            let data = self
                .table(&t.name)
                .ok_or_else(|| Error::Validation(format!("missing table {}", t.name)))?;
            for col in self.schema.physical_columns(&t.name) {
                let values = data
                    .column(&col)
                    .ok_or_else(|| Error::Validation(format!("missing column {}.{col}", t.name)))?;
                if values.len() != t.row_count {
                    return Err(Error::Validation(format!(
                        "{}.{col} has {} rows, expected {}",
                        t.name,
                        values.len(),
                        t.row_count
                    )));
                }
            }
        }
        for e in &self.schema.edges {
            let pk = self.column(&e.pk_table, &e.pk_column).unwrap_or(&[]);
            let keys: HashSet<i64> = pk.iter().copied().collect();
            if keys.len() != pk.len() {
                return Err(Error::Validation(format!("{}.{} is not unique", e.pk_table, e.pk_column)));
            }
            let fk = self.column(&e.fk_table, &e.fk_column).unwrap_or(&[]);
            if let Some(v) = fk.iter().find(|v| !keys.contains(v)) {
                return Err(Error::Validation(format!(
                    "{}.{} value {v} has no matching {}.{}",
                    e.fk_table, e.fk_column, e.pk_table, e.pk_column
                )));
            }
        }
        Ok(())
    }
}

/// Inverse-CDF sampler over `[0, n)` with `P(k) ∝ 1/(k+1)^s`.
struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: u64, s: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (0..n)
            .map(|k| {
                acc += 1.0 / ((k + 1) as f64).powf(s);
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        Self { cdf }
    }

    fn sample(&self, rng: &mut Rng) -> u64 {
        let u: f64 = rng.gen();
        let k = self.cdf.partition_point(|&c| c < u);
        k.min(self.cdf.len() - 1) as u64
    }
}

fn draw_column(n_rows: usize, domain: u64, skew: f64, rng: &mut Rng) -> Vec<i64> {
    if skew == 0.0 {
        (0..n_rows).map(|_| rng.gen_range(0..domain) as i64).collect()
    } else {
        let z = Zipf::new(domain, skew);
        (0..n_rows).map(|_| z.sample(rng) as i64).collect()
    }
}

fn validate_correlation(schema: &SchemaDef, c: &Correlation) -> Result<()> {
    let col = |r: &ColumnRef| {
        schema
            .table(&r.table)
            .and_then(|t| t.column(&r.column))
            .ok_or_else(|| Error::Config(format!("correlation references unknown column {}.{}", r.table, r.column)))
    };
    col(&c.a)?;
    col(&c.b)?;
    if c.a == c.b {
        return Err(Error::Config(format!("correlation of {}.{} with itself", c.a.table, c.a.column)));
    }
    if !(0.0..=1.0).contains(&c.strength) {
        return Err(Error::Config(format!("correlation strength {} outside [0,1]", c.strength)));
    }
    if c.a.table != c.b.table {
        let linked = schema
            .edges
            .iter()
            .any(|e| e.fk_table == c.b.table && e.pk_table == c.a.table);
        if !linked {
            return Err(Error::Config(format!(
                "cross-table correlation needs {} to reference {} through an edge",
                c.b.table, c.a.table
            )));
        }
    }
    Ok(())
}

/// Generates a dataset; identical arguments produce identical data.
pub fn generate_dataset(schema: &SchemaDef, seed: u64, correlations: &[Correlation]) -> Result<Dataset> {
    schema.validate()?;
    for c in correlations {
        validate_correlation(schema, c)?;
    }

    let mut tables: Vec<TableData> = schema
        .tables
        .iter()
        .map(|t| TableData {
            name: t.name.clone(),
            columns: Vec::new(),
        })
        .collect();

    // Primary keys: 0..n in row order.
    for (ti, t) in schema.tables.iter().enumerate() {
        for e in schema.edges.iter().filter(|e| e.pk_table == t.name) {
            if tables[ti].column(&e.pk_column).is_none() {
                tables[ti].columns.push(ColumnData {
                    name: e.pk_column.clone(),
                    values: (0..t.row_count as i64).collect(),
                });
            }
        }
    }
    // Foreign keys: Zipf over a seeded permutation of the referenced keys.
    for e in &schema.edges {
        let pk_rows = schema.table(&e.pk_table).expect("validated").row_count;
        let fk_ti = schema.table_index(&e.fk_table).expect("validated");
        let n = schema.tables[fk_ti].row_count;
        let mut rng = rng_for(seed, &format!("fk/{}/{}", e.fk_table, e.fk_column), 0);
        let mut keys: Vec<i64> = (0..pk_rows as i64).collect();
        keys.shuffle(&mut rng);
        let ranks = draw_column(n, pk_rows as u64, e.fk_skew, &mut rng);
        tables[fk_ti].columns.push(ColumnData {
            name: e.fk_column.clone(),
            values: ranks.into_iter().map(|r| keys[r as usize]).collect(),
        });
    }
    for (ti, t) in schema.tables.iter().enumerate() {
        for c in &t.columns {
            let mut rng = rng_for(seed, &format!("attr/{}/{}", t.name, c.name), 0);
            tables[ti].columns.push(ColumnData {
                name: c.name.clone(),
                values: draw_column(t.row_count, c.domain_size, c.skew, &mut rng),
            });
        }
    }

    for (i, c) in correlations.iter().enumerate() {
        apply_correlation(schema, &mut tables, c, &mut rng_for(seed, "correlation", i as u64));
    }

    // Reorder columns to the canonical physical order.
    for (ti, t) in schema.tables.iter().enumerate() {
        let order = schema.physical_columns(&t.name);
        let mut cols = std::mem::take(&mut tables[ti].columns);
        tables[ti].columns = order
            .iter()
            .map(|name| {
                let pos = cols.iter().position(|c| &c.name == name).expect("generated");
                cols.swap_remove(pos)
            })
            .collect();
    }

    Ok(Dataset {
        schema: schema.clone(),
        seed,
        correlations: correlations.to_vec(),
        tables,
        executions: AtomicU64::new(0),
    })
}

fn apply_correlation(schema: &SchemaDef, tables: &mut [TableData], c: &Correlation, rng: &mut Rng) {
    let a_def = schema.table(&c.a.table).and_then(|t| t.column(&c.a.column)).expect("validated");
    let b_def = schema.table(&c.b.table).and_then(|t| t.column(&c.b.column)).expect("validated");
    let (da, db) = (a_def.domain_size as i64, b_def.domain_size as i64);
    let map = |a: i64| -> i64 {
        if b_def.kind == ColumnKind::Categorical || a_def.kind == ColumnKind::Categorical {
            a % db
        } else {
            a * db / da
        }
    };
    let bi = schema.table_index(&c.b.table).expect("validated");
    let a_per_row: Vec<i64> = if c.a.table == c.b.table {
        tables[bi].column(&c.a.column).expect("generated").to_vec()
    } else {
        let edge = schema
            .edges
            .iter()
            .find(|e| e.fk_table == c.b.table && e.pk_table == c.a.table)
            .expect("validated");
        let ai = schema.table_index(&c.a.table).expect("validated");
        let pk = tables[ai].column(&edge.pk_column).expect("generated");
        let a_vals = tables[ai].column(&c.a.column).expect("generated");
        let mut by_key = vec![0i64; pk.iter().copied().max().unwrap_or(0) as usize + 1];
        for (k, v) in pk.iter().zip(a_vals) {
            by_key[*k as usize] = *v;
        }
        tables[bi]
            .column(&edge.fk_column)
            .expect("generated")
            .iter()
            .map(|k| by_key[*k as usize])
            .collect()
    };
    let b = tables[bi]
        .columns
        .iter_mut()
        .find(|col| col.name == c.b.column)
        .expect("generated");
    for (bv, av) in b.values.iter_mut().zip(a_per_row) {
        if rng.gen::<f64>() < c.strength {
            *bv = map(av);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u64,
    schema: SchemaDef,
    seed: u64,
    #[serde(default)]
    correlations: Vec<Correlation>,
}

/// Serializes to the versioned columnar format: a JSON header line followed by
/// length-prefixed little-endian `i64` arrays per table and column.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let header = Header {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        schema: ds.schema.clone(),
        seed: ds.seed,
        correlations: ds.correlations.clone(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for t in &ds.schema.tables {
        let data = ds.table(&t.name).expect("dataset matches schema");
        for name in ds.schema.physical_columns(&t.name) {
            let values = data.column(&name).expect("dataset matches schema");
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(FORMAT_TAG) {
        return Err(Error::Format(format!("not a {FORMAT_TAG} file")));
    }
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format("header lacks a version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    header.schema.validate()?;

    let mut cursor = &bytes[nl + 1..];
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(Error::Format(format!("truncated while reading {what}")));
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head)
    };
    let mut tables = Vec::new();
    for t in &header.schema.tables {
        let mut columns = Vec::new();
        for name in header.schema.physical_columns(&t.name) {
            let what = format!("{}.{name}", t.name);
            let len = u64::from_le_bytes(take(8, &what)?.try_into().expect("8 bytes")) as usize;
            if len != t.row_count {
                return Err(Error::Format(format!("{what} holds {len} values, schema says {}", t.row_count)));
            }
            let body = take(len.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?, &what)?;
            let values = body
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            columns.push(ColumnData { name, values });
        }
        tables.push(TableData {
            name: t.name.clone(),
            columns,
        });
    }
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
    }
    Ok(Dataset {
        schema: header.schema,
        seed: header.seed,
        correlations: header.correlations,
        tables,
        executions: AtomicU64::new(0),
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

/// Dimension tables of the schema, in declaration order.
pub fn dimensions(schema: &SchemaDef) -> impl Iterator<Item = &str> {
    schema
        .tables
        .iter()
        .filter(|t| t.role == TableRole::Dimension)
        .map(|t| t.name.as_str())
}
