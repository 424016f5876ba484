//! Star-schema definitions.
//!
//! Key columns are not listed in [`TableDef::columns`]; they are named by the
//! schema's edges and stored alongside the attribute columns in a [`Dataset`].
//! Only attribute columns can carry predicates.
//!
//! [`Dataset`]: crate::dataset::Dataset

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
    /// Values are integers in `[0, domain_size)`.
    pub domain_size: u64,
    /// Zipf exponent; 0 means uniform.
    #[serde(default)]
    pub skew: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableRole {
    Fact,
    Dimension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub role: TableRole,
    pub row_count: usize,
    pub columns: Vec<ColumnDef>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// A PK-FK edge of the star.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub pk_table: String,
    pub pk_column: String,
    pub fk_table: String,
    pub fk_column: String,
    /// Zipf exponent of the FK value distribution over referenced keys.
    #[serde(default)]
    pub fk_skew: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// The fact table owns the primary key every dimension references.
    FactHoldsPk,
    /// The fact table holds one foreign key per dimension.
    FactHoldsFk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub tables: Vec<TableDef>,
    pub edges: Vec<Edge>,
    pub orientation: Orientation,
}

impl SchemaDef {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let facts: Vec<_> = self
            .tables
            .iter()
            .filter(|t| t.role == TableRole::Fact)
            .collect();
        if facts.len() != 1 {
            return cfg(format!("expected exactly one fact table, found {}", facts.len()));
        }
        let fact = facts[0];
        for (i, t) in self.tables.iter().enumerate() {
            if t.name.is_empty() {
                return cfg(format!("table #{i} has an empty name"));
            }
            if self.tables[..i].iter().any(|o| o.name == t.name) {
                return cfg(format!("duplicate table name {}", t.name));
            }
            if t.row_count == 0 {
                return cfg(format!("table {} has row_count 0", t.name));
            }
            for (j, c) in t.columns.iter().enumerate() {
                if t.columns[..j].iter().any(|o| o.name == c.name) {
                    return cfg(format!("duplicate column {}.{}", t.name, c.name));
                }
                if c.domain_size == 0 {
                    return cfg(format!("column {}.{} has domain_size 0", t.name, c.name));
                }
                if !(c.skew.is_finite() && c.skew >= 0.0) {
                    return cfg(format!("column {}.{} has invalid skew {}", t.name, c.name, c.skew));
                }
            }
        }
        for e in &self.edges {
            let pk = self
                .table(&e.pk_table)
                .ok_or_else(|| Error::Config(format!("edge references unknown table {}", e.pk_table)))?;
            let fk = self
                .table(&e.fk_table)
                .ok_or_else(|| Error::Config(format!("edge references unknown table {}", e.fk_table)))?;
            if (pk.role == TableRole::Fact) == (fk.role == TableRole::Fact) {
                return cfg(format!(
                    "edge {}.{} -> {}.{} does not link the fact table to a dimension",
                    e.fk_table, e.fk_column, e.pk_table, e.pk_column
                ));
            }
            if pk.column(&e.pk_column).is_some() || fk.column(&e.fk_column).is_some() {
                return cfg(format!(
                    "key column of edge {}->{} collides with an attribute column",
                    e.fk_table, e.pk_table
                ));
            }
            if !(e.fk_skew.is_finite() && e.fk_skew >= 0.0) {
                return cfg(format!("edge {}->{} has invalid fk_skew", e.fk_table, e.pk_table));
            }
            match self.orientation {
                Orientation::FactHoldsPk if e.pk_table != fact.name => {
                    return cfg(format!("fact_holds_pk edge {}->{} must target the fact table", e.fk_table, e.pk_table));
                }
                Orientation::FactHoldsFk if e.fk_table != fact.name => {
                    return cfg(format!("fact_holds_fk edge {}->{} must start at the fact table", e.fk_table, e.pk_table));
                }
                _ => {}
            }
        }
        if self.orientation == Orientation::FactHoldsPk {
            if let Some(first) = self.edges.first() {
                if self.edges.iter().any(|e| e.pk_column != first.pk_column) {
                    return cfg("fact_holds_pk edges must share the fact's key column".into());
                }
            }
        } else {
            for (i, e) in self.edges.iter().enumerate() {
                if self.edges[..i].iter().any(|o| o.fk_column == e.fk_column) {
                    return cfg(format!("duplicate foreign key column {}", e.fk_column));
                }
            }
        }
        for t in self.tables.iter().filter(|t| t.role == TableRole::Dimension) {
            let n = self
                .edges
                .iter()
                .filter(|e| e.pk_table == t.name || e.fk_table == t.name)
                .count();
            if n != 1 {
                return cfg(format!("dimension {} must have exactly one edge, found {n}", t.name));
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn fact_index(&self) -> usize {
        self.tables
            .iter()
            .position(|t| t.role == TableRole::Fact)
            .expect("validated schema has a fact table")
    }

    pub fn fact(&self) -> &TableDef {
        &self.tables[self.fact_index()]
    }

    pub fn dimension_count(&self) -> usize {
        self.tables.iter().filter(|t| t.role == TableRole::Dimension).count()
    }

    pub fn is_fact(&self, table: &str) -> bool {
        self.table(table).is_some_and(|t| t.role == TableRole::Fact)
    }

    /// The edge connecting dimension `dim` to the fact table.
    pub fn edge_of(&self, dim: &str) -> Option<(usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .find(|(_, e)| e.pk_table == dim || e.fk_table == dim)
    }

    /// Tables whose primary key is the join target of some edge.
    pub fn is_pk_side(&self, table: &str) -> bool {
        self.edges.iter().any(|e| e.pk_table == table)
    }

    /// Total number of attribute columns across all tables.
    pub fn total_columns(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Position of `table.column` in the schema-wide attribute column order.
    pub fn global_column_index(&self, table: &str, column: &str) -> Option<usize> {
        let mut offset = 0;
        for t in &self.tables {
            if t.name == table {
                return t.column_index(column).map(|c| offset + c);
            }
            offset += t.columns.len();
        }
        None
    }

    /// Key columns stored for a table, in edge order, without duplicates.
    pub fn key_columns(&self, table: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.edges {
            let name = if e.pk_table == table {
                Some(&e.pk_column)
            } else if e.fk_table == table {
                Some(&e.fk_column)
            } else {
                None
            };
            if let Some(n) = name {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        }
        out
    }

    /// Stored column order of a table: key columns, then attribute columns.
    pub fn physical_columns(&self, table: &str) -> Vec<String> {
        let mut cols = self.key_columns(table);
        if let Some(t) = self.table(table) {
            cols.extend(t.columns.iter().map(|c| c.name.clone()));
        }
        cols
    }

    /// Short hex digest of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: SchemaDef = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }
}

/// Parameters for [`synthetic_star`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarParams {
    pub orientation: Orientation,
    pub fact_rows: usize,
    pub dim_rows: Vec<usize>,
    pub numeric_per_table: usize,
    pub categorical_per_table: usize,
    pub domain_size: u64,
    pub categorical_domain: u64,
    pub skew: f64,
    pub fk_skew: f64,
}

impl Default for StarParams {
    fn default() -> Self {
        Self {
            orientation: Orientation::FactHoldsFk,
            fact_rows: 20_000,
            dim_rows: vec![500, 500, 500, 500],
            numeric_per_table: 2,
            categorical_per_table: 1,
            domain_size: 100,
            categorical_domain: 12,
            skew: 0.6,
            fk_skew: 0.8,
        }
    }
}

/// Builds a star schema named `fact`, `d1..dn` with `n*` numeric and `c*`
/// categorical attribute columns per table.
pub fn synthetic_star(p: &StarParams) -> Result<SchemaDef> {
    let columns = || {
        let mut cols = Vec::new();
        for i in 0..p.numeric_per_table {
            cols.push(ColumnDef {
                name: format!("n{}", i + 1),
                kind: ColumnKind::Numeric,
                domain_size: p.domain_size,
                skew: if i % 2 == 0 { p.skew } else { 0.0 },
            });
        }
        for i in 0..p.categorical_per_table {
            cols.push(ColumnDef {
                name: format!("c{}", i + 1),
                kind: ColumnKind::Categorical,
                domain_size: p.categorical_domain,
                skew: p.skew,
            });
        }
        cols
    };
    let mut tables = vec![TableDef {
        name: "fact".into(),
        role: TableRole::Fact,
        row_count: p.fact_rows,
        columns: columns(),
    }];
    let mut edges = Vec::new();
    for (i, &rows) in p.dim_rows.iter().enumerate() {
        let dim = format!("d{}", i + 1);
        tables.push(TableDef {
            name: dim.clone(),
            role: TableRole::Dimension,
            row_count: rows,
            columns: columns(),
        });
        edges.push(match p.orientation {
            Orientation::FactHoldsFk => Edge {
                pk_table: dim.clone(),
                pk_column: "id".into(),
                fk_table: "fact".into(),
                fk_column: format!("{dim}_id"),
                fk_skew: p.fk_skew,
            },
            Orientation::FactHoldsPk => Edge {
                pk_table: "fact".into(),
                pk_column: "id".into(),
                fk_table: dim.clone(),
                fk_column: "fact_id".into(),
                fk_skew: p.fk_skew,
            },
        });
    }
    let schema = SchemaDef {
        tables,
        edges,
        orientation: p.orientation,
    };
    schema.validate()?;
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_star_validates_in_both_orientations() {
        for o in [Orientation::FactHoldsFk, Orientation::FactHoldsPk] {
            let s = synthetic_star(&StarParams {
                orientation: o,
                ..StarParams::default()
            })
            .unwrap();
            assert_eq!(s.dimension_count(), 4);
            assert_eq!(s.total_columns(), 15);
            assert_eq!(s.physical_columns("fact")[0], if o == Orientation::FactHoldsFk { "d1_id" } else { "id" });
        }
    }

    #[test]
    fn rejects_two_facts_and_dangling_edges() {
        let mut s = synthetic_star(&StarParams::default()).unwrap();
        s.tables[1].role = TableRole::Fact;
        assert!(matches!(s.validate(), Err(Error::Config(_))));

        let mut s = synthetic_star(&StarParams::default()).unwrap();
        s.edges[0].pk_table = "nowhere".into();
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("nowhere"));
    }

    #[test]
    fn fact_holds_pk_requires_shared_key() {
        let mut s = synthetic_star(&StarParams {
            orientation: Orientation::FactHoldsPk,
            ..StarParams::default()
        })
        .unwrap();
        s.edges[1].pk_column = "other".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn global_column_index_is_dense() {
        let s = synthetic_star(&StarParams::default()).unwrap();
        let mut seen = Vec::new();
        for t in &s.tables {
            for c in &t.columns {
                seen.push(s.global_column_index(&t.name, &c.name).unwrap());
            }
        }
        assert_eq!(seen, (0..s.total_columns()).collect::<Vec<_>>());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = synthetic_star(&StarParams::default()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.tables[0].row_count += 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
