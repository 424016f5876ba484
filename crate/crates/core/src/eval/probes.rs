use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::constraints::ConstraintKind;
use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::query::{to_jsonl_line, Query};
use crate::schema::SchemaDef;
use crate::seed::rng_for;
use crate::workload::{add_table, drop_table, pk_add_options, pk_drop_options, sample_split, split_query, PkFkRelation};

/// Queries whose true cardinalities are related by a constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Probe {
    /// `|q| = |q1| + |q2|`.
    Consistency { q: Query, q1: Query, q2: Query },
    /// `|q| = |q2|`.
    PkFkEquality { q: Query, q2: Query },
    /// `|q| <= |q1|`.
    PkFkInequality { q: Query, q1: Query },
}

impl Probe {
    pub fn kind(&self) -> ConstraintKind {
        match self {
            Probe::Consistency { .. } => ConstraintKind::Consistency,
            Probe::PkFkEquality { .. } => ConstraintKind::PkFkEquality,
            Probe::PkFkInequality { .. } => ConstraintKind::PkFkInequality,
        }
    }

    /// The probe's queries with their roles, `q` first.
    pub fn queries(&self) -> Vec<(&'static str, &Query)> {
        match self {
            Probe::Consistency { q, q1, q2 } => vec![("q", q), ("q1", q1), ("q2", q2)],
            Probe::PkFkEquality { q, q2 } => vec![("q", q), ("q2", q2)],
            Probe::PkFkInequality { q, q1 } => vec![("q", q), ("q1", q1)],
        }
    }

    /// The constraint ratio for estimates aligned with [`Probe::queries`]:
    /// `ĉ(q)/(ĉ(q1)+ĉ(q2))`, `ĉ(q)/ĉ(q2)` or `ĉ(q)/ĉ(q1)`.
    pub fn ratio(&self, est: &[f64]) -> f64 {
        match self {
            Probe::Consistency { .. } => est[0] / (est[1] + est[2]),
            _ => est[0] / est[1],
        }
    }
}

/// Whether a constraint ratio counts as a violation: outside `[1/2, 2]` for
/// the equality kinds, above 1 for the inequality.
pub fn is_violation(kind: ConstraintKind, ratio: f64) -> bool {
    match kind {
        ConstraintKind::Consistency | ConstraintKind::PkFkEquality => !(0.5..=2.0).contains(&ratio),
        ConstraintKind::PkFkInequality => ratio > 1.0,
    }
}

/// One probe per applicable query, seeded per query index; inapplicable queries are skipped.
pub fn violation_probes(schema: &SchemaDef, queries: &[Query], kind: ConstraintKind, seed: u64) -> Vec<Probe> {
    let mut out = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        let mut rng = rng_for(seed, kind.as_str(), i as u64);
        let probe = match kind {
            ConstraintKind::Consistency => sample_split(schema, q, &mut rng).and_then(|spec| {
                split_query(schema, q, &spec)
                    .ok()
                    .map(|(q1, q2)| Probe::Consistency { q: q.clone(), q1, q2 })
            }),
            ConstraintKind::PkFkEquality => {
                let mut options: Vec<(bool, String)> = pk_add_options(schema, q).into_iter().map(|t| (true, t)).collect();
                options.extend(
                    pk_drop_options(schema, q)
                        .into_iter()
                        .filter(|(_, r)| *r == PkFkRelation::Equality)
                        .map(|(t, _)| (false, t)),
                );
                options.choose(&mut rng).and_then(|(add, t)| {
                    let q2 = if *add {
                        add_table(schema, q, t).ok()?
                    } else {
                        drop_table(schema, q, t).ok()?.0
                    };
                    Some(Probe::PkFkEquality { q: q.clone(), q2 })
                })
            }
            ConstraintKind::PkFkInequality => {
                let options: Vec<String> = pk_drop_options(schema, q)
                    .into_iter()
                    .filter(|(_, r)| *r == PkFkRelation::Inequality)
                    .map(|(t, _)| t)
                    .collect();
                options.choose(&mut rng).and_then(|t| {
                    let (q1, _) = drop_table(schema, q, t).ok()?;
                    Some(Probe::PkFkInequality { q: q.clone(), q1 })
                })
            }
        };
        out.extend(probe);
    }
    out
}

/// Per-probe ratios of `est`, in probe order.
pub fn probe_ratios(est: &dyn Estimator, probes: &[Probe]) -> Result<Vec<f64>> {
    let mut all = Vec::new();
    for p in probes {
        all.extend(p.queries().into_iter().map(|(_, q)| q.clone()));
    }
    let values = est.estimate_batch(&all)?;
    let mut off = 0;
    Ok(probes
        .iter()
        .map(|p| {
            let n = p.queries().len();
            let r = p.ratio(&values[off..off + n]);
            off += n;
            r
        })
        .collect())
}

/// Fraction of `probes` on which `est` violates the `kind` constraint.
pub fn violation_ratio(est: &dyn Estimator, probes: &[Probe], kind: ConstraintKind) -> Result<f64> {
    Ok(violation_count(est, probes, kind)? as f64 / probes.len() as f64)
}

pub fn violation_count(est: &dyn Estimator, probes: &[Probe], kind: ConstraintKind) -> Result<usize> {
    if probes.is_empty() {
        return Err(Error::UndefinedRatio(format!("no {kind} probes")));
    }
    if let Some(p) = probes.iter().find(|p| p.kind() != kind) {
        return Err(Error::Validation(format!("{} probe in a {kind} probe set", p.kind())));
    }
    Ok(probe_ratios(est, probes)?
        .into_iter()
        .filter(|r| is_violation(kind, *r))
        .count())
}

/// Writes every probe query in workload format, annotated `<kind>:<probe>:<role>`.
pub fn write_probes(path: &Path, probes: &[Probe]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, p) in probes.iter().enumerate() {
        for (role, q) in p.queries() {
            let tag = format!("{}:{i}:{role}", p.kind());
            writeln!(out, "{}", to_jsonl_line(q, None, Some(&tag)))?;
        }
    }
    out.flush()?;
    Ok(())
}
