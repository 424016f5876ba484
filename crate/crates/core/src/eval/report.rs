use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintKind;
use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::query::{LabeledQuery, Query};
use crate::trainer::qerror;

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 * n)` (1-based, at least 1).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QErrorSummary {
    pub n: usize,
    pub median: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl QErrorSummary {
    pub fn of(qerrors: &[f64]) -> Result<Self> {
        if qerrors.is_empty() {
            return Err(Error::UndefinedRatio("no q-errors to summarize".into()));
        }
        let mut s = qerrors.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            n: s.len(),
            median: percentile(&s, 50.0),
            p95: percentile(&s, 95.0),
            p99: percentile(&s, 99.0),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub qerrors: Vec<f64>,
    pub summary: QErrorSummary,
}

/// Per-query q-errors of `est` against the stored labels.
pub fn evaluate(est: &dyn Estimator, queries: &[LabeledQuery]) -> Result<Evaluation> {
    let qs: Vec<Query> = queries.iter().map(|l| l.query.clone()).collect();
    let estimates = est.estimate_batch(&qs)?;
    let qerrors = estimates
        .iter()
        .zip(queries)
        .map(|(e, l)| qerror(*e, l.cardinality as f64))
        .collect::<Result<Vec<_>>>()?;
    let summary = QErrorSummary::of(&qerrors)?;
    Ok(Evaluation { qerrors, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub estimator: String,
    pub query_set: String,
    #[serde(flatten)]
    pub summary: QErrorSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRow {
    pub estimator: String,
    pub kind: ConstraintKind,
    pub probes: usize,
    pub violations: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Vec<AccuracyRow>,
    pub violations: Vec<ViolationRow>,
}

impl EvalReport {
    pub fn merge(&mut self, other: EvalReport) {
        self.accuracy.extend(other.accuracy);
        self.violations.extend(other.violations);
    }

    pub fn accuracy_csv(&self) -> String {
        let mut s = String::from("estimator,query_set,n,median,p95,p99,max\n");
        for r in &self.accuracy {
            let m = &r.summary;
            let _ = writeln!(s, "{},{},{},{},{},{},{}", r.estimator, r.query_set, m.n, m.median, m.p95, m.p99, m.max);
        }
        s
    }

    pub fn violations_csv(&self) -> String {
        let mut s = String::from("estimator,kind,probes,violations,ratio\n");
        for r in &self.violations {
            let _ = writeln!(s, "{},{},{},{},{}", r.estimator, r.kind, r.probes, r.violations, r.ratio);
        }
        s
    }

    /// One row per estimator; columns are `<query_set>_<statistic>` followed
    /// by `violation_<kind>`, in first-seen order.
    pub fn wide_csv(&self) -> String {
        let mut estimators: Vec<&str> = Vec::new();
        let mut sets: Vec<&str> = Vec::new();
        let mut kinds: Vec<ConstraintKind> = Vec::new();
        for r in &self.accuracy {
            if !estimators.contains(&r.estimator.as_str()) {
                estimators.push(&r.estimator);
            }
            if !sets.contains(&r.query_set.as_str()) {
                sets.push(&r.query_set);
            }
        }
        for r in &self.violations {
            if !estimators.contains(&r.estimator.as_str()) {
                estimators.push(&r.estimator);
            }
            if !kinds.contains(&r.kind) {
                kinds.push(r.kind);
            }
        }
        let mut s = String::from("estimator");
        for set in &sets {
            for stat in ["median", "p95", "p99", "max"] {
                let _ = write!(s, ",{set}_{stat}");
            }
        }
        for k in &kinds {
            let _ = write!(s, ",violation_{k}");
        }
        s.push('\n');
        for e in &estimators {
            s.push_str(e);
            for set in &sets {
                match self.accuracy.iter().find(|r| r.estimator == *e && r.query_set == *set) {
                    Some(r) => {
                        let m = &r.summary;
                        let _ = write!(s, ",{},{},{},{}", m.median, m.p95, m.p99, m.max);
                    }
                    None => s.push_str(",,,,"),
                }
            }
            for k in &kinds {
                match self.violations.iter().find(|r| r.estimator == *e && r.kind == *k) {
                    Some(r) => {
                        let _ = write!(s, ",{}", r.ratio);
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Long-format per-query q-errors, ready for plotting.
pub fn qerrors_long_csv(rows: &[(&str, &str, &[f64])]) -> String {
    let mut s = String::from("estimator,query_set,index,qerror\n");
    for (est, set, qs) in rows {
        for (i, q) in qs.iter().enumerate() {
            let _ = writeln!(s, "{est},{set},{i},{q}");
        }
    }
    s
}
