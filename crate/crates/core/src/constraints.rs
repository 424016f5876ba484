//! Database domain knowledge as training signal: applicability tests and
//! augmentation into extra labeled samples and differentiable loss terms.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::query::{LabeledQuery, Query};
use crate::schema::SchemaDef;
use crate::seed::Rng;
use crate::trainer::qerror;
use crate::workload::{
    add_table, drop_table, pk_add_options, pk_drop_options, sample_split, split_candidates, split_query, PkFkRelation,
    SplitSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Consistency,
    PkFkEquality,
    PkFkInequality,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 3] = [Self::Consistency, Self::PkFkEquality, Self::PkFkInequality];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Consistency => "consistency",
            Self::PkFkEquality => "pkfk_equality",
            Self::PkFkInequality => "pkfk_inequality",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown constraint kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    SumEquality,
    HingeLowerBound,
    PseudoLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InequalityMode {
    Bound,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeSpace {
    Log,
    Linear,
}

/// A differentiable penalty over model predictions for `queries`.
///
/// Query layouts by form:
/// * `SumEquality`: `[q1, q2]` against `target` (the parent label), or
///   `[q1, q2, q]` when `target` is `None` (label-free variant);
/// * `HingeLowerBound`: `[q, q1]`, penalizing `ĉ(q) > ĉ(q1)`;
/// * `PseudoLabel`: `[q1]` against `target` (the pseudo-label).
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub kind: ConstraintKind,
    pub form: LossForm,
    pub queries: Vec<Query>,
    pub split: Option<SplitSpec>,
    pub target: Option<f64>,
    /// Set when pseudo-labeling was requested but no split column existed.
    pub fallback: bool,
}

impl LossTerm {
    /// Loss value for predictions aligned with `self.queries`: q-error for
    /// the equality forms, the hinge for the lower bound.
    pub fn value(&self, est: &[f64], hinge: HingeSpace) -> Result<f64> {
        if est.len() != self.queries.len() {
            return Err(Error::Validation(format!(
                "{} estimates for {} queries",
                est.len(),
                self.queries.len()
            )));
        }
        match self.form {
            LossForm::SumEquality => {
                let parent = match self.target {
                    Some(t) => t,
                    None => est[2],
                };
                qerror(parent, est[0] + est[1])
            }
            LossForm::HingeLowerBound => Ok(hinge_value(est[0], est[1], hinge)),
            LossForm::PseudoLabel => qerror(self.target.expect("pseudo-label set"), est[0]),
        }
    }

    pub fn evaluate(&self, est: &dyn Estimator, hinge: HingeSpace) -> Result<f64> {
        self.value(&est.estimate_batch(&self.queries)?, hinge)
    }
}

/// `relu(log c_q - log c_q1)` or `relu(c_q - c_q1)`.
pub fn hinge_value(c_q: f64, c_q1: f64, space: HingeSpace) -> f64 {
    if c_q <= c_q1 {
        return 0.0;
    }
    match space {
        HingeSpace::Log => c_q.ln() - c_q1.ln(),
        HingeSpace::Linear => c_q - c_q1,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintApplication {
    pub extra_samples: Vec<LabeledQuery>,
    pub loss_terms: Vec<LossTerm>,
}

/// Batched raw predictions (not clamped) from the model being trained.
pub type Predictor<'a> = &'a dyn Fn(&[Query]) -> Result<Vec<f64>>;

fn equality_drops(schema: &SchemaDef, q: &Query) -> Vec<String> {
    pk_drop_options(schema, q)
        .into_iter()
        .filter(|(_, r)| *r == PkFkRelation::Equality)
        .map(|(t, _)| t)
        .collect()
}

fn inequality_drops(schema: &SchemaDef, q: &Query) -> Vec<String> {
    pk_drop_options(schema, q)
        .into_iter()
        .filter(|(_, r)| *r == PkFkRelation::Inequality)
        .map(|(t, _)| t)
        .collect()
}

pub fn applicable(kind: ConstraintKind, schema: &SchemaDef, q: &Query) -> bool {
    match kind {
        ConstraintKind::Consistency => !split_candidates(schema, q).is_empty(),
        ConstraintKind::PkFkEquality => !pk_add_options(schema, q).is_empty() || !equality_drops(schema, q).is_empty(),
        ConstraintKind::PkFkInequality => !inequality_drops(schema, q).is_empty(),
    }
}

/// Applicable kinds in declaration order.
pub fn applicable_constraints(schema: &SchemaDef, q: &Query) -> Vec<ConstraintKind> {
    ConstraintKind::ALL
        .into_iter()
        .filter(|k| applicable(*k, schema, q))
        .collect()
}

fn not_applicable(kind: ConstraintKind, q: &Query) -> Error {
    Error::Applicability(format!("{kind} does not apply to {q}"))
}

/// One fresh split of `q`; the loss compares `ĉ(q1)+ĉ(q2)` with `label`
/// (or with `ĉ(q)` when `label` is `None`).
pub fn augment_consistency(schema: &SchemaDef, q: &Query, label: Option<f64>, rng: &mut Rng) -> Result<ConstraintApplication> {
    let spec = sample_split(schema, q, rng).ok_or_else(|| not_applicable(ConstraintKind::Consistency, q))?;
    let (q1, q2) = split_query(schema, q, &spec)?;
    let mut queries = vec![q1, q2];
    if label.is_none() {
        queries.push(q.clone());
    }
    Ok(ConstraintApplication {
        extra_samples: Vec::new(),
        loss_terms: vec![LossTerm {
            kind: ConstraintKind::Consistency,
            form: LossForm::SumEquality,
            queries,
            split: Some(spec),
            target: label,
            fallback: false,
        }],
    })
}

/// Transports `label` to `q` joined with (or stripped of) a predicate-free PK-side table.
pub fn augment_pkfk_equality(schema: &SchemaDef, q: &Query, label: u64, rng: &mut Rng) -> Result<ConstraintApplication> {
    let mut options: Vec<(bool, String)> = pk_add_options(schema, q).into_iter().map(|t| (true, t)).collect();
    options.extend(equality_drops(schema, q).into_iter().map(|t| (false, t)));
    let (add, table) = options
        .choose(rng)
        .cloned()
        .ok_or_else(|| not_applicable(ConstraintKind::PkFkEquality, q))?;
    let q2 = if add {
        add_table(schema, q, &table)?
    } else {
        drop_table(schema, q, &table)?.0
    };
    Ok(ConstraintApplication {
        extra_samples: vec![LabeledQuery {
            query: q2,
            cardinality: label,
        }],
        loss_terms: Vec::new(),
    })
}

/// Drops a PK-side table carrying predicates, giving `q1` with `|q| <= |q1|`.
///
/// `Bound` penalizes `ĉ(q) > ĉ(q1)` directly. `Pseudo` does the same while the
/// model satisfies the inequality; once it predicts `ĉ(q) > ĉ(q1)`, `q1` is
/// labeled with the mean of `ĉ(s1)+ĉ(s2)` over `k` consistency splits of `q1`.
/// Without a split column on `q1` it falls back to `Bound`.
pub fn augment_pkfk_inequality(
    schema: &SchemaDef,
    q: &Query,
    mode: InequalityMode,
    k: usize,
    model: Option<Predictor<'_>>,
    rng: &mut Rng,
) -> Result<ConstraintApplication> {
    let table = inequality_drops(schema, q)
        .choose(rng)
        .cloned()
        .ok_or_else(|| not_applicable(ConstraintKind::PkFkInequality, q))?;
    let (q1, _) = drop_table(schema, q, &table)?;
    let bound = |fallback| LossTerm {
        kind: ConstraintKind::PkFkInequality,
        form: LossForm::HingeLowerBound,
        queries: vec![q.clone(), q1.clone()],
        split: None,
        target: None,
        fallback,
    };
    let term = match mode {
        InequalityMode::Bound => bound(false),
        InequalityMode::Pseudo => {
            let model = model.ok_or_else(|| Error::Config("pseudo-labeling needs a model".into()))?;
            if k == 0 {
                return Err(Error::Config("pseudo-labeling needs k >= 1".into()));
            }
            let est = model(&[q.clone(), q1.clone()])?;
            if split_candidates(schema, &q1).is_empty() {
                bound(true)
            } else if est.len() == 2 && est[0] <= est[1] {
                // already satisfied: no penalty, as under labeling by bound
                bound(false)
            } else {
                let label = pseudo_label(schema, &q1, k, model, rng)?;
                LossTerm {
                    kind: ConstraintKind::PkFkInequality,
                    form: LossForm::PseudoLabel,
                    queries: vec![q1.clone()],
                    split: None,
                    target: Some(label),
                    fallback: false,
                }
            }
        }
    };
    Ok(ConstraintApplication {
        extra_samples: Vec::new(),
        loss_terms: vec![term],
    })
}

/// Mean over `k` fresh splits of `ĉ(s1)+ĉ(s2)`.
pub fn pseudo_label(schema: &SchemaDef, q: &Query, k: usize, model: Predictor<'_>, rng: &mut Rng) -> Result<f64> {
    let mut splits = Vec::with_capacity(2 * k);
    for _ in 0..k {
        let spec = sample_split(schema, q, rng).ok_or_else(|| not_applicable(ConstraintKind::Consistency, q))?;
        let (a, b) = split_query(schema, q, &spec)?;
        splits.push(a);
        splits.push(b);
    }
    let est = model(&splits)?;
    let total: f64 = est.chunks(2).map(|p| p[0] + p[1]).sum();
    Ok(total / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentOptions {
    pub inequality_mode: InequalityMode,
    pub pseudo_k: usize,
    /// Use the known parent label in consistency terms.
    pub consistency_uses_label: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            inequality_mode: InequalityMode::Pseudo,
            pseudo_k: 5,
            consistency_uses_label: true,
        }
    }
}

pub fn augment(
    kind: ConstraintKind,
    schema: &SchemaDef,
    lq: &LabeledQuery,
    opts: &AugmentOptions,
    model: Option<Predictor<'_>>,
    rng: &mut Rng,
) -> Result<ConstraintApplication> {
    match kind {
        ConstraintKind::Consistency => {
            let label = opts.consistency_uses_label.then_some(lq.cardinality as f64);
            augment_consistency(schema, &lq.query, label, rng)
        }
        ConstraintKind::PkFkEquality => augment_pkfk_equality(schema, &lq.query, lq.cardinality, rng),
        ConstraintKind::PkFkInequality => {
            augment_pkfk_inequality(schema, &lq.query, opts.inequality_mode, opts.pseudo_k, model, rng)
        }
    }
}
