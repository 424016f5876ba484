//! The constraint-augmented training loop.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::constraints::{
    augment, applicable_constraints, AugmentOptions, ConstraintApplication, ConstraintKind, HingeSpace, InequalityMode,
    LossForm, LossTerm,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mscn::{Batch, FeatureSet, Featurizer, MscnModel};
use crate::nn::{Graph, NodeId, OptimizerKind, ParamStore, Tensor};
use crate::query::{to_jsonl_line, LabeledQuery, Query};
use crate::seed::{derive_seed, rng_for};

/// Symmetric multiplicative error `max(a/b, b/a)`.
pub fn qerror(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric(format!("q-error needs positive finite inputs, got ({a}, {b})")));
    }
    Ok((a / b).max(b / a))
}

/// Seeded uniform subsample of exactly `round(fraction * n)` queries (at
/// least one), kept in their original order.
pub fn subsample_labels(workload: &[LabeledQuery], fraction: f64, seed: u64) -> Result<Vec<LabeledQuery>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction {fraction} outside (0, 1]")));
    }
    let n = workload.len();
    let keep = ((fraction * n as f64).round() as usize).clamp(1.min(n), n);
    if keep == n {
        return Ok(workload.to_vec());
    }
    let mut idx = index::sample(&mut rng_for(seed, "label-fraction", 0), n, keep).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| workload[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    Off,
    Random,
    All,
}

impl std::str::FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "random" => Ok(Self::Random),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!("unknown constraint mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub omega: f64,
    pub constraint_mode: ConstraintMode,
    pub inequality_mode: InequalityMode,
    pub pseudo_k: usize,
    pub label_fraction: f64,
    pub seed: u64,
    pub clamp_floor: f64,
    pub hinge_space: HingeSpace,
    pub hidden: usize,
    pub sample_size: usize,
    pub optimizer: OptimizerKind,
    /// Feed extra labeled samples (PK-FK equality) into the empirical term.
    pub augment_samples: bool,
    /// Consistency terms compare against the known parent label.
    pub consistency_uses_label: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 128,
            lr: 1e-3,
            omega: 1.0,
            constraint_mode: ConstraintMode::Random,
            inequality_mode: InequalityMode::Pseudo,
            pseudo_k: 5,
            label_fraction: 1.0,
            seed: 0,
            clamp_floor: 1.0,
            hinge_space: HingeSpace::Log,
            hidden: crate::mscn::DEFAULT_HIDDEN,
            sample_size: crate::oracle::DEFAULT_SAMPLE_SIZE,
            optimizer: OptimizerKind::Adam,
            augment_samples: true,
            consistency_uses_label: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return bad(format!("omega must be a finite non-negative number, got {}", self.omega));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label fraction {} outside (0, 1]", self.label_fraction));
        }
        if self.inequality_mode == InequalityMode::Pseudo && self.pseudo_k == 0 {
            return bad("pseudo_k must be at least 1".into());
        }
        if self.clamp_floor <= 0.0 {
            return bad("clamp floor must be positive".into());
        }
        if self.hidden == 0 || self.sample_size == 0 {
            return bad("hidden width and sample size must be positive".into());
        }
        Ok(())
    }

    fn augment_options(&self) -> AugmentOptions {
        AugmentOptions {
            inequality_mode: self.inequality_mode,
            pseudo_k: self.pseudo_k,
            consistency_uses_label: self.consistency_uses_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub emp_loss: f64,
    pub logic_loss: f64,
    pub seconds: f64,
    /// Applications per kind, in [`ConstraintKind::ALL`] order.
    pub counts: [u64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub pseudo_fallbacks: u64,
    pub train_queries: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,emp_loss,logic_loss,seconds,n_consistency,n_pkfk_eq,n_pkfk_ineq\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.epoch, e.emp_loss, e.logic_loss, e.seconds, e.counts[0], e.counts[1], e.counts[2]
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64
    }

    pub fn total_counts(&self) -> [u64; 3] {
        let mut c = [0; 3];
        for e in &self.epochs {
            for k in 0..3 {
                c[k] += e.counts[k];
            }
        }
        c
    }
}

/// Log-space penalty vectors gathered from a set of loss terms.
#[derive(Default)]
struct LogicPlan {
    // |log t - lse(r1, r2)|
    sum_idx: (Vec<usize>, Vec<usize>),
    sum_target: Vec<f64>,
    // |r_q - lse(r1, r2)|
    free_idx: (Vec<usize>, Vec<usize>, Vec<usize>),
    // relu(r_q - r_q1)
    hinge_idx: (Vec<usize>, Vec<usize>),
    // |r_q1 - log t|
    pseudo_idx: Vec<usize>,
    pseudo_target: Vec<f64>,
    // the owning term of each scalar, in build order, for error messages
    owners: Vec<Query>,
}

impl LogicPlan {
    fn push(&mut self, t: &LossTerm, base: usize) {
        match (t.form, t.target) {
            (LossForm::SumEquality, Some(label)) => {
                self.sum_idx.0.push(base);
                self.sum_idx.1.push(base + 1);
                self.sum_target.push(label.ln());
            }
            (LossForm::SumEquality, None) => {
                self.free_idx.0.push(base);
                self.free_idx.1.push(base + 1);
                self.free_idx.2.push(base + 2);
            }
            (LossForm::HingeLowerBound, _) => {
                self.hinge_idx.0.push(base);
                self.hinge_idx.1.push(base + 1);
            }
            (LossForm::PseudoLabel, target) => {
                self.pseudo_idx.push(base);
                self.pseudo_target.push(target.expect("pseudo-label set").ln());
            }
        }
    }

    fn is_empty(&self) -> bool {
        self.sum_target.is_empty() && self.free_idx.0.is_empty() && self.hinge_idx.0.is_empty() && self.pseudo_idx.is_empty()
    }

    /// Per-term penalties as separate column nodes.
    fn build(&self, g: &mut Graph, r: NodeId, hinge: HingeSpace) -> Result<Vec<NodeId>> {
        let mut parts = Vec::new();
        if !self.sum_target.is_empty() {
            let a = g.gather(r, &self.sum_idx.0)?;
            let b = g.gather(r, &self.sum_idx.1)?;
            let s = g.log_add_exp(a, b)?;
            let t = g.constant(Tensor::column(self.sum_target.clone()));
            let d = g.sub(s, t)?;
            parts.push(g.abs(d));
        }
        if !self.free_idx.0.is_empty() {
            let a = g.gather(r, &self.free_idx.0)?;
            let b = g.gather(r, &self.free_idx.1)?;
            let q = g.gather(r, &self.free_idx.2)?;
            let s = g.log_add_exp(a, b)?;
            let d = g.sub(q, s)?;
            parts.push(g.abs(d));
        }
        if !self.hinge_idx.0.is_empty() {
            let q = g.gather(r, &self.hinge_idx.0)?;
            let q1 = g.gather(r, &self.hinge_idx.1)?;
            let d = match hinge {
                HingeSpace::Log => g.sub(q, q1)?,
                HingeSpace::Linear => {
                    let (eq, eq1) = (g.exp(q), g.exp(q1));
                    g.sub(eq, eq1)?
                }
            };
            parts.push(g.relu(d));
        }
        if !self.pseudo_idx.is_empty() {
            let q1 = g.gather(r, &self.pseudo_idx)?;
            let t = g.constant(Tensor::column(self.pseudo_target.clone()));
            let d = g.sub(q1, t)?;
            parts.push(g.abs(d));
        }
        Ok(parts)
    }
}

/// One minibatch objective: the summed absolute log-errors of `labeled` plus
/// `omega` times the summed penalties of `terms`, both divided by `labeled.len()`.
#[allow(clippy::too_many_arguments)]
pub fn loss_graph(
    model: &MscnModel,
    store: &ParamStore,
    featurizer: &Featurizer,
    g: &mut Graph,
    labeled: &[LabeledQuery],
    terms: &[LossTerm],
    omega: f64,
    hinge: HingeSpace,
) -> Result<NodeId> {
    if labeled.is_empty() {
        return Err(Error::Config("loss needs at least one labeled query".into()));
    }
    let mut features = labeled
        .iter()
        .map(|l| featurizer.featurize(&l.query))
        .collect::<Result<Vec<_>>>()?;
    let mut plan = LogicPlan::default();
    for t in terms {
        let base = features.len() - labeled.len();
        for q in &t.queries {
            features.push(featurizer.featurize(q)?);
        }
        plan.push(t, base);
    }
    let refs: Vec<&FeatureSet> = features.iter().collect();
    let batch = Batch::new(&refs, model.widths())?;
    let r = model.forward_with(store, g, &batch)?;
    let n = labeled.len();
    let pred = g.gather(r, &(0..n).collect::<Vec<_>>())?;
    let target = g.constant(Tensor::column(labeled.iter().map(|l| (l.cardinality.max(1) as f64).ln()).collect()));
    let diff = g.sub(pred, target)?;
    let emp = g.abs(diff);
    let emp = g.sum(emp);
    let scale = 1.0 / n as f64;
    let mut total = g.scale(emp, scale);
    if !plan.is_empty() {
        let rt = g.gather(r, &(n..features.len()).collect::<Vec<_>>())?;
        for p in plan.build(g, rt, hinge)? {
            let s = g.sum(p);
            let w = g.scale(s, omega * scale);
            total = g.add(total, w)?;
        }
    }
    Ok(total)
}

struct Prepared {
    queries: Vec<Query>,
    features: Vec<FeatureSet>,
}

impl Prepared {
    fn push(&mut self, f: &Featurizer, q: Query) -> Result<usize> {
        self.features.push(f.featurize(&q)?);
        self.queries.push(q);
        Ok(self.queries.len() - 1)
    }
}

fn first_non_finite(values: &[f64]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}

/// Trains a fresh model on `workload` over `ds`.
pub fn train(ds: &Dataset, workload: &[LabeledQuery], cfg: &TrainConfig) -> Result<(MscnModel, TrainLog)> {
    cfg.validate()?;
    if workload.is_empty() {
        return Err(Error::Config("training workload is empty".into()));
    }
    let workload = subsample_labels(workload, cfg.label_fraction, cfg.seed)?;
    let featurizer = Featurizer::new(ds, cfg.sample_size, derive_seed(cfg.seed, "featurizer", 0))?;
    let mut model = MscnModel::new(&featurizer, cfg.hidden, cfg.seed)?;
    let mean_log = workload.iter().map(|l| (l.cardinality.max(1) as f64).ln()).sum::<f64>() / workload.len() as f64;
    model.set_output_bias(mean_log);
    let log = train_model(&mut model, &featurizer, &workload, cfg)?;
    Ok((model, log))
}

/// Continues training `model` in place.
pub fn train_model(model: &mut MscnModel, featurizer: &Featurizer, workload: &[LabeledQuery], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let schema = featurizer.schema().clone();
    let n = workload.len();
    let main_features = workload
        .iter()
        .map(|lq| featurizer.featurize(&lq.query))
        .collect::<Result<Vec<_>>>()?;
    let applicable: Vec<Vec<ConstraintKind>> = match cfg.constraint_mode {
        ConstraintMode::Off => vec![Vec::new(); n],
        _ => workload.iter().map(|lq| applicable_constraints(&schema, &lq.query)).collect(),
    };
    let opts = cfg.augment_options();
    let mut log = TrainLog {
        train_queries: n,
        ..TrainLog::default()
    };

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(cfg.seed, "shuffle", epoch as u64));
        let mut counts = [0u64; 3];
        let (mut emp_sum, mut emp_n) = (0.0, 0usize);
        let (mut logic_sum, mut logic_n) = (0.0, 0usize);

        for chunk in order.chunks(cfg.batch_size) {
            // Constraint generation against the current parameters.
            let mut apps: Vec<ConstraintApplication> = Vec::new();
            if cfg.constraint_mode != ConstraintMode::Off {
                let predictor = |qs: &[Query]| -> Result<Vec<f64>> {
                    let fs = qs.iter().map(|q| featurizer.featurize(q)).collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&FeatureSet> = fs.iter().collect();
                    Ok(model.predict_raw(&refs)?.into_iter().map(f64::exp).collect())
                };
                for &i in chunk {
                    let kinds = &applicable[i];
                    if kinds.is_empty() {
                        continue;
                    }
                    let mut rng = rng_for(cfg.seed, "constraint", (epoch * n + i) as u64);
                    let chosen: Vec<ConstraintKind> = match cfg.constraint_mode {
                        ConstraintMode::Random => vec![*kinds.choose(&mut rng).expect("nonempty")],
                        _ => kinds.clone(),
                    };
                    for kind in chosen {
                        let app = augment(kind, &schema, &workload[i], &opts, Some(&predictor), &mut rng)?;
                        counts[kind.index()] += 1;
                        log.pseudo_fallbacks += app.loss_terms.iter().filter(|t| t.fallback).count() as u64;
                        apps.push(app);
                    }
                }
            }

            // Assemble the forward batch: main queries, extra samples, term queries.
            let mut extra = Prepared {
                queries: Vec::new(),
                features: Vec::new(),
            };
            let mut labels: Vec<f64> = chunk.iter().map(|&i| (workload[i].cardinality.max(1) as f64).ln()).collect();
            let mut label_queries: Vec<&Query> = chunk.iter().map(|&i| &workload[i].query).collect();
            if cfg.augment_samples {
                for app in &apps {
                    for s in &app.extra_samples {
                        extra.push(featurizer, s.query.clone())?;
                        labels.push((s.cardinality.max(1) as f64).ln());
                    }
                }
            }
            let n_emp = labels.len();
            let mut plan = LogicPlan::default();
            let mut term_prep = Prepared {
                queries: Vec::new(),
                features: Vec::new(),
            };
            for t in apps.iter().flat_map(|a| &a.loss_terms) {
                let base = term_prep.queries.len();
                for q in &t.queries {
                    term_prep.push(featurizer, q.clone())?;
                }
                plan.push(t, base);
                plan.owners.push(t.queries[0].clone());
            }
            let logic_in_graph = cfg.omega > 0.0 && !plan.is_empty();

            let mut feats: Vec<&FeatureSet> = chunk.iter().map(|&i| &main_features[i]).collect();
            feats.extend(extra.features.iter());
            let offset = feats.len();
            if logic_in_graph {
                feats.extend(term_prep.features.iter());
            }
            let batch = Batch::new(&feats, model.widths())?;
            let mut g = Graph::new();
            let r = model.forward(&mut g, &batch)?;

            let emp_idx: Vec<usize> = (0..n_emp).collect();
            let pred = g.gather(r, &emp_idx)?;
            let target = g.constant(Tensor::column(labels));
            let diff = g.sub(pred, target)?;
            let emp = g.abs(diff);
            if let Some(k) = first_non_finite(g.value(emp).values()) {
                label_queries.extend(extra.queries.iter());
                return Err(Error::Numeric(format!(
                    "non-finite empirical loss on {}",
                    to_jsonl_line(label_queries[k], None, None).trim_end()
                )));
            }
            emp_sum += g.value(emp).values().iter().sum::<f64>();
            emp_n += n_emp;
            let emp_total = g.sum(emp);
            let scale = 1.0 / chunk.len() as f64;
            let mut total = g.scale(emp_total, scale);

            if !plan.is_empty() {
                let (parts, values) = if logic_in_graph {
                    let shifted: Vec<usize> = (0..term_prep.queries.len()).map(|k| offset + k).collect();
                    let rt = g.gather(r, &shifted)?;
                    let parts = plan.build(&mut g, rt, cfg.hinge_space)?;
                    let values: Vec<f64> = parts.iter().flat_map(|p| g.value(*p).values().to_vec()).collect();
                    (Some(parts), values)
                } else {
                    // Forward only: the terms are logged but cannot move parameters.
                    let refs: Vec<&FeatureSet> = term_prep.features.iter().collect();
                    let raw = model.predict_raw(&refs)?;
                    let mut lg = Graph::new();
                    let rt = lg.constant(Tensor::column(raw));
                    let parts = plan.build(&mut lg, rt, cfg.hinge_space)?;
                    let values: Vec<f64> = parts.iter().flat_map(|p| lg.value(*p).values().to_vec()).collect();
                    (None, values)
                };
                if let Some(k) = first_non_finite(&values) {
                    return Err(Error::Numeric(format!(
                        "non-finite constraint loss on {}",
                        to_jsonl_line(&plan.owners[k.min(plan.owners.len() - 1)], None, None).trim_end()
                    )));
                }
                logic_sum += values.iter().sum::<f64>();
                logic_n += values.len();
                if let Some(parts) = parts {
                    let sums: Vec<NodeId> = parts.into_iter().map(|p| g.sum(p)).collect();
                    let mut acc = sums[0];
                    for s in &sums[1..] {
                        acc = g.add(acc, *s)?;
                    }
                    let weighted = g.scale(acc, cfg.omega * scale);
                    total = g.add(total, weighted)?;
                }
            }

            g.backward(total, Some(&mut model.store))?;
            model.store.step(cfg.lr, cfg.optimizer)?;
        }

        log.epochs.push(EpochLog {
            epoch,
            emp_loss: if emp_n > 0 { emp_sum / emp_n as f64 } else { 0.0 },
            logic_loss: if logic_n > 0 { logic_sum / logic_n as f64 } else { 0.0 },
            seconds: started.elapsed().as_secs_f64(),
            counts,
        });
    }
    Ok(log)
}
