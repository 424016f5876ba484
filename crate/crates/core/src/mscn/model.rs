use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{FeatureSet, FeatureWidths, Featurizer, SetFeatures};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::nn::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::query::Query;
use crate::seed::rng_for;

pub const CHECKPOINT_FORMAT: &str = "cordonlab-mscn";
pub const CHECKPOINT_VERSION: u64 = 1;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_CLAMP_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Mlp2 {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Mlp2 {
    fn new(store: &mut ParamStore, prefix: &str, inp: usize, hidden: usize, out: usize, rng: &mut crate::seed::Rng) -> Self {
        Self {
            w1: store.add_glorot(format!("{prefix}.l1.w"), inp, hidden, rng),
            b1: store.add(format!("{prefix}.l1.b"), Tensor::zeros(1, hidden)),
            w2: store.add_glorot(format!("{prefix}.l2.w"), hidden, out, rng),
            b2: store.add(format!("{prefix}.l2.b"), Tensor::zeros(1, out)),
        }
    }

    fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let id = |s: &str| {
            let name = format!("{prefix}.{s}");
            store.id(&name).ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))
        };
        Ok(Self {
            w1: id("l1.w")?,
            b1: id("l1.b")?,
            w2: id("l2.w")?,
            b2: id("l2.b")?,
        })
    }

    /// Linear, ReLU, Linear, then ReLU unless `last_linear`.
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, last_linear: bool) -> Result<NodeId> {
        let (w1, b1, w2, b2) = (g.param(store, self.w1), g.param(store, self.b1), g.param(store, self.w2), g.param(store, self.b2));
        let h = g.linear(x, w1, b1)?;
        let h = g.relu(h);
        let o = g.linear(h, w2, b2)?;
        Ok(if last_linear { o } else { g.relu(o) })
    }
}

struct StackedSet {
    x: Tensor,
    seg: Vec<usize>,
    mask: Vec<f64>,
}

impl StackedSet {
    fn new(sets: &[&SetFeatures], width: usize) -> Result<Self> {
        let rows: usize = sets.iter().map(|s| s.rows()).sum();
        let mut values = Vec::with_capacity(rows * width);
        let mut seg = Vec::with_capacity(rows);
        let mut mask = Vec::with_capacity(rows);
        for (i, s) in sets.iter().enumerate() {
            if s.width != width {
                return Err(Error::Validation(format!("feature width {} does not match model width {width}", s.width)));
            }
            values.extend_from_slice(&s.values);
            seg.extend(std::iter::repeat_n(i, s.rows()));
            mask.extend_from_slice(&s.mask);
        }
        Ok(Self {
            x: Tensor::new(vec![rows, width], values)?,
            seg,
            mask,
        })
    }
}

/// Featurized queries stacked for one forward pass.
pub struct Batch {
    n: usize,
    tables: StackedSet,
    joins: StackedSet,
    preds: StackedSet,
}

impl Batch {
    pub fn new(features: &[&FeatureSet], widths: FeatureWidths) -> Result<Self> {
        let pick = |f: fn(&FeatureSet) -> &SetFeatures| features.iter().map(|fs| f(fs)).collect::<Vec<_>>();
        Ok(Self {
            n: features.len(),
            tables: StackedSet::new(&pick(|f| &f.tables), widths.table)?,
            joins: StackedSet::new(&pick(|f| &f.joins), widths.join)?,
            preds: StackedSet::new(&pick(|f| &f.preds), widths.pred)?,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Three set encoders with mean pooling feeding an output network that
/// predicts natural-log cardinality.
#[derive(Debug, Clone, PartialEq)]
pub struct MscnModel {
    pub store: ParamStore,
    schema_fingerprint: String,
    s: usize,
    h: usize,
    sample_seed: u64,
    widths: FeatureWidths,
    table_enc: Mlp2,
    join_enc: Mlp2,
    pred_enc: Mlp2,
    out: Mlp2,
}

impl MscnModel {
    pub fn new(featurizer: &Featurizer, h: usize, seed: u64) -> Result<Self> {
        if h == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        let widths = featurizer.widths();
        let mut rng = rng_for(seed, "mscn-init", 0);
        let mut store = ParamStore::new();
        let table_enc = Mlp2::new(&mut store, "table", widths.table, h, h, &mut rng);
        let join_enc = Mlp2::new(&mut store, "join", widths.join, h, h, &mut rng);
        let pred_enc = Mlp2::new(&mut store, "pred", widths.pred, h, h, &mut rng);
        let out = Mlp2::new(&mut store, "out", 3 * h, h, 1, &mut rng);
        Ok(Self {
            store,
            schema_fingerprint: featurizer.schema().fingerprint(),
            s: featurizer.sample_size(),
            h,
            sample_seed: featurizer.sample_seed(),
            widths,
            table_enc,
            join_enc,
            pred_enc,
            out,
        })
    }

    pub fn schema_fingerprint(&self) -> &str {
        &self.schema_fingerprint
    }

    pub fn sample_size(&self) -> usize {
        self.s
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn sample_seed(&self) -> u64 {
        self.sample_seed
    }

    pub fn widths(&self) -> FeatureWidths {
        self.widths
    }

    /// Sets the output bias, e.g. to the mean training log-label.
    pub fn set_output_bias(&mut self, v: f64) {
        self.store.value_mut(self.out.b2).values_mut()[0] = v;
    }

    /// Raw log-cardinalities as an `n x 1` node.
    pub fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<NodeId> {
        self.forward_with(&self.store, g, batch)
    }

    /// [`MscnModel::forward`] reading parameters from `st`, which must share this model's layout.
    pub fn forward_with(&self, st: &ParamStore, g: &mut Graph, batch: &Batch) -> Result<NodeId> {
        let mut pooled = Vec::with_capacity(3);
        for (enc, set) in [(&self.table_enc, &batch.tables), (&self.join_enc, &batch.joins), (&self.pred_enc, &batch.preds)] {
            let x = g.constant(set.x.clone());
            let h = enc.forward(g, st, x, false)?;
            pooled.push(g.segment_mean(h, &set.seg, &set.mask, batch.n)?);
        }
        let cat = g.concat(&pooled)?;
        self.out.forward(g, st, cat, true)
    }

    pub fn predict_raw(&self, features: &[&FeatureSet]) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let batch = Batch::new(features, self.widths)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, &batch)?;
        Ok(g.value(out).values().to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let tensors = self
            .store
            .ids()
            .map(|id| {
                let t = self.store.value(id);
                (
                    self.store.name(id).to_string(),
                    TensorJson {
                        shape: t.shape().to_vec(),
                        values: t.values().to_vec(),
                    },
                )
            })
            .collect();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            schema_fingerprint: self.schema_fingerprint.clone(),
            s: self.s,
            h: self.h,
            sample_seed: self.sample_seed,
            tensors,
        };
        Ok(serde_json::to_string(&ck)? + "\n")
    }

    /// Loads a checkpoint and checks it against `expected_fingerprint`.
    pub fn load(path: &Path, expected_fingerprint: &str) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, expected_fingerprint)
    }

    pub fn from_json(text: &str, expected_fingerprint: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        if raw.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(raw).map_err(|e| Error::Format(e.to_string()))?;
        if ck.schema_fingerprint != expected_fingerprint {
            return Err(Error::Fingerprint {
                model: ck.schema_fingerprint,
                schema: expected_fingerprint.to_string(),
            });
        }
        let mut store = ParamStore::new();
        let mut tensors = ck.tensors;
        // Parameters are restored in construction order so ids stay stable.
        for prefix in ["table", "join", "pred", "out"] {
            for part in ["l1.w", "l1.b", "l2.w", "l2.b"] {
                let name = format!("{prefix}.{part}");
                let t = tensors
                    .remove(&name)
                    .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
                let t = Tensor::new(t.shape, t.values).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
                store.add(name, t);
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("checkpoint has unknown tensor {extra}")));
        }
        let w = |id: ParamId| store.value(id).rows();
        let table_enc = Mlp2::lookup(&store, "table")?;
        let join_enc = Mlp2::lookup(&store, "join")?;
        let pred_enc = Mlp2::lookup(&store, "pred")?;
        let out = Mlp2::lookup(&store, "out")?;
        let widths = FeatureWidths {
            table: w(table_enc.w1),
            join: w(join_enc.w1),
            pred: w(pred_enc.w1),
        };
        for (name, enc, inp, o) in [
            ("table", table_enc, widths.table, ck.h),
            ("join", join_enc, widths.join, ck.h),
            ("pred", pred_enc, widths.pred, ck.h),
            ("out", out, 3 * ck.h, 1),
        ] {
            let shapes = [
                (enc.w1, vec![inp, ck.h]),
                (enc.b1, vec![1, ck.h]),
                (enc.w2, vec![ck.h, o]),
                (enc.b2, vec![1, o]),
            ];
            for (id, expect) in shapes {
                if store.value(id).shape() != expect.as_slice() {
                    return Err(Error::Format(format!(
                        "tensor {} of {name} has shape {:?}, expected {expect:?}",
                        store.name(id),
                        store.value(id).shape()
                    )));
                }
            }
        }
        Ok(Self {
            store,
            schema_fingerprint: ck.schema_fingerprint,
            s: ck.s,
            h: ck.h,
            sample_seed: ck.sample_seed,
            widths,
            table_enc,
            join_enc,
            pred_enc,
            out,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TensorJson {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u64,
    schema_fingerprint: String,
    s: usize,
    h: usize,
    sample_seed: u64,
    tensors: BTreeMap<String, TensorJson>,
}

/// Prediction with an explicit fingerprint check.
pub fn predict(model: &MscnModel, schema_fingerprint: &str, fs: &FeatureSet, clamp_floor: f64) -> Result<f64> {
    if model.schema_fingerprint != schema_fingerprint {
        return Err(Error::Fingerprint {
            model: model.schema_fingerprint.clone(),
            schema: schema_fingerprint.to_string(),
        });
    }
    let raw = model.predict_raw(&[fs])?[0];
    Ok(raw.exp().max(clamp_floor))
}

const PREDICT_CHUNK: usize = 512;

/// A trained model bound to the dataset it featurizes against.
#[derive(Debug, Clone)]
pub struct MscnEstimator {
    name: String,
    model: MscnModel,
    featurizer: Featurizer,
    clamp_floor: f64,
}

impl MscnEstimator {
    pub fn new(model: MscnModel, ds: &Dataset) -> Result<Self> {
        let fp = ds.schema.fingerprint();
        if model.schema_fingerprint != fp {
            return Err(Error::Fingerprint {
                model: model.schema_fingerprint.clone(),
                schema: fp,
            });
        }
        let featurizer = Featurizer::new(ds, model.s, model.sample_seed)?;
        Ok(Self::with_featurizer(model, featurizer))
    }

    pub fn with_featurizer(model: MscnModel, featurizer: Featurizer) -> Self {
        Self {
            name: "mscn".into(),
            model,
            featurizer,
            clamp_floor: DEFAULT_CLAMP_FLOOR,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_clamp_floor(mut self, floor: f64) -> Self {
        self.clamp_floor = floor;
        self
    }

    pub fn model(&self) -> &MscnModel {
        &self.model
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn predict_raw(&self, qs: &[Query]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(qs.len());
        for chunk in qs.chunks(PREDICT_CHUNK) {
            let fs = chunk.iter().map(|q| self.featurizer.featurize(q)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&FeatureSet> = fs.iter().collect();
            out.extend(self.model.predict_raw(&refs)?);
        }
        Ok(out)
    }
}

impl Estimator for MscnEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        Ok(self.estimate_batch(std::slice::from_ref(q))?[0])
    }

    fn estimate_batch(&self, qs: &[Query]) -> Result<Vec<f64>> {
        Ok(self
            .predict_raw(qs)?
            .into_iter()
            .map(|r| r.exp().max(self.clamp_floor))
            .collect())
    }
}
