use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameters with gradient accumulators and Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let (r, c) = (value.rows(), value.cols());
        self.params.push(Param {
            name: name.into(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform weights of shape `fan_in x fan_out`.
    pub fn add_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let vals = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, Tensor::new(vec![fan_in, fan_out], vals).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, lr: f64, kind: OptimizerKind) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in parameter {}", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for p in &mut self.params {
            let g = p.grad.values();
            match kind {
                OptimizerKind::Sgd => {
                    for (w, gv) in p.value.values_mut().iter_mut().zip(g) {
                        *w -= lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let m = p.m.values_mut();
                    let v = p.v.values_mut();
                    let w = p.value.values_mut();
                    for k in 0..g.len() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        w[k] -= lr * mh / (vh.sqrt() + EPS);
                    }
                }
            }
        }
        self.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;

    fn square_loss(store: &ParamStore, w: ParamId) -> (Graph, crate::nn::graph::NodeId) {
        let mut g = Graph::new();
        let x = g.param(store, w);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        (g, s)
    }

    #[test]
    fn sgd_on_square_by_hand() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0));
        let (mut g, s) = square_loss(&store, w);
        g.backward(s, Some(&mut store)).unwrap();
        assert_eq!(store.grad(w).item(), 2.0);
        store.step(0.1, OptimizerKind::Sgd).unwrap();
        assert!((store.value(w).item() - 0.8).abs() < 1e-15);
        assert_eq!(store.grad(w).item(), 0.0);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.25));
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            store.step(0.5, kind).unwrap();
            assert_eq!(store.value(w).item(), 0.25);
        }
    }

    #[test]
    fn sgd_decreases_convex_quadratic_monotonically() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![1, 3], vec![3.0, -2.0, 0.5]).unwrap());
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let (mut g, s) = square_loss(&store, w);
            let loss = g.value(s).item();
            assert!(loss < last || loss == 0.0);
            last = loss;
            g.backward(s, Some(&mut store)).unwrap();
            store.step(0.05, OptimizerKind::Sgd).unwrap();
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut store = ParamStore::new();
        let w = store.add("layer.w", Tensor::scalar(1.0));
        store.accumulate(w, &Tensor::scalar(f64::NAN));
        let e = store.step(0.1, OptimizerKind::Adam).unwrap_err();
        assert!(e.to_string().contains("layer.w"));
    }
}
