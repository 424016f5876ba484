//! Eagerly evaluated tape with reverse-mode gradients.

use super::optim::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    SegmentMean { x: NodeId, seg: Vec<usize>, weight: Vec<f64> },
    Concat(Vec<NodeId>),
    Gather { x: NodeId, idx: Vec<usize> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Max(NodeId, NodeId),
    Abs(NodeId),
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A computation recorded as it is evaluated.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    track_kinks: bool,
    kinks: Vec<bool>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records which side of every ReLU/abs/max kink each element fell on.
    pub fn with_kink_tracking() -> Self {
        Self {
            track_kinks: true,
            ..Self::default()
        }
    }

    pub fn kink_signature(&self) -> &[bool] {
        &self.kinks
    }

    pub fn value(&self, n: NodeId) -> &Tensor {
        &self.nodes[n.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|n| self.nodes[n.0].needs_grad)
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let src = &self.nodes[a.0].value;
        let vals = src.values().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(src.shape().to_vec(), vals).expect("same shape");
        let ng = self.ng(&[a]);
        self.push(t, op, ng)
    }

    fn zip(&mut self, name: &'static str, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape(name, ta, tb)?;
        let vals = ta.values().iter().zip(tb.values()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals).expect("same shape");
        let ng = self.ng(&[a, b]);
        Ok(self.push(t, op, ng))
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is kept and readable through [`Graph::grad`].
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// A constant copy of `n`'s current value.
    pub fn detach(&mut self, n: NodeId) -> NodeId {
        let v = self.nodes[n.0].value.clone();
        self.constant(v)
    }

    /// `x W + b` for `x: n x i`, `W: i x o`, `b: 1 x o`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        if tx.cols() != tw.rows() {
            return Err(Error::Shape {
                op: "linear",
                left: tx.shape().to_vec(),
                right: tw.shape().to_vec(),
            });
        }
        if tb.rows() != 1 || tb.cols() != tw.cols() {
            return Err(Error::Shape {
                op: "linear bias",
                left: tw.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (n, i, o) = (tx.rows(), tx.cols(), tw.cols());
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(tb.values());
        }
        gemm(n, i, o, tx.values(), false, tw.values(), false, &mut out, 1.0);
        let t = Tensor::new(vec![n, o], out).expect("shape");
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(t, Op::Linear { x, w, b }, ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        if self.track_kinks {
            let k: Vec<bool> = self.nodes[x.0].value.values().iter().map(|&v| v > 0.0).collect();
            self.kinks.extend(k);
        }
        self.map(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Masked mean of the rows of `x` grouped by `seg` into `n_seg` output rows.
    /// Rows with mask 0 are ignored; a segment with no unmasked rows pools to zeros.
    pub fn segment_mean(&mut self, x: NodeId, seg: &[usize], mask: &[f64], n_seg: usize) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        if seg.len() != tx.rows() || mask.len() != tx.rows() {
            return Err(Error::Shape {
                op: "segment_mean",
                left: tx.shape().to_vec(),
                right: vec![seg.len(), mask.len()],
            });
        }
        let mut count = vec![0.0; n_seg];
        for (s, m) in seg.iter().zip(mask) {
            if *s >= n_seg {
                return Err(Error::Shape {
                    op: "segment_mean index",
                    left: vec![*s],
                    right: vec![n_seg],
                });
            }
            count[*s] += m;
        }
        let weight: Vec<f64> = seg
            .iter()
            .zip(mask)
            .map(|(s, m)| if *m == 0.0 { 0.0 } else { m / count[*s] })
            .collect();
        let d = tx.cols();
        let mut out = Tensor::zeros(n_seg, d);
        {
            let ov = out.values_mut();
            for (r, (s, w)) in seg.iter().zip(&weight).enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let row = tx.row(r);
                for (o, v) in ov[s * d..(s + 1) * d].iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                seg: seg.to_vec(),
                weight,
            },
            ng,
        ))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.nodes[parts[0].0].value.rows();
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat",
                    left: self.nodes[parts[0].0].value.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let t = Tensor::new(vec![rows, cols], out).expect("shape");
        let ng = self.ng(parts);
        Ok(self.push(t, Op::Concat(parts.to_vec()), ng))
    }

    /// Rows of `x` selected (with repetition) by `idx`.
    pub fn gather(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(idx.len() * tx.cols());
        for &i in idx {
            if i >= tx.rows() {
                return Err(Error::Shape {
                    op: "gather",
                    left: tx.shape().to_vec(),
                    right: vec![i],
                });
            }
            out.extend_from_slice(tx.row(i));
        }
        let t = Tensor::new(vec![idx.len(), tx.cols()], out).expect("shape");
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Gather { x, idx: idx.to_vec() }, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.track_kinks && self.value(a).shape() == self.value(b).shape() {
            let k: Vec<bool> = self
                .value(a)
                .values()
                .iter()
                .zip(self.value(b).values())
                .map(|(x, y)| x >= y)
                .collect();
            self.kinks.extend(k);
        }
        self.zip("max", a, b, Op::Max(a, b), |x, y| if x >= y { x } else { y })
    }

    pub fn scale(&mut self, a: NodeId, f: f64) -> NodeId {
        self.map(a, Op::Scale(a, f), |x| x * f)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, Op::AddConst(a), |x| x + c)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        if self.track_kinks {
            let k: Vec<bool> = self.value(a).values().iter().map(|&v| v >= 0.0).collect();
            self.kinks.extend(k);
        }
        self.map(a, Op::Abs(a), f64::abs)
    }

    /// Sum of all elements as a `1 x 1` tensor, in row-major order.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).values().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// `log(exp a + exp b)`, computed stably.
    pub fn log_add_exp(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let m = self.max(a, b)?;
        let m_const = self.detach(m);
        let da = self.sub(a, m_const)?;
        let db = self.sub(b, m_const)?;
        let ea = self.exp(da);
        let eb = self.exp(db);
        let s = self.add(ea, eb)?;
        let l = self.log(s);
        self.add(l, m_const)
    }

    /// Gradient of a leaf variable after [`Graph::backward`].
    pub fn grad(&self, n: NodeId) -> Option<&Tensor> {
        self.grads.get(n.0).and_then(Option::as_ref)
    }

    /// Back-propagates from the scalar `root`, accumulating parameter
    /// gradients into `store` (when given).
    pub fn backward(&mut self, root: NodeId, store: Option<&mut ParamStore>) -> Result<()> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: rv.shape().to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut store = store;

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            let acc = |grads: &mut Vec<Option<Tensor>>, target: NodeId, t: Tensor| {
                if !self.nodes[target.0].needs_grad {
                    return;
                }
                match &mut grads[target.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            let elementwise = |f: &dyn Fn(usize, f64) -> f64| {
                let vals = g.values().iter().enumerate().map(|(k, &gv)| f(k, gv)).collect();
                Tensor::new(g.shape().to_vec(), vals).expect("shape")
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Param(id) => {
                    if let Some(s) = store.as_deref_mut() {
                        s.accumulate(*id, &g);
                    }
                    grads[i] = Some(g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let (n, inp, o) = (tx.rows(), tx.cols(), tw.cols());
                    if self.nodes[x.0].needs_grad {
                        let mut dx = vec![0.0; n * inp];
                        gemm(n, o, inp, g.values(), false, tw.values(), true, &mut dx, 0.0);
                        acc(&mut grads, *x, Tensor::new(vec![n, inp], dx).expect("shape"));
                    }
                    if self.nodes[w.0].needs_grad {
                        let mut dw = vec![0.0; inp * o];
                        gemm(inp, n, o, tx.values(), true, g.values(), false, &mut dw, 0.0);
                        acc(&mut grads, *w, Tensor::new(vec![inp, o], dw).expect("shape"));
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut db = vec![0.0; o];
                        for r in 0..n {
                            for (d, v) in db.iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        acc(&mut grads, *b, Tensor::new(vec![1, o], db).expect("shape"));
                    }
                }
                Op::Relu(x) => {
                    let xv = self.nodes[x.0].value.values();
                    let t = elementwise(&|k, gv| if xv[k] > 0.0 { gv } else { 0.0 });
                    acc(&mut grads, *x, t);
                }
                Op::SegmentMean { x, seg, weight } => {
                    let d = g.cols();
                    let mut dx = Tensor::zeros(seg.len(), d);
                    let dv = dx.values_mut();
                    for (r, (s, w)) in seg.iter().zip(weight).enumerate() {
                        if *w == 0.0 {
                            continue;
                        }
                        for (o, gv) in dv[r * d..(r + 1) * d].iter_mut().zip(g.row(*s)) {
                            *o = w * gv;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.nodes[p.0].value.cols();
                        let mut vals = Vec::with_capacity(g.rows() * c);
                        for r in 0..g.rows() {
                            vals.extend_from_slice(&g.row(r)[off..off + c]);
                        }
                        off += c;
                        acc(&mut grads, *p, Tensor::new(vec![g.rows(), c], vals).expect("shape"));
                    }
                }
                Op::Gather { x, idx } => {
                    let tx = &self.nodes[x.0].value;
                    let c = tx.cols();
                    let mut dx = Tensor::zeros(tx.rows(), c);
                    let dv = dx.values_mut();
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, gv) in dv[src * c..(src + 1) * c].iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, elementwise(&|_, gv| -gv));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.nodes[a.0].value.values(), self.nodes[b.0].value.values());
                    acc(&mut grads, *a, elementwise(&|k, gv| gv * bv[k]));
                    acc(&mut grads, *b, elementwise(&|k, gv| gv * av[k]));
                }
                Op::Scale(a, f) => acc(&mut grads, *a, elementwise(&|_, gv| gv * f)),
                Op::AddConst(a) => acc(&mut grads, *a, g.clone()),
                Op::Log(a) => {
                    let av = self.nodes[a.0].value.values();
                    acc(&mut grads, *a, elementwise(&|k, gv| gv / av[k]));
                }
                Op::Exp(a) => {
                    let ov = node.value.values();
                    acc(&mut grads, *a, elementwise(&|k, gv| gv * ov[k]));
                }
                Op::Max(a, b) => {
                    let (av, bv) = (self.nodes[a.0].value.values(), self.nodes[b.0].value.values());
                    acc(&mut grads, *a, elementwise(&|k, gv| if av[k] >= bv[k] { gv } else { 0.0 }));
                    acc(&mut grads, *b, elementwise(&|k, gv| if av[k] >= bv[k] { 0.0 } else { gv }));
                }
                Op::Abs(a) => {
                    let av = self.nodes[a.0].value.values();
                    let sign = |v: f64| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    };
                    acc(&mut grads, *a, elementwise(&|k, gv| gv * sign(av[k])));
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a.0].value.shape();
                    acc(&mut grads, *a, Tensor::filled(shape[0], shape[1], g.item()));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_gradient_is_piecewise() {
        let mut g = Graph::new();
        let x = g.variable(row(&[2.0, -3.0]));
        let r = g.relu(x);
        let s = g.sum(r);
        g.backward(s, None).unwrap();
        assert_eq!(g.grad(x).unwrap().values(), &[1.0, 0.0]);
    }

    #[test]
    fn mean_pool_over_one_element_is_identity() {
        let mut g = Graph::new();
        let x = g.variable(row(&[1.5, -2.0, 7.0]));
        let p = g.segment_mean(x, &[0], &[1.0], 1).unwrap();
        assert_eq!(g.value(p), g.value(x));
    }

    #[test]
    fn masked_and_empty_segments() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![3, 1], vec![2.0, 4.0, 100.0]).unwrap());
        let p = g.segment_mean(x, &[0, 0, 1], &[1.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(g.value(p).values(), &[3.0, 0.0]);
        let s = g.sum(p);
        g.backward(s, None).unwrap();
        assert_eq!(g.grad(x).unwrap().values(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_structured() {
        let mut g = Graph::new();
        let a = g.constant(row(&[1.0, 2.0]));
        let b = g.constant(row(&[1.0, 2.0, 3.0]));
        match g.add(a, b) {
            Err(Error::Shape { op, left, right }) => {
                assert_eq!(op, "add");
                assert_eq!(left, vec![1, 2]);
                assert_eq!(right, vec![1, 3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn log_add_exp_matches_closed_form() {
        let mut g = Graph::new();
        let a = g.variable(row(&[3.0_f64.ln()]));
        let b = g.variable(row(&[7.0_f64.ln()]));
        let l = g.log_add_exp(a, b).unwrap();
        assert!((g.value(l).item() - 10.0_f64.ln()).abs() < 1e-12);
        let s = g.sum(l);
        g.backward(s, None).unwrap();
        assert!((g.grad(a).unwrap().item() - 0.3).abs() < 1e-12);
        assert!((g.grad(b).unwrap().item() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::column(vec![1.0, 2.0]));
        let y = g.gather(x, &[1, 1, 0]).unwrap();
        assert_eq!(g.value(y).values(), &[2.0, 2.0, 1.0]);
        let s = g.sum(y);
        g.backward(s, None).unwrap();
        assert_eq!(g.grad(x).unwrap().values(), &[1.0, 2.0]);
    }
}
