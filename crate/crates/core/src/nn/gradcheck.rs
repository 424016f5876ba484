use super::graph::{Graph, NodeId};
use super::optim::ParamStore;
use crate::error::{Error, Result};

/// Denominator floor for relative errors; keeps near-zero gradients from
/// turning round-off into large relative figures.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Flagged {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU/abs/max kink.
    pub skipped: usize,
    pub flagged: Vec<Flagged>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    let mut g = Graph::with_kink_tracking();
    let out = f(store, &mut g)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::Shape {
            op: "grad_check",
            left: v.shape().to_vec(),
            right: vec![1, 1],
        });
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("loss is {v}")));
    }
    Ok((v, g.kink_signature().to_vec()))
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences for every parameter coordinate in `store`.
pub fn grad_check<F>(store: &mut ParamStore, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    store.zero_grads();
    let mut g = Graph::with_kink_tracking();
    let out = f(store, &mut g)?;
    if !g.value(out).is_finite() {
        return Err(Error::Numeric(format!("loss is {}", g.value(out).item())));
    }
    let base_kinks = g.kink_signature().to_vec();
    g.backward(out, Some(store))?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).values().to_vec()).collect();
    store.zero_grads();

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).values()[k];
            store.value_mut(id).values_mut()[k] = orig + h;
            let plus = evaluate(store, &f);
            store.value_mut(id).values_mut()[k] = orig - h;
            let minus = evaluate(store, &f);
            store.value_mut(id).values_mut()[k] = orig;
            let ((fp, kp), (fm, km)) = (plus?, minus?);
            if kp != base_kinks || km != base_kinks {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi][k];
            let rel = relative_error(a, numeric);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel > tol {
                report.flagged.push(Flagged {
                    param: store.name(id).to_string(),
                    index: k,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}
