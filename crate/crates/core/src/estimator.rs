//! The common face of every cardinality estimator.

use crate::dataset::Dataset;
use crate::error::Result;
use crate::oracle::execute_count;
use crate::query::Query;

pub trait Estimator: Sync {
    fn name(&self) -> &str;

    fn estimate(&self, q: &Query) -> Result<f64>;

    fn estimate_batch(&self, qs: &[Query]) -> Result<Vec<f64>> {
        qs.iter().map(|q| self.estimate(q)).collect()
    }
}

/// Exact counts, unclamped: a predictor that satisfies every constraint.
pub struct OracleEstimator<'a> {
    ds: &'a Dataset,
}

impl<'a> OracleEstimator<'a> {
    pub fn new(ds: &'a Dataset) -> Self {
        Self { ds }
    }
}

impl Estimator for OracleEstimator<'_> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        Ok(execute_count(self.ds, q)? as f64)
    }
}

/// Wraps a closure; handy for constructed estimators.
pub struct FnEstimator<F> {
    name: String,
    f: F,
}

impl<F> FnEstimator<F>
where
    F: Fn(&Query) -> Result<f64> + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> Estimator for FnEstimator<F>
where
    F: Fn(&Query) -> Result<f64> + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        (self.f)(q)
    }
}
