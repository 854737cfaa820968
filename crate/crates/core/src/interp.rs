//! Interpolating matrix paths from per-node samples.
//!
//! Inline coefficient tables cross the CLI boundary as node samples with a
//! declared interpolation rule; piecewise-cubic Hermite (finite-difference
//! slopes, C¹) is the default, piecewise-linear is available.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::systems::MatrixSampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    Linear,
    PiecewiseCubic,
}

impl Default for Interpolation {
    fn default() -> Self {
        Interpolation::PiecewiseCubic
    }
}

/// Matrix-valued path sampled at strictly increasing times.
#[derive(Clone)]
pub struct SampledMatrixPath {
    times: Vec<f64>,
    values: Vec<DMatrix<f64>>,
    kind: Interpolation,
}

impl SampledMatrixPath {
    pub fn new(times: Vec<f64>, values: Vec<DMatrix<f64>>, kind: Interpolation) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Config("node times and values differ in length".into()));
        }
        if times.len() < 2 {
            return Err(Error::Config("need at least two sample nodes".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("node times must be strictly increasing".into()));
        }
        let shape = (values[0].nrows(), values[0].ncols());
        if values.iter().any(|v| (v.nrows(), v.ncols()) != shape) {
            return Err(Error::Config("node values must share one shape".into()));
        }
        Ok(SampledMatrixPath { times, values, kind })
    }

    fn segment(&self, t: f64) -> usize {
        let last = self.times.len() - 2;
        match self.times.binary_search_by(|x| x.partial_cmp(&t).expect("finite time")) {
            Ok(i) => i.min(last),
            Err(0) => 0,
            Err(i) => (i - 1).min(last),
        }
    }

    /// Finite-difference node slope, one-sided at the ends.
    fn slope(&self, i: usize) -> DMatrix<f64> {
        let n = self.times.len();
        if i == 0 {
            (&self.values[1] - &self.values[0]) / (self.times[1] - self.times[0])
        } else if i == n - 1 {
            (&self.values[n - 1] - &self.values[n - 2]) / (self.times[n - 1] - self.times[n - 2])
        } else {
            (&self.values[i + 1] - &self.values[i - 1]) / (self.times[i + 1] - self.times[i - 1])
        }
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        match self.kind {
            Interpolation::Linear => &self.values[i] * (1.0 - s) + &self.values[i + 1] * s,
            Interpolation::PiecewiseCubic => {
                let m0 = self.slope(i) * h;
                let m1 = self.slope(i + 1) * h;
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                &self.values[i] * h00 + m0 * h10 + &self.values[i + 1] * h01 + m1 * h11
            }
        }
    }

    pub fn into_sampler(self) -> MatrixSampler {
        Arc::new(move |t| self.eval(t))
    }
}
