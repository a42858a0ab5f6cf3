//! Uniformly sampled scalar signals and the quadrature rules used on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar signal sampled on `start + k * step`, linearly interpolated in
/// between and held constant outside the sampled range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(start: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("series is empty"));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid(format!("series step must be positive, got {step}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("series contains non-finite values"));
        }
        Ok(Self { start, step, values })
    }

    pub fn constant(value: f64, start: f64, step: f64, len: usize) -> Self {
        Self { start, step, values: vec![value; len.max(1)] }
    }

    pub fn from_fn(start: f64, step: f64, len: usize, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..len).map(|k| f(start + k as f64 * step)).collect();
        Self { start, step, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> f64 {
        self.start + (self.values.len() - 1) as f64 * self.step
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Series {
        Series { start: self.start, step: self.step, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Series, f: impl Fn(f64, f64) -> f64) -> Series {
        debug_assert_eq!(self.len(), other.len());
        Series {
            start: self.start,
            step: self.step,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn is_constant(&self) -> bool {
        let first = self.values[0];
        self.values.iter().all(|&v| v == first)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Linear interpolation, clamped at both ends.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n == 1 {
            return self.values[0];
        }
        let s = (t - self.start) / self.step;
        if s <= 0.0 {
            return self.values[0];
        }
        let k = s.floor() as usize;
        if k >= n - 1 {
            return self.values[n - 1];
        }
        let w = s - k as f64;
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    /// Slope of the piecewise-linear interpolant (right-continuous), zero
    /// outside the sampled range.
    #[inline]
    pub fn slope(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n == 1 {
            return 0.0;
        }
        let s = (t - self.start) / self.step;
        if s < 0.0 {
            return 0.0;
        }
        let k = s.floor() as usize;
        if k >= n - 1 {
            return 0.0;
        }
        (self.values[k + 1] - self.values[k]) / self.step
    }

    pub fn resample(&self, start: f64, step: f64, len: usize) -> Series {
        Series::from_fn(start, step, len, |t| self.eval(t))
    }
}

/// Composite trapezoid weights for `n` uniform samples spaced `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let mut w = vec![h; n];
            w[0] = 0.5 * h;
            w[n - 1] = 0.5 * h;
            w
        }
    }
}

pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

/// Derivative of uniformly sampled data: fourth-order central differences in
/// the interior, fourth-order one-sided stencils on the two outermost points
/// at each end. Falls back to lower order for very short inputs.
pub fn derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    let v = values;
    if n < 2 {
        return d;
    }
    if n < 5 {
        for k in 0..n {
            d[k] = if k == 0 {
                (v[1] - v[0]) / h
            } else if k == n - 1 {
                (v[n - 1] - v[n - 2]) / h
            } else {
                (v[k + 1] - v[k - 1]) / (2.0 * h)
            };
        }
        return d;
    }
    for k in 2..n - 2 {
        d[k] = (v[k - 2] - 8.0 * v[k - 1] + 8.0 * v[k + 1] - v[k + 2]) / (12.0 * h);
    }
    d[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h);
    d[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h);
    d[n - 1] = (25.0 * v[n - 1] - 48.0 * v[n - 2] + 36.0 * v[n - 3] - 16.0 * v[n - 4] + 3.0 * v[n - 5])
        / (12.0 * h);
    d[n - 2] = (3.0 * v[n - 1] + 10.0 * v[n - 2] - 18.0 * v[n - 3] + 6.0 * v[n - 4] - v[n - 5]) / (12.0 * h);
    d
}
