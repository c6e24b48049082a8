//! Natural cubic splines with analytic first and second derivatives.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Value with first and second derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Natural cubic spline; held flat (zero slope) outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n != y.len() {
            return Err(Error::InvalidGrid("spline abscissae and ordinates differ in length"));
        }
        if n < 3 {
            return Err(Error::InsufficientData("a spline slice needs at least 3 nodes"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid("spline abscissae must be strictly increasing"));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite spline node"));
        }
        // Thomas algorithm on the interior second derivatives.
        let mut m = alloc::vec![0.0; n];
        let mut c = alloc::vec![0.0; n];
        let mut d = alloc::vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let rhs = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
            c[i] = h1 / diag;
            d[i] = (rhs - h0 * d[i - 1]) / diag;
        }
        for i in (1..n - 1).rev() {
            m[i] = d[i] - c[i] * m[i + 1];
        }
        Ok(Self { x: x.to_vec(), y: y.to_vec(), m })
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn eval(&self, x: f64) -> Jet {
        let n = self.x.len();
        if x <= self.x[0] {
            return Jet { value: self.y[0], d1: 0.0, d2: 0.0 };
        }
        if x >= self.x[n - 1] {
            return Jet { value: self.y[n - 1], d1: 0.0, d2: 0.0 };
        }
        let j = self.x.partition_point(|&k| k <= x) - 1;
        let h = self.x[j + 1] - self.x[j];
        let a = (self.x[j + 1] - x) / h;
        let b = 1.0 - a;
        let (mj, mj1) = (self.m[j], self.m[j + 1]);
        let value = a * self.y[j]
            + b * self.y[j + 1]
            + ((a * a * a - a) * mj + (b * b * b - b) * mj1) * h * h / 6.0;
        let d1 = (self.y[j + 1] - self.y[j]) / h - (3.0 * a * a - 1.0) / 6.0 * h * mj
            + (3.0 * b * b - 1.0) / 6.0 * h * mj1;
        let d2 = a * mj + b * mj1;
        Jet { value, d1, d2 }
    }
}
