//! Elementary functions on top of `libm`, normal distribution helpers and compensated sums.

use core::f64::consts::{FRAC_1_SQRT_2, PI};

pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp(-0.5 * x * x)
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

const CF_TERMS: u32 = 160;
const CF_SWITCH: f64 = 3.0;

/// Mills ratio `Phi(-z) / phi(z)` for `z >= 0`, without underflow in the tail.
pub fn mills_ratio(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z < CF_SWITCH {
        return norm_cdf(-z) / norm_pdf(z);
    }
    // 1 / (z + 1 / (z + 2 / (z + 3 / ...)))
    let mut t = z;
    for n in (1..=CF_TERMS).rev() {
        t = z + f64::from(n) / t;
    }
    1.0 / t
}

/// Normalized Bachelier call value `h(d) = phi(d) - d * Phi(-d)`.
///
/// For `d >= 0` the tail uses `h(d) = phi(d) q / (d + q)` with `q` the continued fraction
/// `1 / (d + 2 / (d + 3 / ...))`, which avoids the cancellation of the direct form. Negative
/// arguments go through `h(-d) = h(d) + d`.
pub fn bachelier_unit(d: f64) -> f64 {
    if d < 0.0 {
        return bachelier_unit(-d) - d;
    }
    if d < CF_SWITCH {
        return norm_pdf(d) - d * norm_cdf(-d);
    }
    let mut t = d;
    for n in (2..=CF_TERMS).rev() {
        t = d + f64::from(n) / t;
    }
    let q = 1.0 / t;
    norm_pdf(d) * q / (d + q)
}

/// `expm1(x) / x`, equal to 1 at the origin.
#[inline]
pub fn expm1_over(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 + x * (0.5 + x / 6.0)
    } else {
        expm1(x) / x
    }
}

/// `(1 - exp(-mu * tau)) / mu`, continuous at `mu = 0`.
#[inline]
pub fn decay_integral(mu: f64, tau: f64) -> f64 {
    tau * expm1_over(-mu * tau)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a sequence, in iteration order.
pub fn sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Sample mean and standard error of the mean (`n - 1` normalization).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum(values.iter().copied()) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss = sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, sqrt(ss / (n - 1) as f64 / n as f64))
}

pub(crate) const TWO_PI: f64 = 2.0 * PI;
