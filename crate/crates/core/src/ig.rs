//! Inverse Gaussian law `IG(a, a^2/b^2)` and the exact expectation term for a linear smile
//! `w(k) = a + b k`.

use crate::error::{finite, Error, Result};
use crate::math::{exp, mills_ratio, norm_cdf, norm_pdf, sqrt, FRAC_1_SQRT_2PI};

/// Inverse Gaussian with mean `a` and shape `a^2 / b^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IgParams {
    pub a: f64,
    pub b: f64,
}

impl IgParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::domain("a", a));
        }
        finite("b", b)?;
        if b == 0.0 {
            return Err(Error::domain("b", b));
        }
        Ok(Self { a, b })
    }

    pub fn shape(&self) -> f64 {
        self.a * self.a / (self.b * self.b)
    }
}

pub fn ig_pdf(u: f64, params: IgParams) -> Result<f64> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::domain("u", u));
    }
    let IgParams { a, b } = params;
    let b2 = b * b;
    Ok(a / b.abs() * FRAC_1_SQRT_2PI / (u * sqrt(u)) * exp(-(u - a) * (u - a) / (2.0 * b2 * u)))
}

/// `(Phi(-delta1), e^{2a/b^2} Phi(delta2), phi(delta1))` at threshold `x`.
///
/// The second entry equals `phi(delta1) R(-delta2)` with `R` the Mills ratio, which avoids the
/// overflowing exponential for small `b`.
fn tail_terms(x: f64, params: IgParams) -> (f64, f64, f64) {
    let IgParams { a, b } = params;
    let scale = b.abs() * sqrt(x);
    tail_terms_from((x - a) / scale, -(x + a) / scale)
}

fn tail_terms_from(d1: f64, d2: f64) -> (f64, f64, f64) {
    let pdf1 = norm_pdf(d1);
    (norm_cdf(-d1), pdf1 * mills_ratio(-d2), pdf1)
}

fn truncated_moments(x: f64, a: f64, b: f64, (upper, reflected, pdf1): (f64, f64, f64)) -> (f64, f64) {
    let b2 = b * b;
    let m1 = a * (upper + reflected);
    let m2 = (a * a + a * b2) * upper + (a * b2 - a * a) * reflected + 2.0 * a * b.abs() * sqrt(x) * pdf1;
    (m1, m2)
}

fn check_threshold(x: f64) -> Result<()> {
    if !(x > 0.0) || x.is_nan() {
        return Err(Error::domain("threshold", x));
    }
    Ok(())
}

/// `P(tau > x)`.
pub fn ig_survival(x: f64, params: IgParams) -> Result<f64> {
    check_threshold(x)?;
    if x.is_infinite() {
        return Ok(0.0);
    }
    let (upper, reflected, _) = tail_terms(x, params);
    Ok(upper - reflected)
}

/// `E[tau 1{tau > x}] = a [Phi(-delta1) + e^{2a/b^2} Phi(delta2)]`.
pub fn ig_trunc_m1(x: f64, params: IgParams) -> Result<f64> {
    check_threshold(x)?;
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(truncated_moments(x, params.a, params.b, tail_terms(x, params)).0)
}

/// `E[tau^2 1{tau > x}] = (a^2 + a b^2) Phi(-delta1) + (a b^2 - a^2) e^{2a/b^2} Phi(delta2)
/// + 2 a |b| sqrt(x) phi(delta1)`.
pub fn ig_trunc_m2(x: f64, params: IgParams) -> Result<f64> {
    check_threshold(x)?;
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(truncated_moments(x, params.a, params.b, tail_terms(x, params)).1)
}

/// `E[x (x - k)+] - E[(b^2/2 + w(x)) 1{x > k}]` for the law of `x` implied by `w(x) = a + b x`.
///
/// The first expectation is `E[tau 1{tau > a + bk}] / 2 + E[tau^2 1{tau > a + bk}] / (2a)`; the
/// second follows from the digital `P(x > k)` and `E[x 1{x > k}] = p (a + bk/2)`. Negative slopes
/// use the reflection `A(k; a, b) = -A(-k; a, -b)`.
pub fn a_exact_linear(k: f64, a: f64, b: f64) -> Result<f64> {
    finite("k", k)?;
    finite("b", b)?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain("a", a));
    }
    let x0 = a + b * k;
    if !(x0 > 0.0) {
        return Err(Error::domain("a + bk", x0));
    }
    if b == 0.0 {
        return Ok(0.0);
    }
    if b < 0.0 {
        return Ok(-a_exact_linear(-k, a, -b)?);
    }
    // at x0 = a + bk the threshold distances are exact in k: delta1 = k / sqrt(x0)
    let root = sqrt(x0);
    let terms = tail_terms_from(k / root, -(2.0 * a + b * k) / (b * root));
    let (m1, m2) = truncated_moments(x0, a, b, terms);
    let p = exp(-0.5 * k * k / x0) * FRAC_1_SQRT_2PI / sqrt(x0);
    let digital = norm_cdf(-k / sqrt(x0)) - 0.5 * p * b;
    let x_moment = p * (a + 0.5 * b * k);
    Ok(0.5 * m1 + m2 / (2.0 * a) - (0.5 * b * b + a) * digital - b * x_moment)
}

fn linear_density(k: f64, a: f64, b: f64) -> f64 {
    let w = a + b * k;
    exp(-0.5 * k * k / w) * FRAC_1_SQRT_2PI / sqrt(w)
}

/// `|A / p - b (a + bk + b^2) / 2|`.
pub fn expansion_error(k: f64, a: f64, b: f64) -> Result<f64> {
    let exact = a_exact_linear(k, a, b)?;
    if b == 0.0 {
        return Ok(0.0);
    }
    Ok((exact / linear_density(k, a, b) - 0.5 * b * (a + b * k + b * b)).abs())
}

/// `|A / p - ((a + bk) b / 2 + b^3 k / 2)|`, the competing cubic form.
pub fn expansion_error_variant(k: f64, a: f64, b: f64) -> Result<f64> {
    let exact = a_exact_linear(k, a, b)?;
    if b == 0.0 {
        return Ok(0.0);
    }
    Ok((exact / linear_density(k, a, b) - (0.5 * (a + b * k) * b + 0.5 * b * b * b * k)).abs())
}
