//! Closed forms of the two-factor Gaussian model: the `y` components as functionals of the
//! ATM total variance term structure, and the effective mean reversion built from them.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{ceil, decay_integral, exp, expm1_over, sqrt};
use crate::mc::CheyetteParams2F;
use crate::quad::GaussLegendre;
use crate::surface::VarianceSurface;

/// ATM total variance `w(t)` and its derivative.
pub trait AtmTermStructure {
    fn w(&self, t: f64) -> f64;
    fn dw_dt(&self, t: f64) -> f64;
}

/// ATM slice `k = 0` of a variance surface; `w(0) = 0`.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceAtm<'a, S: ?Sized>(pub &'a S);

impl<S: VarianceSurface + ?Sized> AtmTermStructure for SurfaceAtm<'_, S> {
    fn w(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.0.eval(t, 0.0).map(|p| p.w).unwrap_or(f64::NAN)
    }

    fn dw_dt(&self, t: f64) -> f64 {
        self.0.eval(t.max(1e-12), 0.0).map(|p| p.dw_dt).unwrap_or(f64::NAN)
    }
}

/// Variance of the short rate in a two-factor Gaussian model with piecewise constant
/// `sigma^2(t)`: `variances[i]` applies from `times[i]` (the first time must be 0).
#[derive(Debug, Clone)]
pub struct GaussianTwoFactorAtm {
    params: CheyetteParams2F,
    times: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianTwoFactorAtm {
    pub fn new(params: CheyetteParams2F, times: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != variances.len() || times[0] != 0.0 {
            return Err(Error::InvalidGrid("piecewise variance needs matching lists starting at t = 0"));
        }
        if times.windows(2).any(|p| p[0] >= p[1]) || variances.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidGrid("times must increase and variances be nonnegative"));
        }
        Ok(Self { params, times, variances })
    }

    pub fn constant(params: CheyetteParams2F, sigma0: f64) -> Self {
        Self { params, times: alloc::vec![0.0], variances: alloc::vec![sigma0 * sigma0] }
    }

    /// `(y11, y22, y12)` at `t`.
    pub fn y(&self, t: f64) -> (f64, f64, f64) {
        let (c11, c12, c22) = self.params.loading_covariance();
        let rates = [2.0 * self.params.mu1, 2.0 * self.params.mu2, self.params.mu1 + self.params.mu2];
        let loads = [c11, c22, c12];
        let mut y = [0.0; 3];
        for (i, &t0) in self.times.iter().enumerate() {
            if t0 >= t {
                break;
            }
            let t1 = self.times.get(i + 1).copied().unwrap_or(f64::INFINITY).min(t);
            let dt = t1 - t0;
            for j in 0..3 {
                y[j] = y[j] * exp(-rates[j] * dt) + self.variances[i] * loads[j] * decay_integral(rates[j], dt);
            }
        }
        (y[0], y[1], y[2])
    }

    fn variance_at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        self.variances[i]
    }
}

impl AtmTermStructure for GaussianTwoFactorAtm {
    fn w(&self, t: f64) -> f64 {
        let (a, b, c) = self.y(t);
        a + b + 2.0 * c
    }

    fn dw_dt(&self, t: f64) -> f64 {
        let (a, b, c) = self.y(t);
        let p = &self.params;
        self.variance_at(t) - 2.0 * p.mu1 * a - 2.0 * p.mu2 * b - 2.0 * (p.mu1 + p.mu2) * c
    }
}

/// `u(t) = w'(t) + (mu1 + mu2) w(t)`.
pub fn u_func<A: AtmTermStructure + ?Sized>(ts: &A, mu1: f64, mu2: f64, t: f64) -> f64 {
    ts.dw_dt(t) + (mu1 + mu2) * ts.w(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoFactorConstants {
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub a_const: f64,
    pub b_const: f64,
}

pub fn constants(params: &CheyetteParams2F) -> Result<TwoFactorConstants> {
    let CheyetteParams2F { mu1, mu2, alpha, beta, rho } = *params;
    let s = 1.0 + 2.0 * rho * alpha * beta;
    let t = 2.0 * alpha * beta;
    let radicand = s * s - t * t;
    if radicand < -1e-14 {
        return Err(Error::domain("gamma radicand", radicand));
    }
    let gamma = sqrt(radicand.max(0.0));
    let (a2, b2) = (alpha * alpha, beta * beta);
    let d = mu1 - mu2;
    let lambda1 = mu1 + mu2 + (b2 - a2) * d / 2.0 + gamma * d / 2.0;
    Ok(TwoFactorConstants {
        gamma,
        lambda1,
        lambda2: lambda1 - gamma * d,
        a_const: (a2 - b2) * (a2 - b2) - 2.0 * (a2 + b2),
        b_const: a2 - b2,
    })
}

const PANEL_NODES: usize = 8;
const PANELS_PER_YEAR: f64 = 4.0;
const REL_TOL: f64 = 1e-10;
const MAX_DOUBLINGS: usize = 14;

/// `[int E u, int K u]` with `E = (e^{-l1 s} + e^{-l2 s}) / 2`, `K = (e^{-l1 s} - e^{-l2 s}) / gamma`
/// and `s = T - t`, by composite Gauss-Legendre doubled until converged.
fn kernel_integrals<A: AtmTermStructure + ?Sized>(
    params: &CheyetteParams2F,
    c: &TwoFactorConstants,
    ts: &A,
    maturity: f64,
) -> Result<[f64; 2]> {
    let d = params.mu1 - params.mu2;
    let gd = c.gamma * d;
    let rule = GaussLegendre::new(PANEL_NODES);
    let eval = |panels: usize| -> [f64; 2] {
        let h = maturity / panels as f64;
        let mut acc = [crate::math::KahanSum::new(), crate::math::KahanSum::new()];
        for p in 0..panels {
            let mid = h * (p as f64 + 0.5);
            for (x, wgt) in rule.nodes.iter().zip(&rule.weights) {
                let t = mid + 0.5 * h * x;
                let s = maturity - t;
                let u = u_func(ts, params.mu1, params.mu2, t);
                let e2 = exp(-c.lambda2 * s);
                let e1 = exp(-c.lambda1 * s);
                // (e1 - e2) / gamma without cancellation as gamma or d vanish
                let k = -d * s * e2 * expm1_over(-gd * s);
                let f = 0.5 * h * wgt;
                acc[0].add(f * 0.5 * (e1 + e2) * u);
                acc[1].add(f * k * u);
            }
        }
        [acc[0].value(), acc[1].value()]
    };
    let mut panels = (ceil(PANELS_PER_YEAR * maturity) as usize).max(1);
    let mut prev = eval(panels);
    for _ in 0..MAX_DOUBLINGS {
        panels *= 2;
        let next = eval(panels);
        let scale = prev[0].abs().max(prev[1].abs());
        if (0..2).all(|i| (next[i] - prev[i]).abs() <= REL_TOL * scale) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NoConvergence { what: "two-factor kernel quadrature", iterations: MAX_DOUBLINGS, residual: 0.0 })
}

fn check(params: &CheyetteParams2F, maturity: f64) -> Result<TwoFactorConstants> {
    if !(maturity > 0.0) || !maturity.is_finite() {
        return Err(Error::domain("maturity", maturity));
    }
    constants(params)
}

/// `(y1, y2, y3)` at `maturity`, with `y3 = (w - y1 - y2) / 2`.
pub fn y_closed_form<A: AtmTermStructure + ?Sized>(
    params: &CheyetteParams2F,
    ts: &A,
    maturity: f64,
) -> Result<(f64, f64, f64)> {
    let c = check(params, maturity)?;
    let [even, odd] = kernel_integrals(params, &c, ts, maturity)?;
    let (a2, b2) = (params.alpha * params.alpha, params.beta * params.beta);
    let y1 = a2 * (even + 0.5 * (b2 - a2 + 2.0) * odd);
    let y2 = b2 * (even + 0.5 * (b2 - a2 - 2.0) * odd);
    let y3 = 0.5 * (ts.w(maturity) - y1 - y2);
    Ok((y1, y2, y3))
}

/// Effective mean reversion from the kernel integral of `u`.
pub fn mu_eff<A: AtmTermStructure + ?Sized>(params: &CheyetteParams2F, ts: &A, maturity: f64) -> Result<f64> {
    let c = check(params, maturity)?;
    let w = ts.w(maturity);
    if !(w > 0.0) {
        return Err(Error::domain("w", w));
    }
    let [even, odd] = kernel_integrals(params, &c, ts, maturity)?;
    let integral = c.b_const * even - 0.5 * c.a_const * odd;
    Ok(0.5 * (params.mu1 + params.mu2) + (params.mu1 - params.mu2) / (2.0 * w) * integral)
}

/// Effective mean reversion from `y1 - y2`.
pub fn mu_eff_from_y<A: AtmTermStructure + ?Sized>(params: &CheyetteParams2F, ts: &A, maturity: f64) -> Result<f64> {
    let w = ts.w(maturity);
    if !(w > 0.0) {
        return Err(Error::domain("w", w));
    }
    let (y1, y2, _) = y_closed_form(params, ts, maturity)?;
    Ok(0.5 * (params.mu1 + params.mu2) + 0.5 * (params.mu1 - params.mu2) * (y1 - y2) / w)
}
