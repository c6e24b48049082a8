//! Monte Carlo simulation of the one- and two-factor models under the `T`-forward measure.
//!
//! The `x` state follows an Euler step; `y` is advanced with the exact exponential step for
//! the local variance frozen at the start of the step. Paths are independent functions of
//! `(seed, path index)`, so any split of the path range gives the same samples.

use alloc::vec::Vec;
use core::ops::Range;

use crate::bachelier::{gaussian_density_p, implied_total_variance};
use crate::error::{Error, Result};
use crate::localvol::{LocalVolSurface, TimeSlot};
use crate::math::{ceil, decay_integral, exp, sqrt, KahanSum};
use crate::rng::Philox4x32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub n_paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_paths: 200_000, steps_per_year: 96, seed: 1, antithetic: true }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidGrid("n_paths must be at least 2"));
        }
        if self.steps_per_year < 12 {
            return Err(Error::InvalidGrid("steps_per_year must be at least 12"));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::InvalidGrid("antithetic sampling needs an even number of paths"));
        }
        Ok(())
    }

    /// Number of steps to reach `maturity`: `ceil(maturity * steps_per_year)`.
    pub fn steps(&self, maturity: f64) -> usize {
        (ceil(maturity * self.steps_per_year as f64 - 1e-9) as usize).max(1)
    }
}

/// Source of standard normal pairs indexed by `(path counter, step)`.
pub trait NormalSource: Sync {
    fn pair(&self, counter: u64, step: u32) -> (f64, f64);
}

#[derive(Debug, Clone, Copy)]
pub struct PhiloxNormals {
    rng: Philox4x32,
}

impl PhiloxNormals {
    pub fn new(seed: u64) -> Self {
        Self { rng: Philox4x32::new(seed) }
    }
}

impl NormalSource for PhiloxNormals {
    #[inline]
    fn pair(&self, counter: u64, step: u32) -> (f64, f64) {
        self.rng.normal_pair(counter, step, 0)
    }
}

/// Sums consecutive pairs of steps of another source, so a grid with half the steps sees the
/// same Brownian increments as the fine grid.
#[derive(Debug, Clone, Copy)]
pub struct CoarsenedNormals<S> {
    pub inner: S,
}

impl<S: NormalSource> NormalSource for CoarsenedNormals<S> {
    fn pair(&self, counter: u64, step: u32) -> (f64, f64) {
        let (a0, b0) = self.inner.pair(counter, 2 * step);
        let (a1, b1) = self.inner.pair(counter, 2 * step + 1);
        let r = core::f64::consts::FRAC_1_SQRT_2;
        ((a0 + a1) * r, (b0 + b1) * r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheyetteParams1F {
    pub mu: f64,
}

impl CheyetteParams1F {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::domain("mu", mu));
        }
        Ok(Self { mu })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheyetteParams2F {
    pub mu1: f64,
    pub mu2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
}

impl CheyetteParams2F {
    /// Derives `beta >= 0` from `alpha^2 + 2 rho alpha beta + beta^2 = 1`.
    pub fn new(mu1: f64, mu2: f64, alpha: f64, rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::domain("rho", rho));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain("alpha", alpha));
        }
        let disc = rho * rho * alpha * alpha - alpha * alpha + 1.0;
        if disc < 0.0 {
            return Err(Error::domain("alpha", alpha));
        }
        let beta = -rho * alpha + sqrt(disc);
        Self::with_beta(mu1, mu2, alpha, beta, rho)
    }

    pub fn with_beta(mu1: f64, mu2: f64, alpha: f64, beta: f64, rho: f64) -> Result<Self> {
        for (what, mu) in [("mu1", mu1), ("mu2", mu2)] {
            if !(mu >= 0.0) || !mu.is_finite() {
                return Err(Error::domain(what, mu));
            }
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::domain("rho", rho));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain("alpha", alpha));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::domain("beta", beta));
        }
        let norm = alpha * alpha + 2.0 * rho * alpha * beta + beta * beta;
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::domain("loading normalization", norm));
        }
        Ok(Self { mu1, mu2, alpha, beta, rho })
    }

    /// `V V^T` entries `(11, 12, 22)`.
    pub fn loading_covariance(&self) -> (f64, f64, f64) {
        (self.alpha * self.alpha, self.rho * self.alpha * self.beta, self.beta * self.beta)
    }
}

/// A Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Sample mean of `f` over paths; antithetic pairs are averaged first so the standard error
/// accounts for their correlation.
fn estimate_by<F: Fn(usize) -> f64>(n: usize, antithetic: bool, f: F) -> Estimate {
    let group = if antithetic { 2 } else { 1 };
    let m = n / group;
    let mut sum = KahanSum::new();
    for g in 0..m {
        let v = if antithetic { 0.5 * (f(2 * g) + f(2 * g + 1)) } else { f(g) };
        sum.add(v);
    }
    let mean = sum.value() / m as f64;
    let mut ss = KahanSum::new();
    for g in 0..m {
        let v = if antithetic { 0.5 * (f(2 * g) + f(2 * g + 1)) } else { f(g) };
        ss.add((v - mean) * (v - mean));
    }
    let var = if m > 1 { ss.value() / (m - 1) as f64 } else { 0.0 };
    Estimate { value: mean, stderr: sqrt(var / m as f64) }
}

/// Terminal samples of a one-factor simulation to `maturity` under its forward measure.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble1F {
    pub maturity: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub antithetic: bool,
}

/// Expectation terms of the implicit local variance equation at one strike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AEstimate {
    /// `E[x (x - k)+]`
    pub x_call: Estimate,
    /// `E[y 1{x > k}]`
    pub y_digital: Estimate,
    /// `x_call - y_digital`
    pub a: f64,
    pub a_stderr: f64,
}

/// One strike of a Monte Carlo implied smile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpliedVolPoint {
    pub k: f64,
    /// Call price for `k >= 0`, put price below.
    pub price: Estimate,
    pub vol: f64,
    /// Price standard error mapped through the inverse vega.
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImpliedSmile {
    pub points: Vec<ImpliedVolPoint>,
    /// Strikes whose estimated price was not above intrinsic value.
    pub skipped: Vec<f64>,
}

impl PathEnsemble1F {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn estimate<F: Fn(f64, f64) -> f64>(&self, f: F) -> Estimate {
        estimate_by(self.len(), self.antithetic, |i| f(self.x[i], self.y[i]))
    }

    pub fn mean_x(&self) -> Estimate {
        self.estimate(|x, _| x)
    }
}

/// `E[(x_T - k)+]` with its standard error.
pub fn price_short_rate_option(ensemble: &PathEnsemble1F, k: f64) -> Estimate {
    ensemble.estimate(|x, _| (x - k).max(0.0))
}

/// `E[(k - x_T)+]` with its standard error.
pub fn price_short_rate_put(ensemble: &PathEnsemble1F, k: f64) -> Estimate {
    ensemble.estimate(|x, _| (k - x).max(0.0))
}

/// Bachelier implied vols of simulated out-of-the-money prices: calls for `k >= 0`, puts below.
/// In-the-money prices carry the intrinsic value's sampling noise, which swamps the time value
/// in the wings.
pub fn mc_implied_smile(ensemble: &PathEnsemble1F, strikes: &[f64]) -> ImpliedSmile {
    let mut out = ImpliedSmile::default();
    let t = ensemble.maturity;
    for &k in strikes {
        let price = if k >= 0.0 { price_short_rate_option(ensemble, k) } else { price_short_rate_put(ensemble, k) };
        let otm = k.abs();
        match implied_total_variance(price.value, otm) {
            Ok(w) => {
                let vol = sqrt(w / t);
                // d price / d vol = p(k, w) vol T
                let vega = gaussian_density_p(otm, w).map(|p| p * vol * t).unwrap_or(0.0);
                let band = if vega > 0.0 { price.stderr / vega } else { f64::INFINITY };
                out.points.push(ImpliedVolPoint { k, price, vol, band });
            }
            Err(_) => out.skipped.push(k),
        }
    }
    out
}

/// Sample estimates of `E[x (x - k)+]`, `E[y 1{x > k}]` and their difference.
pub fn estimate_a(ensemble: &PathEnsemble1F, k: f64) -> AEstimate {
    let x_call = ensemble.estimate(|x, _| x * (x - k).max(0.0));
    let y_digital = ensemble.estimate(|x, y| if x > k { y } else { 0.0 });
    let diff = ensemble.estimate(|x, y| x * (x - k).max(0.0) - if x > k { y } else { 0.0 });
    AEstimate { x_call, y_digital, a: x_call.value - y_digital.value, a_stderr: diff.stderr }
}

struct StepTable {
    dt: f64,
    sqrt_dt: f64,
    slots: Vec<TimeSlot>,
    // G_i(t, T) at each step start, per factor
    g: [Vec<f64>; 2],
}

impl StepTable {
    fn new(lv: &LocalVolSurface, maturity: f64, steps: usize, mus: [f64; 2]) -> Self {
        let dt = maturity / steps as f64;
        let mut slots = Vec::with_capacity(steps);
        let mut g = [Vec::with_capacity(steps), Vec::with_capacity(steps)];
        for i in 0..steps {
            let t = i as f64 * dt;
            slots.push(lv.time_slot(t));
            for (f, mu) in mus.iter().enumerate() {
                g[f].push(decay_integral(*mu, maturity - t));
            }
        }
        Self { dt, sqrt_dt: sqrt(dt), slots, g }
    }
}

fn check_maturity(maturity: f64) -> Result<()> {
    if !(maturity > 0.0) || !maturity.is_finite() {
        return Err(Error::domain("maturity", maturity));
    }
    Ok(())
}

/// `(counter, sign)` of the normal stream driving path `i`.
#[inline]
fn stream_of(i: usize, antithetic: bool) -> (u64, f64) {
    if antithetic {
        ((i / 2) as u64, if i % 2 == 0 { 1.0 } else { -1.0 })
    } else {
        (i as u64, 1.0)
    }
}

/// Simulates paths `range` of a one-factor run and returns their terminal `(x, y)`.
pub fn simulate_1f_paths<N: NormalSource + ?Sized>(
    params: &CheyetteParams1F,
    lv: &LocalVolSurface,
    maturity: f64,
    config: &McConfig,
    normals: &N,
    range: Range<usize>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    check_maturity(maturity)?;
    let steps = config.steps(maturity);
    let mu = params.mu;
    let table = StepTable::new(lv, maturity, steps, [mu, 0.0]);
    let decay = exp(-2.0 * mu * table.dt);
    let y_gain = decay_integral(2.0 * mu, table.dt);
    let mut xs = Vec::with_capacity(range.len());
    let mut ys = Vec::with_capacity(range.len());
    for i in range {
        let (counter, sign) = stream_of(i, config.antithetic);
        let (mut x, mut y) = (0.0f64, 0.0f64);
        for s in 0..steps {
            let var = lv.eval_at(table.slots[s], x);
            let z = sign * normals.pair(counter, s as u32).0;
            x += (y - mu * x - var * table.g[0][s]) * table.dt + sqrt(var) * table.sqrt_dt * z;
            y = y * decay + var * y_gain;
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::SimulationBlowup { path: i, step: s });
            }
        }
        xs.push(x);
        ys.push(y);
    }
    Ok((xs, ys))
}

/// Single-threaded one-factor simulation with Philox normals.
pub fn simulate_1f(
    params: &CheyetteParams1F,
    lv: &LocalVolSurface,
    maturity: f64,
    config: &McConfig,
) -> Result<PathEnsemble1F> {
    let normals = PhiloxNormals::new(config.seed);
    let (x, y) = simulate_1f_paths(params, lv, maturity, config, &normals, 0..config.n_paths)?;
    Ok(PathEnsemble1F { maturity, x, y, antithetic: config.antithetic })
}

/// Terminal samples of a two-factor simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble2F {
    pub maturity: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y11: Vec<f64>,
    pub y12: Vec<f64>,
    pub y22: Vec<f64>,
    pub antithetic: bool,
}

impl PathEnsemble2F {
    pub fn len(&self) -> usize {
        self.x1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }

    /// Sample mean over paths of `f(x1, x2, [y11, y12, y22])`.
    pub fn estimate<F: Fn(f64, f64, [f64; 3]) -> f64>(&self, f: F) -> Estimate {
        estimate_by(self.len(), self.antithetic, |i| f(self.x1[i], self.x2[i], [self.y11[i], self.y12[i], self.y22[i]]))
    }

    /// The short rate `x1 + x2` at maturity as a one-factor ensemble with `y = e^T y e`.
    pub fn short_rate(&self) -> PathEnsemble1F {
        PathEnsemble1F {
            maturity: self.maturity,
            x: self.x1.iter().zip(&self.x2).map(|(a, b)| a + b).collect(),
            y: (0..self.len()).map(|i| self.y11[i] + 2.0 * self.y12[i] + self.y22[i]).collect(),
            antithetic: self.antithetic,
        }
    }
}

type Paths2F = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Simulates paths `range` of a two-factor run with local vol evaluated at `x1 + x2`.
pub fn simulate_2f_paths<N: NormalSource + ?Sized>(
    params: &CheyetteParams2F,
    lv: &LocalVolSurface,
    maturity: f64,
    config: &McConfig,
    normals: &N,
    range: Range<usize>,
) -> Result<Paths2F> {
    config.validate()?;
    check_maturity(maturity)?;
    let steps = config.steps(maturity);
    let (mu1, mu2) = (params.mu1, params.mu2);
    let table = StepTable::new(lv, maturity, steps, [mu1, mu2]);
    let dt = table.dt;
    let (c11, c12, c22) = params.loading_covariance();
    // Cholesky factor of V V^T
    let l11 = params.alpha;
    let l21 = params.rho * params.beta;
    let l22 = params.beta * sqrt((1.0 - params.rho * params.rho).max(0.0));
    let rates = [2.0 * mu1, mu1 + mu2, 2.0 * mu2];
    let decay = rates.map(|r| exp(-r * dt));
    let gain = rates.map(|r| decay_integral(r, dt));
    let n = range.len();
    let mut out: Paths2F = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in range {
        let (counter, sign) = stream_of(i, config.antithetic);
        let (mut x1, mut x2) = (0.0f64, 0.0f64);
        let mut y = [0.0f64; 3];
        for s in 0..steps {
            let var = lv.eval_at(table.slots[s], x1 + x2);
            let (z1, z2) = normals.pair(counter, s as u32);
            let (z1, z2) = (sign * z1, sign * z2);
            let (g1, g2) = (table.g[0][s], table.g[1][s]);
            let vol = sqrt(var) * table.sqrt_dt;
            let drift1 = y[0] + y[1] - mu1 * x1 - var * (c11 * g1 + c12 * g2);
            let drift2 = y[1] + y[2] - mu2 * x2 - var * (c12 * g1 + c22 * g2);
            x1 += drift1 * dt + vol * l11 * z1;
            x2 += drift2 * dt + vol * (l21 * z1 + l22 * z2);
            let cov = [c11, c12, c22];
            for j in 0..3 {
                y[j] = y[j] * decay[j] + var * cov[j] * gain[j];
            }
            if !x1.is_finite() || !x2.is_finite() || !y.iter().all(|v| v.is_finite()) {
                return Err(Error::SimulationBlowup { path: i, step: s });
            }
        }
        out.0.push(x1);
        out.1.push(x2);
        out.2.push(y[0]);
        out.3.push(y[1]);
        out.4.push(y[2]);
    }
    Ok(out)
}

pub fn simulate_2f(
    params: &CheyetteParams2F,
    lv: &LocalVolSurface,
    maturity: f64,
    config: &McConfig,
) -> Result<PathEnsemble2F> {
    let normals = PhiloxNormals::new(config.seed);
    let (x1, x2, y11, y12, y22) = simulate_2f_paths(params, lv, maturity, config, &normals, 0..config.n_paths)?;
    Ok(PathEnsemble2F { maturity, x1, x2, y11, y12, y22, antithetic: config.antithetic })
}
