//! Explicit local variance from a total implied variance surface, and its cached grid form.

use alloc::vec::Vec;

use crate::bachelier::{c_minus_k_dkc, density_ratio, dt_price, SmilePoint};
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::mc::AEstimate;
use crate::surface::{lv_numerator, VarianceSurface};

/// Density ratios at or below this value are rejected instead of floored.
pub const DENSITY_RATIO_FLOOR: f64 = 1e-4;

/// Negative local variances are replaced by `(FLOOR_VOL_FRACTION * sqrt(w / T))^2`.
pub const FLOOR_VOL_FRACTION: f64 = 0.05;

/// Which approximation of the expectation term to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Third,
}

/// A local variance value and whether the negative-variance floor was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalVariance {
    pub value: f64,
    pub floored: bool,
}

fn local_var(pt: &SmilePoint, t: f64, mu: f64, order: Order) -> Result<LocalVariance> {
    let ratio = density_ratio(pt);
    if !(ratio > DENSITY_RATIO_FLOOR) {
        return Err(Error::DegenerateDenominator { maturity: t, strike: pt.k, ratio });
    }
    let mut value = lv_numerator(pt, mu) / ratio;
    if order == Order::Third {
        value += pt.dw_dk * pt.dw_dk * pt.dw_dk;
    }
    if !value.is_finite() {
        return Err(Error::domain("local variance", value));
    }
    if value < 0.0 {
        let floor = FLOOR_VOL_FRACTION * sqrt(pt.w / t);
        return Ok(LocalVariance { value: floor * floor, floored: true });
    }
    Ok(LocalVariance { value, floored: false })
}

/// `[d_T w + mu (2w - k d_k w) + w d_k w] / ratio + (d_k w)^3`.
pub fn local_var_main<S: VarianceSurface + ?Sized>(surface: &S, mu: f64, t: f64, k: f64) -> Result<LocalVariance> {
    local_var(&surface.eval(t, k)?, t, mu, Order::Third)
}

/// The main formula without the cubic correction.
pub fn local_var_first_order<S: VarianceSurface + ?Sized>(
    surface: &S,
    mu: f64,
    t: f64,
    k: f64,
) -> Result<LocalVariance> {
    local_var(&surface.eval(t, k)?, t, mu, Order::First)
}

/// Multi-factor version: the mean reversion is replaced by `mu_eff(T)`.
pub fn local_var_multifactor<S, F>(surface: &S, mu_eff: F, t: f64, k: f64) -> Result<LocalVariance>
where
    S: VarianceSurface + ?Sized,
    F: Fn(f64) -> f64,
{
    local_var(&surface.eval(t, k)?, t, mu_eff(t), Order::Third)
}

/// Local variance of the requested order at a given mean reversion.
pub fn local_var_order<S: VarianceSurface + ?Sized>(
    surface: &S,
    mu: f64,
    t: f64,
    k: f64,
    order: Order,
) -> Result<LocalVariance> {
    local_var(&surface.eval(t, k)?, t, mu, order)
}

/// `p w d_k w / 2`.
pub fn a_first_order<S: VarianceSurface + ?Sized>(surface: &S, t: f64, k: f64) -> Result<f64> {
    let pt = surface.eval(t, k)?;
    Ok(0.5 * pt.density() * pt.w * pt.dw_dk)
}

/// `p (w d_k w + (d_k w)^3) / 2`.
pub fn a_third_order<S: VarianceSurface + ?Sized>(surface: &S, t: f64, k: f64) -> Result<f64> {
    let pt = surface.eval(t, k)?;
    Ok(0.5 * pt.density() * (pt.w * pt.dw_dk + pt.dw_dk * pt.dw_dk * pt.dw_dk))
}

/// Difference between a local variance and the implicit formula evaluated with simulated terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitResidual {
    pub local_var: f64,
    pub implied: f64,
    pub residual: f64,
    pub stderr: f64,
}

/// `lv(T, k) - 2 [d_T C + mu (C - k d_k C) + A] / d_kk C` with `A` taken from simulation.
pub fn implicit_residual<S: VarianceSurface + ?Sized>(
    lv: &LocalVolSurface,
    mc: &AEstimate,
    surface: &S,
    mu: f64,
    t: f64,
    k: f64,
) -> Result<ImplicitResidual> {
    let pt = surface.eval(t, k)?;
    let ratio = density_ratio(&pt);
    let d2c = pt.density() * ratio;
    if !(ratio > DENSITY_RATIO_FLOOR) {
        return Err(Error::DegenerateDenominator { maturity: t, strike: k, ratio });
    }
    let implied = 2.0 * (dt_price(&pt) + mu * c_minus_k_dkc(&pt) + mc.a) / d2c;
    let local_var = lv.eval(t, k);
    Ok(ImplicitResidual { local_var, implied, residual: local_var - implied, stderr: 2.0 * mc.a_stderr / d2c })
}

/// Grid resolution of a cached local variance surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvGridSpec {
    pub time_nodes: usize,
    pub space_nodes: usize,
    /// Half-width of each space row in ATM standard deviations `sqrt(w(t, 0))`.
    pub width_sd: f64,
}

impl Default for LvGridSpec {
    fn default() -> Self {
        Self { time_nodes: 121, space_nodes: 201, width_sd: 6.0 }
    }
}

/// Mean reversion used to build a cached surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanReversionSource {
    Constant(f64),
    Effective,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvMetadata {
    pub order: Option<Order>,
    pub mean_reversion: MeanReversionSource,
    pub floored: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone)]
struct Row {
    t: f64,
    x0: f64,
    dx: f64,
    values: Vec<f64>,
}

impl Row {
    fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        if n == 1 || self.dx == 0.0 {
            return self.values[0];
        }
        let s = (x - self.x0) / self.dx;
        if !(s > 0.0) {
            return self.values[0];
        }
        if s >= (n - 1) as f64 {
            return self.values[n - 1];
        }
        let i = s as usize;
        let f = s - i as f64;
        self.values[i] + f * (self.values[i + 1] - self.values[i])
    }

    fn x_nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |j| self.x0 + j as f64 * self.dx)
    }
}

/// Position inside the time grid, reusable across many space lookups at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSlot {
    lower: usize,
    weight: f64,
}

/// Dense `(t, x)` grid of local variances with bilinear lookup, held flat outside the grid.
#[derive(Debug, Clone)]
pub struct LocalVolSurface {
    rows: Vec<Row>,
    meta: LvMetadata,
}

impl LocalVolSurface {
    /// Tabulates a local variance of the given order up to `horizon`. Time nodes are
    /// `horizon (i + 1) / n`; row `i` spans `+-width_sd sqrt(w(t_i, 0))`.
    pub fn build<S, F>(surface: &S, mu: F, source: MeanReversionSource, horizon: f64, order: Order, spec: LvGridSpec) -> Result<Self>
    where
        S: VarianceSurface + ?Sized,
        F: Fn(f64) -> f64,
    {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain("horizon", horizon));
        }
        if spec.time_nodes == 0 || spec.space_nodes < 2 || !(spec.width_sd > 0.0) {
            return Err(Error::InvalidGrid("local vol grid needs time nodes and at least 2 space nodes"));
        }
        let mut rows = Vec::with_capacity(spec.time_nodes);
        let (mut floored, mut rejected) = (0, 0);
        for i in 0..spec.time_nodes {
            let t = horizon * (i + 1) as f64 / spec.time_nodes as f64;
            let half = spec.width_sd * sqrt(surface.w(t, 0.0)?);
            let dx = 2.0 * half / (spec.space_nodes - 1) as f64;
            let x0 = -half;
            let mu_t = mu(t);
            let mut values: Vec<Option<f64>> = Vec::with_capacity(spec.space_nodes);
            for j in 0..spec.space_nodes {
                let x = x0 + j as f64 * dx;
                let v = surface.eval(t, x).and_then(|pt| local_var(&pt, t, mu_t, order));
                match v {
                    Ok(lv) => {
                        floored += usize::from(lv.floored);
                        values.push(Some(lv.value));
                    }
                    Err(_) => {
                        rejected += 1;
                        values.push(None);
                    }
                }
            }
            rows.push(Row { t, x0, dx, values: fill_nearest(&values)? });
        }
        Ok(Self { rows, meta: LvMetadata { order: Some(order), mean_reversion: source, floored, rejected } })
    }

    /// Convenience wrapper for a constant mean reversion and the default grid.
    pub fn from_surface<S: VarianceSurface + ?Sized>(surface: &S, mu: f64, horizon: f64, order: Order) -> Result<Self> {
        Self::build(surface, |_| mu, MeanReversionSource::Constant(mu), horizon, order, LvGridSpec::default())
    }

    /// A local variance that depends on time only, piecewise linear through `(times, variances)`.
    pub fn deterministic(times: &[f64], variances: &[f64]) -> Result<Self> {
        if times.is_empty() || times.len() != variances.len() {
            return Err(Error::InvalidGrid("time and variance lists must be nonempty and equal in length"));
        }
        if times.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidGrid("times must be strictly increasing"));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidGrid("local variances must be positive"));
        }
        let rows = times
            .iter()
            .zip(variances)
            .map(|(&t, &v)| Row { t, x0: 0.0, dx: 0.0, values: alloc::vec![v] })
            .collect();
        Ok(Self { rows, meta: LvMetadata { order: None, mean_reversion: MeanReversionSource::None, floored: 0, rejected: 0 } })
    }

    pub fn constant(variance: f64) -> Result<Self> {
        Self::deterministic(&[0.0], &[variance])
    }

    /// Tabulates an arbitrary positive function on a given grid.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(times: &[f64], x_lo: f64, x_hi: f64, space_nodes: usize, f: F) -> Result<Self> {
        if space_nodes < 2 || !(x_hi > x_lo) {
            return Err(Error::InvalidGrid("space grid needs at least 2 nodes and x_hi > x_lo"));
        }
        let dx = (x_hi - x_lo) / (space_nodes - 1) as f64;
        let mut rows = Vec::with_capacity(times.len());
        for &t in times {
            let values: Vec<f64> = (0..space_nodes).map(|j| f(t, x_lo + j as f64 * dx)).collect();
            if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidGrid("local variances must be positive"));
            }
            rows.push(Row { t, x0: x_lo, dx, values });
        }
        if rows.is_empty() || rows.windows(2).any(|p| p[0].t >= p[1].t) {
            return Err(Error::InvalidGrid("times must be nonempty and strictly increasing"));
        }
        Ok(Self { rows, meta: LvMetadata { order: None, mean_reversion: MeanReversionSource::None, floored: 0, rejected: 0 } })
    }

    pub fn metadata(&self) -> &LvMetadata {
        &self.meta
    }

    pub fn time_slot(&self, t: f64) -> TimeSlot {
        let n = self.rows.len();
        if n == 1 || t <= self.rows[0].t {
            return TimeSlot { lower: 0, weight: 0.0 };
        }
        if t >= self.rows[n - 1].t {
            return TimeSlot { lower: n - 1, weight: 0.0 };
        }
        let upper = self.rows.partition_point(|r| r.t <= t);
        let lower = upper - 1;
        let (t0, t1) = (self.rows[lower].t, self.rows[upper].t);
        TimeSlot { lower, weight: (t - t0) / (t1 - t0) }
    }

    /// Local variance at a precomputed time position.
    #[inline]
    pub fn eval_at(&self, slot: TimeSlot, x: f64) -> f64 {
        let v0 = self.rows[slot.lower].eval(x);
        if slot.weight == 0.0 {
            return v0;
        }
        let v1 = self.rows[slot.lower + 1].eval(x);
        v0 + slot.weight * (v1 - v0)
    }

    /// Local variance `sigma^2(t, x)`.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        self.eval_at(self.time_slot(t), x)
    }

    /// All grid nodes as `(t, x, sigma^2)`.
    pub fn nodes(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for row in &self.rows {
            for (x, v) in row.x_nodes().zip(&row.values) {
                out.push((row.t, x, *v));
            }
        }
        out
    }
}

fn fill_nearest(values: &[Option<f64>]) -> Result<Vec<f64>> {
    if values.iter().all(Option::is_none) {
        return Err(Error::InvalidGrid("no valid local variance in a time slice"));
    }
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        if let Some(v) = values[j] {
            out.push(v);
            continue;
        }
        let mut d = 1;
        let v = loop {
            if j >= d {
                if let Some(v) = values[j - d] {
                    break v;
                }
            }
            if j + d < n {
                if let Some(v) = values[j + d] {
                    break v;
                }
            }
            d += 1;
        };
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{synthetic_flat, synthetic_linear, synthetic_smile};

    #[test]
    fn flat_smile_reduces_to_sigma0() {
        let s = synthetic_flat(0.01, 0.0).unwrap();
        assert!((local_var_main(&s, 0.0, 3.0, 0.01).unwrap().value - 1e-4).abs() < 1e-18);
        let s = synthetic_flat(0.01, 0.5).unwrap();
        for t in [0.5, 1.0, 5.0, 10.0, 20.0] {
            for i in -10..=10 {
                let k = 0.005 * f64::from(i);
                let v = local_var_main(&s, 0.5, t, k).unwrap();
                assert!(!v.floored);
                assert!((v.value - 1e-4).abs() < 1e-10 * 1e-4);
            }
        }
    }

    #[test]
    fn linear_smile_value() {
        // the formula evaluated in exact rational arithmetic (d_T w = w at T = 1)
        const EXPECTED: f64 = 4.686_125_801_526_718e-4;
        let s = synthetic_linear(4e-4, 2e-3, 1.0).unwrap();
        let v = local_var_main(&s, 0.03, 1.0, 0.01).unwrap().value;
        assert!(((v - EXPECTED) / EXPECTED).abs() < 1e-14, "{v}");
        let f = local_var_first_order(&s, 0.03, 1.0, 0.01).unwrap().value;
        assert!((v - f - 8e-9).abs() < 1e-18);
    }

    #[test]
    fn skewed_quadratic_first_order_value() {
        const EXPECTED: f64 = 1.151_991_387_995_502_7e-4;
        let s = synthetic_smile(0.01, 0.03, 0.2, 0.05).unwrap();
        let v = local_var_first_order(&s, 0.03, 5.0, 0.01).unwrap().value;
        assert!(((v - EXPECTED) / EXPECTED).abs() < 1e-13, "{v}");
    }

    #[test]
    fn order_difference_is_cube_of_slope() {
        let s = synthetic_smile(0.012, 0.1, -0.3, 0.02).unwrap();
        for &(t, k) in &[(1.0, 0.0), (4.0, 0.01), (10.0, -0.02)] {
            let pt = s.eval(t, k).unwrap();
            let main = local_var_main(&s, 0.1, t, k).unwrap().value;
            let first = local_var_first_order(&s, 0.1, t, k).unwrap().value;
            assert!((main - first - pt.dw_dk.powi(3)).abs() < 1e-14 * main.abs().max(1e-12));
        }
    }

    #[test]
    fn mu_enters_linearly_at_the_money() {
        let s = synthetic_smile(0.01, 0.0, 0.2, 0.01).unwrap();
        let pt = s.eval(5.0, 0.0).unwrap();
        let ratio = density_ratio(&pt);
        let v1 = local_var_main(&s, 0.1, 5.0, 0.0).unwrap().value;
        let v2 = local_var_main(&s, 0.3, 5.0, 0.0).unwrap().value;
        assert!(((v2 - v1) * ratio / 0.2 - 2.0 * pt.w).abs() < 1e-12 * pt.w);
    }

    #[test]
    fn multifactor_with_constant_mu_matches_main() {
        let s = synthetic_smile(0.01, 0.05, 0.2, 0.0).unwrap();
        let a = local_var_multifactor(&s, |_| 0.05, 7.0, 0.003).unwrap();
        let b = local_var_main(&s, 0.05, 7.0, 0.003).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn floor_and_rejection() {
        struct Fixed(SmilePoint);
        impl VarianceSurface for Fixed {
            fn eval(&self, _t: f64, _k: f64) -> Result<SmilePoint> {
                Ok(self.0)
            }
            fn provenance(&self) -> crate::surface::Provenance {
                crate::surface::Provenance::AnalyticSynthetic
            }
        }
        let w = 1e-4;
        let neg = Fixed(SmilePoint { k: 0.0, w, dw_dk: 0.0, d2w_dk2: 0.0, dw_dt: -1e-3 });
        let v = local_var_main(&neg, 0.0, 2.0, 0.0).unwrap();
        assert!(v.floored);
        assert!((v.value - 0.0025 * w / 2.0).abs() < 1e-20);
        let degenerate = Fixed(SmilePoint { k: 0.01, w, dw_dk: 0.0, d2w_dk2: -2.0, dw_dt: 1e-4 });
        assert!(matches!(local_var_main(&degenerate, 0.0, 1.0, 0.01), Err(Error::DegenerateDenominator { .. })));
    }

    #[test]
    fn expectation_term_approximations() {
        let flat = synthetic_flat(0.01, 0.2).unwrap();
        assert_eq!(a_first_order(&flat, 3.0, 0.01).unwrap(), 0.0);
        assert_eq!(a_third_order(&flat, 3.0, 0.01).unwrap(), 0.0);
        let (a, b) = (4e-4, 2e-3);
        let s = synthetic_linear(a, b, 1.0).unwrap();
        let expected = 0.5 * a * b / (2.0 * core::f64::consts::PI * a).sqrt();
        assert!((a_first_order(&s, 1.0, 0.0).unwrap() - expected).abs() < 1e-18);
        let p = s.eval(1.0, 0.0).unwrap().density();
        let diff = a_third_order(&s, 1.0, 0.0).unwrap() - a_first_order(&s, 1.0, 0.0).unwrap();
        assert!((diff - 0.5 * p * b * b * b).abs() < 1e-20);
    }

    #[test]
    fn cached_grid_reproduces_flat_and_is_flat_outside() {
        let s = synthetic_flat(0.01, 0.5).unwrap();
        let lv = LocalVolSurface::from_surface(&s, 0.5, 10.0, Order::Third).unwrap();
        for &(t, x) in &[(0.0, 0.0), (0.01, 0.3), (3.3, -0.01), (10.0, 0.02), (50.0, 1.0)] {
            assert!((lv.eval(t, x) - 1e-4).abs() < 1e-16);
        }
        assert_eq!(lv.metadata().floored, 0);
        assert_eq!(lv.metadata().rejected, 0);
        assert_eq!(lv.nodes().len(), 121 * 201);
    }

    #[test]
    fn cached_grid_matches_formula_at_nodes_and_between() {
        let s = synthetic_smile(0.01, 0.03, 0.2, 0.0).unwrap();
        let lv = LocalVolSurface::from_surface(&s, 0.03, 10.0, Order::Third).unwrap();
        for (t, x, v) in lv.nodes().into_iter().step_by(997) {
            if let Ok(exact) = local_var_main(&s, 0.03, t, x) {
                assert!((exact.value - v).abs() < 1e-15 * v.max(1.0));
            }
        }
        let (t, x) = (6.04, 0.0031);
        let exact = local_var_main(&s, 0.03, t, x).unwrap().value;
        assert!((lv.eval(t, x) - exact).abs() < 1e-3 * exact);
    }

    #[test]
    fn deterministic_surface_interpolates_in_time() {
        let lv = LocalVolSurface::deterministic(&[1.0, 2.0], &[1e-4, 3e-4]).unwrap();
        assert_eq!(lv.eval(0.5, 0.1), 1e-4);
        assert!((lv.eval(1.5, -0.1) - 2e-4).abs() < 1e-18);
        assert_eq!(lv.eval(9.0, 0.0), 3e-4);
        assert!(LocalVolSurface::deterministic(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn nearest_fill() {
        let v = fill_nearest(&[None, Some(1.0), None, None, Some(2.0), None]).unwrap();
        assert_eq!(v, [1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(fill_nearest(&[None, None]).is_err());
    }
}
