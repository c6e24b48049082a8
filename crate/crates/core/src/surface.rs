//! Total implied variance surfaces `w(T, k)` with analytic derivatives.

use alloc::vec::Vec;

use crate::bachelier::{density_ratio, SmilePoint};
use crate::error::{finite, Error, Result};
use crate::math::{exp, expm1, sqrt};
use crate::spline::{Jet, NaturalSpline};

/// Where a surface's values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    GridInterpolated,
    AnalyticSynthetic,
}

/// Anything that can produce `w` and its first derivatives at `(T, k)`.
pub trait VarianceSurface: Send + Sync {
    fn eval(&self, t: f64, k: f64) -> Result<SmilePoint>;

    fn provenance(&self) -> Provenance;

    fn w(&self, t: f64, k: f64) -> Result<f64> {
        Ok(self.eval(t, k)?.w)
    }
}

impl<S: VarianceSurface + ?Sized> VarianceSurface for &S {
    fn eval(&self, t: f64, k: f64) -> Result<SmilePoint> {
        (**self).eval(t, k)
    }

    fn provenance(&self) -> Provenance {
        (**self).provenance()
    }
}

impl<S: VarianceSurface + ?Sized> VarianceSurface for alloc::boxed::Box<S> {
    fn eval(&self, t: f64, k: f64) -> Result<SmilePoint> {
        (**self).eval(t, k)
    }

    fn provenance(&self) -> Provenance {
        (**self).provenance()
    }
}

fn check_maturity(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain("maturity", t));
    }
    Ok(())
}

/// Quoted Bachelier implied vols, one strike row per maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    maturities: Vec<f64>,
    strikes: Vec<Vec<f64>>,
    vols: Vec<Vec<f64>>,
}

impl SurfaceGrid {
    pub fn new(maturities: Vec<f64>, strikes: Vec<Vec<f64>>, vols: Vec<Vec<f64>>) -> Result<Self> {
        if maturities.is_empty() {
            return Err(Error::InsufficientData("surface grid has no maturities"));
        }
        if strikes.len() != maturities.len() || vols.len() != maturities.len() {
            return Err(Error::InvalidGrid("one strike and vol row is needed per maturity"));
        }
        if maturities.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidGrid("maturities must be positive"));
        }
        if maturities.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidGrid("maturities must be strictly increasing"));
        }
        for (ks, vs) in strikes.iter().zip(&vols) {
            if ks.len() != vs.len() {
                return Err(Error::InvalidGrid("strike and vol rows differ in length"));
            }
            if ks.len() < 3 {
                return Err(Error::InsufficientData("at least 3 strikes per maturity are required"));
            }
            if ks.iter().any(|k| !k.is_finite()) || ks.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::InvalidGrid("strikes must be finite and strictly increasing"));
            }
            if vs.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidGrid("implied vols must be positive"));
            }
        }
        Ok(Self { maturities, strikes, vols })
    }

    /// Groups `(T, k, sigma_imp)` rows by maturity. Rows may come in any order.
    pub fn from_rows(rows: &[(f64, f64, f64)]) -> Result<Self> {
        let mut sorted: Vec<(f64, f64, f64)> = rows.to_vec();
        if sorted.iter().any(|r| r.0.is_nan() || r.1.is_nan()) {
            return Err(Error::InvalidGrid("NaN maturity or strike"));
        }
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut maturities = Vec::new();
        let mut strikes: Vec<Vec<f64>> = Vec::new();
        let mut vols: Vec<Vec<f64>> = Vec::new();
        for (t, k, v) in sorted {
            if maturities.last() != Some(&t) {
                maturities.push(t);
                strikes.push(Vec::new());
                vols.push(Vec::new());
            }
            strikes.last_mut().unwrap().push(k);
            vols.last_mut().unwrap().push(v);
        }
        Self::new(maturities, strikes, vols)
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn strikes(&self) -> &[Vec<f64>] {
        &self.strikes
    }

    pub fn vols(&self) -> &[Vec<f64>] {
        &self.vols
    }

    /// All nodes as `(T, k, sigma_imp)` rows.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for (i, &t) in self.maturities.iter().enumerate() {
            for (k, v) in self.strikes[i].iter().zip(&self.vols[i]) {
                out.push((t, *k, *v));
            }
        }
        out
    }
}

/// Interpolated surface: natural cubic spline in `k` per slice, cubic Hermite in `T`.
///
/// The `T` interpolant runs through an implicit node `w(0, k) = 0` and uses parabolic (Bessel)
/// slopes, which are linear in the node values. The surface is therefore a fixed linear
/// combination of slice splines at every `T`, so its strike derivatives are exact. Beyond the
/// last maturity `w` is extended linearly with the end slope.
#[derive(Debug, Clone)]
pub struct GridSurface {
    // times[0] = 0 is the implicit origin node
    times: Vec<f64>,
    slices: Vec<NaturalSpline>,
}

/// `(node index, weight on w, weight on d_T w)` for up to four time nodes.
type TimeWeights = [(usize, f64, f64); 4];

impl GridSurface {
    pub fn build(grid: &SurfaceGrid) -> Result<Self> {
        let mut times = Vec::with_capacity(grid.maturities.len() + 1);
        times.push(0.0);
        times.extend_from_slice(&grid.maturities);
        let mut slices = Vec::with_capacity(grid.maturities.len());
        for (i, &t) in grid.maturities.iter().enumerate() {
            let w: Vec<f64> = grid.vols[i].iter().map(|v| t * v * v).collect();
            slices.push(NaturalSpline::new(&grid.strikes[i], &w)?);
        }
        let surface = Self { times, slices };
        surface.validate()?;
        Ok(surface)
    }

    /// A surface from one slice of total variances at `maturity`, scaled as `w(T) = T/T1 w1`.
    pub fn from_slice(maturity: f64, strikes: &[f64], w: &[f64]) -> Result<Self> {
        check_maturity(maturity)?;
        if w.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidGrid("total variances must be positive"));
        }
        let surface = Self { times: alloc::vec![0.0, maturity], slices: alloc::vec![NaturalSpline::new(strikes, w)?] };
        surface.validate()?;
        Ok(surface)
    }

    pub fn maturities(&self) -> &[f64] {
        &self.times[1..]
    }

    /// Spline of `w` for the `i`-th quoted maturity.
    pub fn slice(&self, i: usize) -> &NaturalSpline {
        &self.slices[i]
    }

    fn validate(&self) -> Result<()> {
        for s in &self.slices {
            let knots = s.knots();
            for pair in knots.windows(2) {
                if !(s.eval(0.5 * (pair[0] + pair[1])).value > 0.0) {
                    return Err(Error::InvalidGrid("slice spline is not positive between strikes"));
                }
            }
        }
        for i in 1..self.times.len() {
            let t = 0.5 * (self.times[i - 1] + self.times[i]);
            for s in &self.slices[i.saturating_sub(2)..(i + 1).min(self.slices.len())] {
                for &k in s.knots() {
                    if !(self.eval_unchecked(t, k).w > 0.0) {
                        return Err(Error::InvalidGrid("interpolated total variance is not positive"));
                    }
                }
            }
        }
        Ok(())
    }

    fn h(&self, j: usize) -> f64 {
        self.times[j + 1] - self.times[j]
    }

    /// Coefficients of the node slope `d_j` on node values, as `(index, coefficient)`.
    fn slope_coeffs(&self, j: usize) -> [(usize, f64); 3] {
        let n = self.times.len() - 1;
        if n == 1 {
            let h0 = self.h(0);
            return [(0, -1.0 / h0), (1, 1.0 / h0), (0, 0.0)];
        }
        if j == 0 {
            let (h0, h1) = (self.h(0), self.h(1));
            let s = h0 + h1;
            let c = (2.0 * h0 + h1) / (h0 * s);
            return [(0, -c), (1, c + h0 / (h1 * s)), (2, -h0 / (h1 * s))];
        }
        if j == n {
            let (hl, hp) = (self.h(n - 1), self.h(n - 2));
            let s = hl + hp;
            let c = (2.0 * hl + hp) / (hl * s);
            let e = hl / (hp * s);
            return [(n, c), (n - 1, -c - e), (n - 2, e)];
        }
        let (hp, hn) = (self.h(j - 1), self.h(j));
        let s = hp + hn;
        [(j - 1, -hn / (hp * s)), (j, hn / (hp * s) - hp / (hn * s)), (j + 1, hp / (hn * s))]
    }

    fn time_weights(&self, t: f64) -> TimeWeights {
        let mut out: TimeWeights = [(0, 0.0, 0.0); 4];
        let n = self.times.len() - 1;
        let base_of = |j: usize| j.saturating_sub(1);
        let add = |out: &mut TimeWeights, base: usize, idx: usize, c: f64, dc: f64| {
            let slot = &mut out[idx - base];
            slot.0 = idx;
            slot.1 += c;
            slot.2 += dc;
        };
        if t >= self.times[n] {
            let base = n.saturating_sub(2);
            let tau = t - self.times[n];
            add(&mut out, base, n, 1.0, 0.0);
            for (m, a) in self.slope_coeffs(n) {
                add(&mut out, base, m, a * tau, a);
            }
            return out;
        }
        let j = match self.times.iter().rposition(|&x| x <= t) {
            Some(j) => j.min(n - 1),
            None => 0,
        };
        let base = base_of(j);
        let h = self.h(j);
        let s = (t - self.times[j]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        add(&mut out, base, j, h00, d00);
        add(&mut out, base, j + 1, h01, d01);
        for (m, a) in self.slope_coeffs(j) {
            add(&mut out, base, m, h * h10 * a, d10 * a);
        }
        for (m, a) in self.slope_coeffs(j + 1) {
            add(&mut out, base, m, h * h11 * a, d11 * a);
        }
        out
    }

    fn eval_unchecked(&self, t: f64, k: f64) -> SmilePoint {
        let mut pt = SmilePoint { k, w: 0.0, dw_dk: 0.0, d2w_dk2: 0.0, dw_dt: 0.0 };
        for (idx, c, dc) in self.time_weights(t) {
            // node 0 is the origin, where w vanishes identically
            if idx == 0 || (c == 0.0 && dc == 0.0) {
                continue;
            }
            let Jet { value, d1, d2 } = self.slices[idx - 1].eval(k);
            pt.w += c * value;
            pt.dw_dk += c * d1;
            pt.d2w_dk2 += c * d2;
            pt.dw_dt += dc * value;
        }
        pt
    }
}

impl VarianceSurface for GridSurface {
    fn eval(&self, t: f64, k: f64) -> Result<SmilePoint> {
        check_maturity(t)?;
        finite("k", k)?;
        let pt = self.eval_unchecked(t, k);
        if !(pt.w > 0.0) {
            return Err(Error::domain("w", pt.w));
        }
        Ok(pt)
    }

    fn provenance(&self) -> Provenance {
        Provenance::GridInterpolated
    }
}

/// Closed-form surfaces used as test inputs and in examples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticSurface {
    /// Gaussian model with short-rate vol `sigma0` and mean reversion `mu`; no smile.
    Flat { sigma0: f64, mu: f64 },
    /// `w = a + b k` at `maturity`, scaled proportionally in `T` (constant local shape).
    Linear { a: f64, b: f64, maturity: f64 },
    /// `w = A + skew sqrt(A) k + curvature k^2` with `A(T)` the flat-model ATM variance.
    Smile { sigma0: f64, mu: f64, skew: f64, curvature: f64 },
}

/// `int_0^T sigma0^2 e^{-2 mu (T - s)} ds` and its `T` derivative.
pub fn gaussian_atm_variance(sigma0: f64, mu: f64, t: f64) -> (f64, f64) {
    let s2 = sigma0 * sigma0;
    let x = 2.0 * mu * t;
    let w = if x.abs() < 1e-300 { s2 * t } else { s2 * t * (-expm1(-x) / x) };
    (w, s2 * exp(-x))
}

pub fn synthetic_flat(sigma0: f64, mu: f64) -> Result<SyntheticSurface> {
    if !(sigma0 > 0.0) || !sigma0.is_finite() {
        return Err(Error::domain("sigma0", sigma0));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::domain("mu", mu));
    }
    Ok(SyntheticSurface::Flat { sigma0, mu })
}

pub fn synthetic_linear(a: f64, b: f64, maturity: f64) -> Result<SyntheticSurface> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain("a", a));
    }
    finite("b", b)?;
    check_maturity(maturity)?;
    Ok(SyntheticSurface::Linear { a, b, maturity })
}

pub fn synthetic_smile(sigma0: f64, mu: f64, skew: f64, curvature: f64) -> Result<SyntheticSurface> {
    synthetic_flat(sigma0, mu)?;
    finite("skew", skew)?;
    if !(curvature >= 0.0) || !curvature.is_finite() {
        return Err(Error::domain("curvature", curvature));
    }
    Ok(SyntheticSurface::Smile { sigma0, mu, skew, curvature })
}

impl VarianceSurface for SyntheticSurface {
    fn eval(&self, t: f64, k: f64) -> Result<SmilePoint> {
        check_maturity(t)?;
        finite("k", k)?;
        let pt = match *self {
            SyntheticSurface::Flat { sigma0, mu } => {
                let (w, dw_dt) = gaussian_atm_variance(sigma0, mu, t);
                SmilePoint::flat(k, w, dw_dt)
            }
            SyntheticSurface::Linear { a, b, maturity } => {
                let scale = t / maturity;
                let w1 = a + b * k;
                SmilePoint { k, w: scale * w1, dw_dk: scale * b, d2w_dk2: 0.0, dw_dt: w1 / maturity }
            }
            SyntheticSurface::Smile { sigma0, mu, skew, curvature } => {
                let (a, da) = gaussian_atm_variance(sigma0, mu, t);
                let sa = sqrt(a);
                SmilePoint {
                    k,
                    w: a + skew * sa * k + curvature * k * k,
                    dw_dk: skew * sa + 2.0 * curvature * k,
                    d2w_dk2: 2.0 * curvature,
                    dw_dt: da + 0.5 * skew * k * da / sa,
                }
            }
        };
        if !(pt.w > 0.0) {
            return Err(Error::domain("w", pt.w));
        }
        Ok(pt)
    }

    fn provenance(&self) -> Provenance {
        Provenance::AnalyticSynthetic
    }
}

/// Pass/fail diagnostics of one surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArbitrageReport {
    pub w: f64,
    pub density_ratio: f64,
    /// `d_T w + mu (2w - k d_k w) + w d_k w`
    pub numerator: f64,
    pub w_positive: bool,
    pub butterfly: bool,
    pub calendar: bool,
}

impl ArbitrageReport {
    pub fn passed(&self) -> bool {
        self.w_positive && self.butterfly && self.calendar
    }
}

/// Numerator of the one-factor local variance formula.
pub(crate) fn lv_numerator(pt: &SmilePoint, mu: f64) -> f64 {
    pt.dw_dt + mu * (2.0 * pt.w - pt.k * pt.dw_dk) + pt.w * pt.dw_dk
}

/// Checks `w > 0`, the butterfly condition and the sign of the local variance numerator at
/// mean reversion `mu`. Evaluation errors count as a failed `w` check.
pub fn check_arbitrage<S: VarianceSurface + ?Sized>(surface: &S, t: f64, k: f64, mu: f64) -> ArbitrageReport {
    match surface.eval(t, k) {
        Ok(pt) => {
            let ratio = density_ratio(&pt);
            let numerator = lv_numerator(&pt, mu);
            ArbitrageReport {
                w: pt.w,
                density_ratio: ratio,
                numerator,
                w_positive: pt.w > 0.0,
                butterfly: ratio > 0.0,
                calendar: numerator > 0.0,
            }
        }
        Err(_) => ArbitrageReport {
            w: f64::NAN,
            density_ratio: f64::NAN,
            numerator: f64::NAN,
            w_positive: false,
            butterfly: false,
            calendar: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample_grid() -> SurfaceGrid {
        let maturities = vec![0.5, 1.0, 2.0, 5.0, 10.0];
        let mut strikes = Vec::new();
        let mut vols = Vec::new();
        for &t in &maturities {
            let ks: Vec<f64> = (-4..=4).map(|i| f64::from(i) * 0.005 * sqrt(t)).collect();
            let vs: Vec<f64> = ks.iter().map(|k| 0.01 * (1.0 + 8.0 * k + 300.0 * k * k) / (1.0 + 0.02 * t)).collect();
            strikes.push(ks);
            vols.push(vs);
        }
        SurfaceGrid::new(maturities, strikes, vols).unwrap()
    }

    #[test]
    fn flat_single_slice() {
        let g = SurfaceGrid::new(vec![1.0], vec![vec![-0.01, 0.0, 0.01]], vec![vec![0.01; 3]]).unwrap();
        let s = GridSurface::build(&g).unwrap();
        for k in [-0.05, -0.003, 0.0, 0.007, 0.2] {
            let pt = s.eval(1.0, k).unwrap();
            assert!((pt.w - 1e-4).abs() < 1e-18);
            assert_eq!(pt.dw_dk, 0.0);
            assert_eq!(pt.d2w_dk2, 0.0);
            assert!((pt.dw_dt - 1e-4).abs() < 1e-18);
            assert!((s.eval(3.0, k).unwrap().w - 3e-4).abs() < 1e-18);
        }
        assert_eq!(s.provenance(), Provenance::GridInterpolated);
    }

    #[test]
    fn node_reproduction() {
        let g = sample_grid();
        let s = GridSurface::build(&g).unwrap();
        for (t, k, v) in g.rows() {
            let w = s.eval(t, k).unwrap().w;
            assert!(((w - t * v * v) / w).abs() < 1e-14, "{t} {k}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let s = GridSurface::build(&sample_grid()).unwrap();
        for &(t, k) in &[(0.7, 0.001), (1.5, -0.004), (3.0, 0.0025), (7.0, -0.011), (12.0, 0.002), (0.2, 0.0003)] {
            let pt = s.eval(t, k).unwrap();
            let hk = 1e-5;
            let w = |t: f64, k: f64| s.eval(t, k).unwrap();
            let d1 = (w(t, k + hk).w - w(t, k - hk).w) / (2.0 * hk);
            let d2 = (w(t, k + hk).dw_dk - w(t, k - hk).dw_dk) / (2.0 * hk);
            let ht = 1e-5 * t;
            let dt = (w(t + ht, k).w - w(t - ht, k).w) / (2.0 * ht);
            assert!((d1 - pt.dw_dk).abs() <= 1e-7 * pt.dw_dk.abs().max(1e-3), "{t} {k} {d1} {}", pt.dw_dk);
            assert!((d2 - pt.d2w_dk2).abs() <= 1e-7 * pt.d2w_dk2.abs().max(1e-1), "{t} {k} {d2} {}", pt.d2w_dk2);
            assert!((dt - pt.dw_dt).abs() <= 1e-7 * pt.dw_dt.abs(), "{t} {k} {dt} {}", pt.dw_dt);
        }
    }

    #[test]
    fn time_interpolant_is_c1_at_nodes() {
        let s = GridSurface::build(&sample_grid()).unwrap();
        for t in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let a = s.eval(t * (1.0 - 1e-12), 0.001).unwrap().dw_dt;
            let b = s.eval(t * (1.0 + 1e-12), 0.001).unwrap().dw_dt;
            assert!((a - b).abs() < 1e-8 * a.abs(), "{t} {a} {b}");
        }
    }

    #[test]
    fn linear_in_time_data_is_reproduced() {
        // w = sigma^2 T on every slice: the Hermite scheme reproduces it exactly.
        let maturities = vec![1.0, 2.0, 5.0];
        let strikes = vec![vec![-0.01, 0.0, 0.01]; 3];
        let vols = vec![vec![0.01; 3]; 3];
        let s = GridSurface::build(&SurfaceGrid::new(maturities, strikes, vols).unwrap()).unwrap();
        for t in [0.1, 0.9, 1.3, 3.7, 8.0] {
            let pt = s.eval(t, 0.002).unwrap();
            assert!((pt.w - 1e-4 * t).abs() < 1e-17);
            assert!((pt.dw_dt - 1e-4).abs() < 1e-16, "{t} {}", pt.dw_dt);
        }
    }

    #[test]
    fn flat_extrapolation_in_strike() {
        let s = GridSurface::build(&sample_grid()).unwrap();
        let edge = s.eval(1.0, 0.02).unwrap();
        let out = s.eval(1.0, 0.5).unwrap();
        assert_eq!(edge.w, out.w);
        assert_eq!(out.dw_dk, 0.0);
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(
            SurfaceGrid::new(vec![1.0], vec![vec![0.0, 0.01]], vec![vec![0.01; 2]]),
            Err(Error::InsufficientData(_))
        ));
        assert!(SurfaceGrid::new(vec![1.0, 1.0], vec![vec![0.0, 0.01, 0.02]; 2], vec![vec![0.01; 3]; 2]).is_err());
        assert!(SurfaceGrid::new(vec![1.0], vec![vec![0.0, 0.01, 0.02]], vec![vec![0.01, -0.01, 0.01]]).is_err());
        let s = GridSurface::build(&sample_grid()).unwrap();
        assert!(s.eval(0.0, 0.0).is_err());
        assert!(s.eval(-1.0, 0.0).is_err());
    }

    #[test]
    fn from_rows_groups_by_maturity() {
        let rows = [(2.0, 0.01, 0.01), (1.0, 0.0, 0.01), (2.0, -0.01, 0.01), (1.0, -0.01, 0.01), (2.0, 0.0, 0.01), (1.0, 0.01, 0.01)];
        let g = SurfaceGrid::from_rows(&rows).unwrap();
        assert_eq!(g.maturities(), &[1.0, 2.0]);
        assert_eq!(g.strikes()[1], vec![-0.01, 0.0, 0.01]);
    }

    #[test]
    fn synthetic_flat_values() {
        let s = synthetic_flat(0.01, 0.0).unwrap();
        assert!((s.w(3.0, 0.02).unwrap() - 3e-4).abs() < 1e-18);
        let s = synthetic_flat(0.01, 0.5).unwrap();
        let pt = s.eval(10.0, -0.01).unwrap();
        let expected = 1e-4 * (1.0 - (-10.0f64).exp());
        assert!((pt.w - expected).abs() < 1e-19);
        assert!((pt.w - 9.99955e-5).abs() < 1e-10);
        for t in [0.1, 1.0, 5.0, 20.0] {
            let pt = s.eval(t, 0.0).unwrap();
            assert!((pt.dw_dt + 2.0 * 0.5 * pt.w - 1e-4).abs() < 1e-18);
        }
        assert!(synthetic_flat(0.0, 0.1).is_err());
        assert!(synthetic_flat(0.01, -0.1).is_err());
    }

    #[test]
    fn synthetic_linear_values() {
        let s = synthetic_linear(4e-4, 2e-3, 1.0).unwrap();
        let pt = s.eval(1.0, 0.01).unwrap();
        assert!((pt.w - 4.2e-4).abs() < 1e-18);
        assert_eq!(pt.dw_dk, 2e-3);
        assert_eq!(pt.d2w_dk2, 0.0);
        assert!(s.eval(1.0, -0.3).is_err());
        assert_eq!(s.provenance(), Provenance::AnalyticSynthetic);
    }

    #[test]
    fn synthetic_smile_derivatives() {
        let s = synthetic_smile(0.01, 0.03, 0.2, 0.05).unwrap();
        for &(t, k) in &[(1.0, 0.004), (10.0, -0.02), (5.0, 0.0)] {
            let pt = s.eval(t, k).unwrap();
            let h = 1e-6;
            let dt = (s.w(t + h, k).unwrap() - s.w(t - h, k).unwrap()) / (2.0 * h);
            let dk = (s.w(t, k + h).unwrap() - s.w(t, k - h).unwrap()) / (2.0 * h);
            assert!((dt - pt.dw_dt).abs() < 1e-7 * pt.dw_dt.abs());
            assert!((dk - pt.dw_dk).abs() < 1e-7 * pt.dw_dk.abs());
        }
    }

    #[test]
    fn arbitrage_diagnostics() {
        let flat = synthetic_flat(0.01, 0.03).unwrap();
        assert!(check_arbitrage(&flat, 5.0, 0.01, 0.03).passed());

        // w_kk = -4w/k^2 at k drives the density ratio negative
        struct Crafted(SmilePoint);
        impl VarianceSurface for Crafted {
            fn eval(&self, _t: f64, _k: f64) -> Result<SmilePoint> {
                Ok(self.0)
            }
            fn provenance(&self) -> Provenance {
                Provenance::AnalyticSynthetic
            }
        }
        let (k, w) = (0.01, 1e-4);
        let bad = Crafted(SmilePoint { k, w, dw_dk: 0.0, d2w_dk2: -4.0 * w / (k * k), dw_dt: 1e-4 });
        let r = check_arbitrage(&bad, 1.0, k, 0.0);
        assert!(r.w_positive && !r.butterfly && r.calendar);
        let falling = Crafted(SmilePoint { k, w, dw_dk: 0.0, d2w_dk2: 0.0, dw_dt: -5e-4 });
        let r = check_arbitrage(&falling, 1.0, k, 0.03);
        assert!(r.butterfly && !r.calendar && !r.passed());
    }
}
