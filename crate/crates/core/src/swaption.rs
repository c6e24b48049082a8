//! Swap-market instruments reconstructed from the one-factor state, swaption pricing from the
//! short-rate implied variance, and calibration of that variance to a swaption smile.

use alloc::vec::Vec;

use crate::bachelier::{
    bh_price_from_variance, density_ratio, digital_price, implied_density, implied_total_variance, SmilePoint,
};
use crate::error::{finite, Error, Result};
use crate::math::{decay_integral, exp, sqrt};
use crate::mc::{Estimate, PathEnsemble1F};
use crate::quad::{integrate, Tolerance};
use crate::spline::NaturalSpline;
use crate::surface::{GridSurface, VarianceSurface};

/// Zero-coupon discount factors seen from today.
pub trait DiscountCurve: Send + Sync {
    fn discount(&self, t: f64) -> f64;
}

/// `P0(T) = e^{-r T}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatCurve {
    pub rate: f64,
}

impl FlatCurve {
    pub fn new(rate: f64) -> Result<Self> {
        Ok(Self { rate: finite("rate", rate)? })
    }
}

impl DiscountCurve for FlatCurve {
    fn discount(&self, t: f64) -> f64 {
        exp(-self.rate * t)
    }
}

/// A payer swap fixing at `fixing` with payments at `payments[i]` accruing `accruals[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapInstrument {
    pub fixing: f64,
    pub payments: Vec<f64>,
    pub accruals: Vec<f64>,
}

impl SwapInstrument {
    pub fn new(fixing: f64, payments: Vec<f64>, accruals: Vec<f64>) -> Result<Self> {
        if !(fixing > 0.0) || !fixing.is_finite() {
            return Err(Error::domain("fixing", fixing));
        }
        if payments.is_empty() || payments.len() != accruals.len() {
            return Err(Error::InvalidGrid("swap needs one accrual per payment"));
        }
        let mut prev = fixing;
        for &t in &payments {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::InvalidGrid("payment times must increase after the fixing"));
            }
            prev = t;
        }
        if accruals.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidGrid("accruals must be positive"));
        }
        Ok(Self { fixing, payments, accruals })
    }

    /// Regular schedule with `periods` payments every `period` years after `fixing`.
    pub fn regular(fixing: f64, period: f64, periods: usize) -> Result<Self> {
        let payments = (1..=periods).map(|i| fixing + period * i as f64).collect();
        Self::new(fixing, payments, alloc::vec![period; periods])
    }

    pub fn end(&self) -> f64 {
        *self.payments.last().unwrap()
    }

    /// `A0 = sum accrual_i P0(T_i)`.
    pub fn annuity0<C: DiscountCurve + ?Sized>(&self, curve: &C) -> f64 {
        self.payments.iter().zip(&self.accruals).map(|(t, a)| a * curve.discount(*t)).sum()
    }

    /// Forward swap rate `(P0(T0) - P0(Tn)) / A0`.
    pub fn forward_rate<C: DiscountCurve + ?Sized>(&self, curve: &C) -> f64 {
        (curve.discount(self.fixing) - curve.discount(self.end())) / self.annuity0(curve)
    }
}

/// `P_t(T) = P0(T)/P0(t) exp(-G x - G^2 y / 2)` with `G = (1 - e^{-mu (T - t)}) / mu`.
pub fn bond_from_state<C: DiscountCurve + ?Sized>(curve: &C, mu: f64, t: f64, maturity: f64, x: f64, y: f64) -> f64 {
    let g = decay_integral(mu, maturity - t);
    curve.discount(maturity) / curve.discount(t) * exp(-g * x - 0.5 * g * g * y)
}

/// Two-factor bond `P0(T)/P0(t) exp(-G.x - G^T y G / 2)` with `y = [y11, y12, y22]`.
pub fn bond_from_state_2f<C: DiscountCurve + ?Sized>(
    curve: &C,
    mu: [f64; 2],
    t: f64,
    maturity: f64,
    x: [f64; 2],
    y: [f64; 3],
) -> f64 {
    let g1 = decay_integral(mu[0], maturity - t);
    let g2 = decay_integral(mu[1], maturity - t);
    let quad = g1 * g1 * y[0] + 2.0 * g1 * g2 * y[1] + g2 * g2 * y[2];
    curve.discount(maturity) / curve.discount(t) * exp(-g1 * x[0] - g2 * x[1] - 0.5 * quad)
}

/// `y_T ~ w(T, x) + (d_k w(T, x))^2 / 2`.
pub fn y_from_w<S: VarianceSurface + ?Sized>(surface: &S, t: f64, x: f64) -> Result<f64> {
    let pt = surface.eval(t, x)?;
    Ok(pt.w + 0.5 * pt.dw_dk * pt.dw_dk)
}

/// Annuity, swap rate and their `x` derivatives at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapState {
    pub x: f64,
    pub y: f64,
    pub annuity: f64,
    pub rate: f64,
    pub d_annuity: f64,
    pub d_rate: f64,
}

/// `A(x)`, `S(x)` and derivatives at the fixing, with `y` supplied by `y_from_w`.
pub struct SwapFunctions<'a, C: ?Sized, S: ?Sized> {
    curve: &'a C,
    swap: &'a SwapInstrument,
    surface: &'a S,
    mu: f64,
    // per payment: (accrual, P0(Ti)/P0(T0), G(T0, Ti))
    legs: Vec<(f64, f64, f64)>,
}

impl<'a, C: DiscountCurve + ?Sized, S: VarianceSurface + ?Sized> SwapFunctions<'a, C, S> {
    pub fn new(curve: &'a C, swap: &'a SwapInstrument, surface: &'a S, mu: f64) -> Self {
        let p0 = curve.discount(swap.fixing);
        let legs = swap
            .payments
            .iter()
            .zip(&swap.accruals)
            .map(|(&t, &a)| (a, curve.discount(t) / p0, decay_integral(mu, t - swap.fixing)))
            .collect();
        Self { curve, swap, surface, mu, legs }
    }

    pub fn swap(&self) -> &SwapInstrument {
        self.swap
    }

    pub fn curve(&self) -> &C {
        self.curve
    }

    pub fn surface(&self) -> &S {
        self.surface
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Evaluates the swap at state `x` with an explicit `y` and `dy/dx`.
    pub fn at_state(&self, x: f64, y: f64, dy: f64) -> Result<SwapState> {
        let (mut a, mut da) = (0.0, 0.0);
        let (mut last, mut dlast) = (0.0, 0.0);
        for &(acc, ratio, g) in &self.legs {
            let p = ratio * exp(-g * x - 0.5 * g * g * y);
            let dp = p * (-g - 0.5 * g * g * dy);
            a += acc * p;
            da += acc * dp;
            last = p;
            dlast = dp;
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::DegenerateAnnuity { x, annuity: a });
        }
        let rate = (1.0 - last) / a;
        let d_rate = -(rate * da + dlast) / a;
        Ok(SwapState { x, y, annuity: a, rate, d_annuity: da, d_rate })
    }

    /// Evaluates the swap at `x`, including the `x` dependence of `y`.
    pub fn at(&self, x: f64) -> Result<SwapState> {
        let pt = self.surface.eval(self.swap.fixing, x)?;
        let y = pt.w + 0.5 * pt.dw_dk * pt.dw_dk;
        let dy = pt.dw_dk + pt.dw_dk * pt.d2w_dk2;
        self.at_state(x, y, dy)
    }

    /// Solves `S(x) = k` by bisection on `[lo, hi]`.
    pub fn invert_rate(&self, k: f64, lo: f64, hi: f64) -> Result<f64> {
        let (mut lo, mut hi) = (lo, hi);
        let (s_lo, s_hi) = (self.at(lo)?.rate, self.at(hi)?.rate);
        if !(s_lo <= k && k <= s_hi) {
            return Err(Error::Inversion { target: k });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if self.at(mid)?.rate < k {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Integration window in `x`: `+-half_width_sd` ATM standard deviations, shrunk to where the
/// surface evaluates.
fn x_window<S: VarianceSurface + ?Sized>(surface: &S, t: f64, half_width_sd: f64) -> Result<(f64, f64)> {
    let sd = sqrt(surface.w(t, 0.0)?);
    let (mut lo, mut hi) = (-half_width_sd * sd, half_width_sd * sd);
    // bisect towards the valid region where w stays positive
    for bound in [&mut lo, &mut hi] {
        if surface.eval(t, *bound).is_err() {
            let (mut good, mut bad) = (0.0, *bound);
            for _ in 0..100 {
                let mid = 0.5 * (good + bad);
                if surface.eval(t, mid).is_ok() {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            *bound = good;
        }
    }
    Ok((lo, hi))
}

const PRICE_WINDOW_SD: f64 = 10.0;
const MASS_TOLERANCE: f64 = 1e-6;
// atoms from flat strike extrapolation that the pricing integrals may drop
const ATOM_TOLERANCE: f64 = 1e-4;

fn quad_tol() -> Tolerance {
    Tolerance { abs: 1e-20, rel: 1e-13, max_intervals: 4000 }
}

/// The probability of the window comes from digital prices, so it counts the small atoms that
/// flat extrapolation puts at the ends of a strike range. The continuous density must account
/// for all but `ATOM_TOLERANCE` of it.
fn check_window<S: VarianceSurface + ?Sized>(surface: &S, t: f64, lo: f64, hi: f64) -> Result<()> {
    let window = digital_price(&surface.eval(t, lo)?) - digital_price(&surface.eval(t, hi)?);
    if (window - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::RangeTooSmall { mass: window });
    }
    let mass = integrate(|x| density_at(surface, t, x), lo, hi, quad_tol()).value;
    if (mass - window).abs() > ATOM_TOLERANCE {
        return Err(Error::RangeTooSmall { mass });
    }
    Ok(())
}

fn density_at<S: VarianceSurface + ?Sized>(surface: &S, t: f64, x: f64) -> f64 {
    surface.eval(t, x).map(|pt| implied_density(&pt)).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwaptionKind {
    /// `(S - k)+`
    Payer,
    /// `(k - S)+`
    Receiver,
}

/// `E^A[(S_T - k)+] = int A(x) (S(x) - k)+ p_x(x) dx / int A(x) p_x(x) dx`.
///
/// With exact bond dynamics the normalization equals `A0 / P0(T0)`. Under the approximate `y`
/// map the two differ slightly, and normalizing by the model annuity keeps the annuity measure a
/// probability measure, so payer and receiver prices obey parity around `model_forward_rate`.
pub fn price_swaption_from_w<C, S>(curve: &C, swap: &SwapInstrument, surface: &S, mu: f64, k: f64) -> Result<f64>
where
    C: DiscountCurve + ?Sized,
    S: VarianceSurface + ?Sized,
{
    price_swaption_kind_from_w(curve, swap, surface, mu, k, SwaptionKind::Payer)
}

/// Payer or receiver annuity-measure price from the short-rate variance slice at the fixing.
pub fn price_swaption_kind_from_w<C, S>(
    curve: &C,
    swap: &SwapInstrument,
    surface: &S,
    mu: f64,
    k: f64,
    kind: SwaptionKind,
) -> Result<f64>
where
    C: DiscountCurve + ?Sized,
    S: VarianceSurface + ?Sized,
{
    finite("strike", k)?;
    let fx = SwapFunctions::new(curve, swap, surface, mu);
    let t0 = swap.fixing;
    let (lo, hi) = x_window(surface, t0, PRICE_WINDOW_SD)?;
    check_window(surface, t0, lo, hi)?;
    let (s_lo, s_hi) = (fx.at(lo)?.rate, fx.at(hi)?.rate);
    let kink = if k <= s_lo {
        lo
    } else if k >= s_hi {
        hi
    } else {
        fx.invert_rate(k, lo, hi)?
    };
    let (a, b, sign) = match kind {
        SwaptionKind::Payer => (kink, hi, 1.0),
        SwaptionKind::Receiver => (lo, kink, -1.0),
    };
    if a >= b {
        return Ok(0.0);
    }
    let scale = 1.0 / model_annuity(&fx, lo, hi);
    let integral = integrate(
        |x| match fx.at(x) {
            Ok(st) => st.annuity * (sign * (st.rate - k)).max(0.0) * density_at(surface, t0, x),
            Err(_) => 0.0,
        },
        a,
        b,
        quad_tol(),
    );
    Ok(scale * integral.value)
}

/// Swaption implied total variance `z(k)` against the Bachelier forward `fwd`, priced on the
/// out-of-the-money side.
///
/// Market smiles are quoted against the curve forward. The model mean `E^A[S_T]` differs from
/// it by the error of the `y` approximation, so a smile generated from the model should be
/// inverted against `model_forward_rate`; otherwise `z` picks up a kink at the forward.
pub fn implied_swaption_variance<C, S>(
    curve: &C,
    swap: &SwapInstrument,
    surface: &S,
    mu: f64,
    fwd: f64,
    k: f64,
) -> Result<f64>
where
    C: DiscountCurve + ?Sized,
    S: VarianceSurface + ?Sized,
{
    // a Bachelier put at shifted strike k - fwd is the call at fwd - k
    if k >= fwd {
        implied_total_variance(price_swaption_kind_from_w(curve, swap, surface, mu, k, SwaptionKind::Payer)?, k - fwd)
    } else {
        implied_total_variance(price_swaption_kind_from_w(curve, swap, surface, mu, k, SwaptionKind::Receiver)?, fwd - k)
    }
}

/// `E^T[A_T]` over `[lo, hi]`.
fn model_annuity<C, S>(fx: &SwapFunctions<'_, C, S>, lo: f64, hi: f64) -> f64
where
    C: DiscountCurve + ?Sized,
    S: VarianceSurface + ?Sized,
{
    let t0 = fx.swap.fixing;
    integrate(|x| fx.at(x).map(|st| st.annuity * density_at(fx.surface, t0, x)).unwrap_or(0.0), lo, hi, quad_tol())
        .value
}

/// `P0(T0) E^T[A_T] / A0` and `P0(T0) E^T[A_T S_T] / A0`; one and the curve forward when the
/// bonds rebuilt from `(x, y(x))` are martingales.
pub fn curve_consistency<C, S>(curve: &C, swap: &SwapInstrument, surface: &S, mu: f64) -> Result<(f64, f64)>
where
    C: DiscountCurve + ?Sized,
    S: VarianceSurface + ?Sized,
{
    let fx = SwapFunctions::new(curve, swap, surface, mu);
    let t0 = swap.fixing;
    let (lo, hi) = x_window(surface, t0, PRICE_WINDOW_SD)?;
    let scale = curve.discount(t0) / swap.annuity0(curve);
    let v = integrate(
        |x| fx.at(x).map(|st| st.annuity * st.rate * density_at(surface, t0, x)).unwrap_or(0.0),
        lo,
        hi,
        quad_tol(),
    );
    Ok((scale * model_annuity(&fx, lo, hi), scale * v.value))
}

/// `E^A[S_T]` under the normalized annuity measure of `price_swaption_from_w`.
pub fn model_forward_rate<C, S>(curve: &C, swap: &SwapInstrument, surface: &S, mu: f64) -> Result<f64>
where
    C: DiscountCurve + ?Sized,
    S: VarianceSurface + ?Sized,
{
    let (mass, forward) = curve_consistency(curve, swap, surface, mu)?;
    Ok(forward / mass)
}

/// Swaption implied total variances `z(k)` on absolute strikes, splined in `k`.
#[derive(Debug, Clone)]
pub struct SwaptionSmile {
    maturity: f64,
    forward: f64,
    spline: NaturalSpline,
}

impl SwaptionSmile {
    pub fn from_variances(maturity: f64, forward: f64, strikes: &[f64], z: &[f64]) -> Result<Self> {
        if !(maturity > 0.0) {
            return Err(Error::domain("maturity", maturity));
        }
        finite("forward", forward)?;
        if z.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidGrid("swaption variances must be positive"));
        }
        Ok(Self { maturity, forward, spline: NaturalSpline::new(strikes, z)? })
    }

    /// From Bachelier swaption vols: `z = T vol^2`.
    pub fn from_vols(maturity: f64, forward: f64, strikes: &[f64], vols: &[f64]) -> Result<Self> {
        let z: Vec<f64> = vols.iter().map(|v| maturity * v * v).collect();
        Self::from_variances(maturity, forward, strikes, &z)
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn forward(&self) -> f64 {
        self.forward
    }

    pub fn strikes(&self) -> &[f64] {
        self.spline.knots()
    }

    pub fn variances(&self) -> &[f64] {
        self.spline.values()
    }

    pub fn vols(&self) -> Vec<f64> {
        self.variances().iter().map(|z| sqrt(z / self.maturity)).collect()
    }

    /// `z` and its strike derivatives at absolute strike `k`, as a point in shifted strike.
    pub fn point(&self, k: f64) -> SmilePoint {
        let j = self.spline.eval(k);
        SmilePoint { k: k - self.forward, w: j.value, dw_dk: j.d1, d2w_dk2: j.d2, dw_dt: 0.0 }
    }

    /// Undiscounted annuity-measure swaption price at `k`.
    pub fn price(&self, k: f64) -> Result<f64> {
        let pt = self.point(k);
        bh_price_from_variance(pt.k, pt.w)
    }

    /// Density of `S_T` under the annuity measure, `d_kk` of the Bachelier price.
    pub fn density(&self, k: f64) -> f64 {
        implied_density(&self.point(k))
    }
}

/// Both sides of the swaption / short-rate density identity at one strike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityResidual {
    pub strike: f64,
    pub x: f64,
    /// Swaption density from `z`.
    pub swaption_density: f64,
    /// `A(x_k) p_x(x_k) / (S'(x_k) E^T[A_T])` from `w`.
    pub model_density: f64,
    pub residual: f64,
    pub relative: f64,
}

pub fn swaption_density_residual<C, S>(
    curve: &C,
    swap: &SwapInstrument,
    surface: &S,
    mu: f64,
    smile: &SwaptionSmile,
    k: f64,
) -> Result<DensityResidual>
where
    C: DiscountCurve + ?Sized,
    S: VarianceSurface + ?Sized,
{
    let fx = SwapFunctions::new(curve, swap, surface, mu);
    let t0 = swap.fixing;
    let (lo, hi) = x_window(surface, t0, PRICE_WINDOW_SD)?;
    let x = fx.invert_rate(k, lo, hi)?;
    let st = fx.at(x)?;
    let scale = 1.0 / model_annuity(&fx, lo, hi);
    let model = scale * st.annuity * density_at(surface, t0, x) / st.d_rate;
    let market = smile.density(k);
    let residual = market - model;
    Ok(DensityResidual {
        strike: k,
        x,
        swaption_density: market,
        model_density: model,
        residual,
        relative: residual / market,
    })
}

/// Swaption price by simulation: `P0(T0)/A0 E^T[A_T (S_T - k)+]` with bonds from the simulated
/// `(x, y)` at the fixing.
pub fn mc_swaption_price<C: DiscountCurve + ?Sized>(
    curve: &C,
    swap: &SwapInstrument,
    mu: f64,
    ensemble: &PathEnsemble1F,
    k: f64,
) -> Estimate {
    mc_swaption_price_kind(curve, swap, mu, ensemble, k, SwaptionKind::Payer)
}

pub fn mc_swaption_price_kind<C: DiscountCurve + ?Sized>(
    curve: &C,
    swap: &SwapInstrument,
    mu: f64,
    ensemble: &PathEnsemble1F,
    k: f64,
    kind: SwaptionKind,
) -> Estimate {
    let t0 = swap.fixing;
    let scale = curve.discount(t0) / swap.annuity0(curve);
    let legs: Vec<(f64, f64)> = swap
        .payments
        .iter()
        .zip(&swap.accruals)
        .map(|(&t, &a)| (a, decay_integral(mu, t - t0)))
        .collect();
    let ratios: Vec<f64> = swap.payments.iter().map(|&t| curve.discount(t) / curve.discount(t0)).collect();
    let e = ensemble.estimate(|x, y| {
        let mut a = 0.0;
        let mut last = 0.0;
        for (&(acc, g), ratio) in legs.iter().zip(&ratios) {
            last = ratio * exp(-g * x - 0.5 * g * g * y);
            a += acc * last;
        }
        let s = (1.0 - last) / a;
        let payoff = match kind {
            SwaptionKind::Payer => s - k,
            SwaptionKind::Receiver => k - s,
        };
        a * payoff.max(0.0)
    });
    Estimate { value: scale * e.value, stderr: scale * e.stderr }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub nodes: usize,
    /// Half-width of the node grid in ATM standard deviations.
    pub width_sd: f64,
    /// Weight of the new iterate in the log-variance update.
    pub damping: f64,
    pub max_iterations: usize,
    /// Stop when the largest relative change of a node variance falls below this.
    pub tolerance: f64,
    /// Largest acceptable repricing error in normal vol.
    pub vol_tolerance: f64,
    /// Largest acceptable density residual as a fraction of the peak swaption density.
    pub density_tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { nodes: 41, width_sd: 6.0, damping: 1.0, max_iterations: 50, tolerance: 1e-10, vol_tolerance: 0.5e-4, density_tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepricingError {
    pub strike: f64,
    pub market_vol: f64,
    pub model_vol: f64,
}

impl RepricingError {
    pub fn error(&self) -> f64 {
        let e = (self.model_vol - self.market_vol).abs();
        if e.is_nan() { f64::INFINITY } else { e }
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub surface: GridSurface,
    pub x_nodes: Vec<f64>,
    pub w_nodes: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest relative node change per iteration.
    pub trace: Vec<f64>,
    pub density_residuals: Vec<DensityResidual>,
    pub repricing: Vec<RepricingError>,
}

impl Calibration {
    pub fn max_vol_error(&self) -> f64 {
        self.repricing.iter().map(RepricingError::error).fold(0.0, f64::max)
    }

    /// Largest relative residual; dominated by the far wings where both densities are tiny.
    pub fn max_density_residual(&self) -> f64 {
        self.density_residuals.iter().map(|r| r.relative.abs()).fold(0.0, f64::max)
    }

    /// Largest absolute residual over the peak swaption density.
    pub fn max_scaled_density_residual(&self) -> f64 {
        let peak = self.density_residuals.iter().map(|r| r.swaption_density).fold(0.0, f64::max);
        if !(peak > 0.0) {
            return f64::INFINITY;
        }
        self.density_residuals.iter().map(|r| r.residual.abs()).fold(0.0, f64::max) / peak
    }

    /// Converged, with density residuals and repricing errors within tolerance.
    pub fn succeeded(&self, config: &CalibrationConfig) -> bool {
        self.converged
            && self.max_scaled_density_residual() <= config.density_tolerance
            && self.max_vol_error() <= config.vol_tolerance
    }
}

/// Short-rate variance slice `w(x)` at the fixing that reproduces a swaption smile.
///
/// Each iteration maps the market swaption density onto `x` through the current `S(x)`,
/// prices out-of-the-money short-rate options under that density at every node and inverts
/// them to total variances. Only the convexity term `y(x)` couples the iterations, so the map
/// is a strong contraction.
pub fn calibrate_w_from_swaptions<C, S>(
    curve: &C,
    swap: &SwapInstrument,
    mu: f64,
    smile: &SwaptionSmile,
    init: &S,
    config: &CalibrationConfig,
) -> Result<Calibration>
where
    C: DiscountCurve + ?Sized,
    S: VarianceSurface + ?Sized,
{
    if config.nodes < 3 || !(config.width_sd > 0.0) || !(config.damping > 0.0 && config.damping <= 1.0) {
        return Err(Error::InvalidGrid("calibration grid needs 3 nodes, positive width and damping in (0, 1]"));
    }
    let t0 = swap.fixing;
    let half = config.width_sd * sqrt(init.w(t0, 0.0)?);
    let n = config.nodes;
    let x_nodes: Vec<f64> = (0..n).map(|j| -half + 2.0 * half * j as f64 / (n - 1) as f64).collect();
    let mut w_nodes = x_nodes.iter().map(|&x| init.w(t0, x)).collect::<Result<Vec<f64>>>()?;
    let mut surface = GridSurface::from_slice(t0, &x_nodes, &w_nodes)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    // integrate the mapped density over a window wider than the node grid
    let window = half * f64::max(PRICE_WINDOW_SD / config.width_sd, 1.25);
    for _ in 0..config.max_iterations {
        iterations += 1;
        let fx = SwapFunctions::new(curve, swap, &surface, mu);
        let mapped = |u: f64| -> f64 {
            match fx.at(u) {
                Ok(st) if st.d_rate > 0.0 => smile.density(st.rate) * st.d_rate / st.annuity,
                _ => 0.0,
            }
        };
        // the normalization is 1 / E^A[1 / A_T], i.e. E^T[A_T]
        let scale = 1.0 / integrate(mapped, -window, window, quad_tol()).value;
        let q = |u: f64| scale * mapped(u);
        // truncating the quoted smile moves the mean of q slightly off zero; inverting around
        // that mean keeps the put and call sides of the slice continuous
        let mean = integrate(|u| u * q(u), -window, window, quad_tol()).value;
        let mut next = Vec::with_capacity(n);
        for &xj in &x_nodes {
            let w = if xj >= mean {
                implied_total_variance(integrate(|u| (u - xj) * q(u), xj, window, quad_tol()).value, xj - mean)
            } else {
                implied_total_variance(integrate(|u| (xj - u) * q(u), -window, xj, quad_tol()).value, mean - xj)
            };
            next.push(w.ok());
        }
        let next = fill_underflowed(next, x_nodes.iter().position(|&x| x >= mean).unwrap_or(n - 1))?;
        let mut change: f64 = 0.0;
        for (w, w_new) in w_nodes.iter_mut().zip(&next) {
            let updated = exp((1.0 - config.damping) * crate::math::ln(*w) + config.damping * crate::math::ln(*w_new));
            change = change.max(((updated - *w) / *w).abs());
            *w = updated;
        }
        surface = GridSurface::from_slice(t0, &x_nodes, &w_nodes)?;
        trace.push(change);
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    let mut density_residuals = Vec::new();
    let mut repricing = Vec::new();
    for (&k, &z) in smile.strikes().iter().zip(smile.variances()) {
        if let Ok(r) = swaption_density_residual(curve, swap, &surface, mu, smile, k) {
            density_residuals.push(r);
        }
        // a strike the model cannot price counts as an infinite error
        let model_vol = implied_swaption_variance(curve, swap, &surface, mu, smile.forward(), k).map_or(f64::NAN, |v| sqrt(v / t0));
        repricing.push(RepricingError { strike: k, market_vol: sqrt(z / t0), model_vol });
    }
    Ok(Calibration { surface, x_nodes, w_nodes, iterations, converged, trace, density_residuals, repricing })
}

/// Far wing nodes whose option prices underflow take the value of the nearest inner node.
fn fill_underflowed(nodes: Vec<Option<f64>>, centre: usize) -> Result<Vec<f64>> {
    let centre_value = nodes[centre].ok_or(Error::NoConvergence { what: "central node option price", iterations: 0, residual: f64::NAN })?;
    let mut out = alloc::vec![centre_value; nodes.len()];
    for j in centre + 1..nodes.len() {
        out[j] = nodes[j].unwrap_or(out[j - 1]);
    }
    for j in (0..centre).rev() {
        out[j] = nodes[j].unwrap_or(out[j + 1]);
    }
    Ok(out)
}

/// Flat initial guess `w = z_ATM / S'(0)^2` for a calibration.
pub fn initial_guess<C: DiscountCurve + ?Sized>(curve: &C, swap: &SwapInstrument, mu: f64, smile: &SwaptionSmile) -> Result<GridSurface> {
    let z_atm = smile.point(smile.forward()).w;
    let flat = crate::surface::synthetic_flat(1e-2, 0.0)?;
    let fx = SwapFunctions::new(curve, swap, &flat, mu);
    let slope = fx.at_state(0.0, 0.0, 0.0)?.d_rate;
    let w = z_atm / (slope * slope);
    let sd = sqrt(w);
    GridSurface::from_slice(swap.fixing, &[-sd, 0.0, sd], &[w, w, w])
}

/// Applies `density_ratio` to a smile point; re-exported for diagnostics.
pub fn smile_density_ratio(smile: &SwaptionSmile, k: f64) -> f64 {
    density_ratio(&smile.point(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{synthetic_flat, synthetic_linear};

    fn setup() -> (FlatCurve, SwapInstrument) {
        (FlatCurve::new(0.02).unwrap(), SwapInstrument::regular(5.0, 1.0, 5).unwrap())
    }

    #[test]
    fn bond_reconstruction() {
        let c = FlatCurve::new(0.02).unwrap();
        assert!((bond_from_state(&c, 0.03, 5.0, 10.0, 0.0, 0.0) - (-0.1f64).exp()).abs() < 1e-15);
        assert_eq!(bond_from_state(&c, 0.03, 5.0, 5.0, 0.01, 2e-4), 1.0);
        // 30-digit evaluation of the same expression, G = (1 - e^{-0.15}) / 0.03
        let g = (1.0 - (-0.15f64).exp()) / 0.03;
        let expected = (-0.1f64).exp() * (-g * 0.01 - 0.5 * g * g * 2e-4).exp();
        const FROZEN: f64 = 0.861_925_462_856_004_6;
        assert!((expected - FROZEN).abs() < 1e-15);
        assert!((bond_from_state(&c, 0.03, 5.0, 10.0, 0.01, 2e-4) - FROZEN).abs() < 1e-15);
        let two = bond_from_state_2f(&c, [0.03, 0.5], 5.0, 10.0, [0.01, 0.0], [2e-4, 0.0, 0.0]);
        assert!((two - FROZEN).abs() < 1e-15);
    }

    #[test]
    fn y_from_w_cases() {
        let flat = synthetic_flat(0.01, 0.0).unwrap();
        assert!((y_from_w(&flat, 5.0, 0.003).unwrap() - 5e-4).abs() < 1e-18);
        let lin = synthetic_linear(4e-4, 2e-3, 5.0).unwrap();
        assert!((y_from_w(&lin, 5.0, 0.01).unwrap() - (4.2e-4 + 2e-6)).abs() < 1e-18);
    }

    #[test]
    fn swap_functions_and_derivatives() {
        let (c, swap) = setup();
        let s = synthetic_linear(5e-4, 0.004, 5.0).unwrap();
        let fx = SwapFunctions::new(&c, &swap, &s, 0.03);
        let st = fx.at(0.0).unwrap();
        // no convexity at x = 0 only when y = 0; check the par rate on the pure curve
        let par = fx.at_state(0.0, 0.0, 0.0).unwrap().rate;
        let (r, n): (f64, i32) = (0.02, 5);
        let d = (-r).exp();
        let expected = (1.0 - d.powi(n)) / (1..=n).map(|i| d.powi(i)).sum::<f64>();
        assert!((par - expected).abs() < 1e-15);
        assert!((swap.forward_rate(&c) - expected).abs() < 1e-15);
        for x in [-0.02, -0.005, 0.0, 0.011] {
            let st = fx.at(x).unwrap();
            let h = 1e-6;
            let (up, dn) = (fx.at(x + h).unwrap(), fx.at(x - h).unwrap());
            let da = (up.annuity - dn.annuity) / (2.0 * h);
            let ds = (up.rate - dn.rate) / (2.0 * h);
            assert!(((da - st.d_annuity) / st.d_annuity).abs() < 1e-7);
            assert!(((ds - st.d_rate) / st.d_rate).abs() < 1e-7);
            assert!(st.d_rate > 0.0);
        }
        assert!(st.annuity > 0.0);
    }

    #[test]
    fn price_limits_and_flat_value() {
        let (c, swap) = setup();
        let s = synthetic_flat(0.01, 0.03).unwrap();
        assert_eq!(price_swaption_from_w(&c, &swap, &s, 0.03, 1.0).unwrap(), 0.0);
        let fwd = swap.forward_rate(&c);
        let deep = price_swaption_from_w(&c, &swap, &s, 0.03, -0.5).unwrap();
        assert!((deep - (fwd + 0.5)).abs() < 1e-9);
        let m = model_forward_rate(&c, &swap, &s, 0.03).unwrap();
        assert!((m - fwd).abs() < 1e-10);
    }

    #[test]
    fn monotone_in_level() {
        let (c, swap) = setup();
        let base = synthetic_linear(5e-4, 0.004, 5.0).unwrap();
        let bumped = synthetic_linear(5.5e-4, 0.004, 5.0).unwrap();
        let fwd = swap.forward_rate(&c);
        for k in [fwd - 0.01, fwd, fwd + 0.01] {
            let a = price_swaption_from_w(&c, &swap, &base, 0.03, k).unwrap();
            let b = price_swaption_from_w(&c, &swap, &bumped, 0.03, k).unwrap();
            assert!(b > a);
        }
    }

    #[test]
    fn range_too_small_is_reported() {
        struct Bad;
        impl VarianceSurface for Bad {
            fn eval(&self, _t: f64, k: f64) -> Result<SmilePoint> {
                // density ratio 4 everywhere: mass far from 1
                Ok(SmilePoint { k, w: 1e-4, dw_dk: 0.0, d2w_dk2: 6.0, dw_dt: 0.0 })
            }
            fn provenance(&self) -> crate::surface::Provenance {
                crate::surface::Provenance::AnalyticSynthetic
            }
        }
        let (c, swap) = setup();
        assert!(matches!(price_swaption_from_w(&c, &swap, &Bad, 0.03, 0.02), Err(Error::RangeTooSmall { .. })));
    }

    #[test]
    fn swap_validation() {
        assert!(SwapInstrument::new(5.0, alloc::vec![4.0], alloc::vec![1.0]).is_err());
        assert!(SwapInstrument::new(5.0, alloc::vec![6.0, 6.0], alloc::vec![1.0, 1.0]).is_err());
        assert!(SwapInstrument::new(5.0, alloc::vec![6.0], alloc::vec![0.0]).is_err());
        assert!(SwapInstrument::new(5.0, alloc::vec![6.0], alloc::vec![]).is_err());
    }
}
