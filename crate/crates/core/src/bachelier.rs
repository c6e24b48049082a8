//! Bachelier (normal-model) pricing and the calculus of `C(T, k) = BH(k, w(T, k))`.
//!
//! `p(k, w)` below is always the `Normal(0, w)` density at `k`. The variance vega of the
//! Bachelier price is `d BH / dw = p / 2`, so the maturity derivative of an option price carries
//! an explicit factor one half: `d_T C = p d_T w / 2`.

use crate::error::{finite, Error, Result};
use crate::math::{bachelier_unit, exp, ln, norm_cdf, norm_pdf, sqrt, TWO_PI};

/// A quoted short-rate option: forward, strike, maturity and undiscounted price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionQuote {
    pub forward: f64,
    pub strike: f64,
    pub maturity: f64,
    pub price: f64,
}

impl OptionQuote {
    pub fn new(forward: f64, strike: f64, maturity: f64, price: f64) -> Result<Self> {
        finite("forward", forward)?;
        finite("strike", strike)?;
        finite("price", price)?;
        if !(maturity > 0.0) || !maturity.is_finite() {
            return Err(Error::domain("maturity", maturity));
        }
        let intrinsic = (forward - strike).max(0.0);
        if price < intrinsic {
            return Err(Error::BelowIntrinsic { price, intrinsic });
        }
        Ok(Self { forward, strike, maturity, price })
    }

    /// `k = K - f0(T)`.
    pub fn shifted_strike(&self) -> f64 {
        self.strike - self.forward
    }

    pub fn implied_total_variance(&self) -> Result<f64> {
        implied_total_variance(self.price, self.shifted_strike())
    }

    pub fn implied_vol(&self) -> Result<f64> {
        Ok(sqrt(self.implied_total_variance()? / self.maturity))
    }
}

/// Total implied variance and its derivatives at one `(T, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmilePoint {
    pub k: f64,
    pub w: f64,
    pub dw_dk: f64,
    pub d2w_dk2: f64,
    pub dw_dt: f64,
}

impl SmilePoint {
    /// A flat point: all strike derivatives vanish.
    pub fn flat(k: f64, w: f64, dw_dt: f64) -> Self {
        Self { k, w, dw_dk: 0.0, d2w_dk2: 0.0, dw_dt }
    }

    pub fn density(&self) -> f64 {
        gaussian_pdf(self.k, self.w)
    }
}

/// Undiscounted Bachelier call `(f - K) Phi(d) + sigma sqrt(T) phi(d)`.
pub fn bh_price(forward: f64, strike: f64, maturity: f64, vol: f64) -> Result<f64> {
    finite("forward", forward)?;
    finite("strike", strike)?;
    finite("vol", vol)?;
    if !(maturity > 0.0) || !maturity.is_finite() {
        return Err(Error::domain("maturity", maturity));
    }
    if vol < 0.0 {
        return Err(Error::domain("vol", vol));
    }
    bh_price_from_variance(strike - forward, vol * vol * maturity)
}

/// Bachelier call as a function of shifted strike and total variance only.
pub fn bh_price_from_variance(k: f64, w: f64) -> Result<f64> {
    finite("k", k)?;
    finite("w", w)?;
    if w < 0.0 {
        return Err(Error::domain("w", w));
    }
    if w == 0.0 {
        return Ok((-k).max(0.0));
    }
    let s = sqrt(w);
    // intrinsic plus out-of-the-money time value, so the price never rounds below intrinsic
    if k < 0.0 {
        return Ok(s * bachelier_unit(-k / s) - k);
    }
    Ok(s * bachelier_unit(k / s))
}

/// Inverts `BH(k, w) = price` for `w`.
///
/// The time value is inverted on the out-of-the-money side with Newton steps on
/// `ln BH(|k|, e^L) - ln(time value)`, which is increasing and concave in `L = ln w`; a bracket
/// starting at the lower bound `2 pi tv^2` guards every step.
pub fn implied_total_variance(price: f64, k: f64) -> Result<f64> {
    finite("price", price)?;
    finite("k", k)?;
    let intrinsic = (-k).max(0.0);
    let tv = price - intrinsic;
    if !(tv > 0.0) {
        return Err(Error::BelowIntrinsic { price, intrinsic });
    }
    let k = k.abs();
    let w_atm = TWO_PI * tv * tv;
    if k == 0.0 {
        return Ok(w_atm);
    }
    let target = ln(tv);
    let objective = |l: f64| -> (f64, f64) {
        let w = exp(l);
        let s = sqrt(w);
        let d = k / s;
        let h = bachelier_unit(d);
        (ln(s * h) - target, norm_pdf(d) / (2.0 * h))
    };

    let mut lo = ln(w_atm);
    let mut hi = lo + ln(4.0);
    while objective(hi).0 < 0.0 {
        lo = hi;
        hi += ln(4.0);
        if hi > 1400.0 {
            return Err(Error::NoConvergence { what: "implied variance bracket", iterations: 0, residual: tv });
        }
    }
    let mut l = lo;
    for _ in 0..200 {
        let (f, df) = objective(l);
        if f == 0.0 {
            return Ok(exp(l));
        }
        if f < 0.0 {
            lo = lo.max(l);
        } else {
            hi = hi.min(l);
        }
        let mut next = l - f / df;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - l).abs() <= 1e-15 * (1.0 + l.abs()) {
            return Ok(exp(next));
        }
        l = next;
    }
    Err(Error::NoConvergence { what: "implied variance", iterations: 200, residual: objective(l).0 })
}

fn gaussian_pdf(k: f64, w: f64) -> f64 {
    exp(-0.5 * k * k / w) / sqrt(TWO_PI * w)
}

/// `Normal(0, w)` density at `k`.
pub fn gaussian_density_p(k: f64, w: f64) -> Result<f64> {
    finite("k", k)?;
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::domain("w", w));
    }
    Ok(gaussian_pdf(k, w))
}

/// `d_kk C / p = (1 - k w_k / 2w)^2 + (w_kk - w_k^2 / 2w) / 2`.
pub fn density_ratio(point: &SmilePoint) -> f64 {
    let SmilePoint { k, w, dw_dk, d2w_dk2, .. } = *point;
    let skew = 1.0 - k * dw_dk / (2.0 * w);
    skew * skew + 0.5 * (d2w_dk2 - dw_dk * dw_dk / (2.0 * w))
}

/// Risk-neutral density implied by the smile, `d_kk C = p * density_ratio`.
pub fn implied_density(point: &SmilePoint) -> f64 {
    point.density() * density_ratio(point)
}

/// `C - k d_k C = p (w - k w_k / 2)`.
pub fn c_minus_k_dkc(point: &SmilePoint) -> f64 {
    point.density() * (point.w - 0.5 * point.k * point.dw_dk)
}

/// `d_T C = p d_T w / 2`.
pub fn dt_price(point: &SmilePoint) -> f64 {
    0.5 * point.density() * point.dw_dt
}

/// Digital price `-d_k C = Phi(-k / sqrt(w)) - p w_k / 2`.
pub fn digital_price(point: &SmilePoint) -> f64 {
    norm_cdf(-point.k / sqrt(point.w)) - 0.5 * point.density() * point.dw_dk
}

/// Option price `C(T, k)` from a smile point.
pub fn price(point: &SmilePoint) -> Result<f64> {
    bh_price_from_variance(point.k, point.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::FRAC_1_SQRT_2PI;
    use proptest::prelude::*;

    // Gauss-Legendre oracle for E[(X - K)+], X ~ N(f, w), on [K, f + 14 sqrt(w)].
    fn call_by_quadrature(f: f64, strike: f64, w: f64) -> f64 {
        let gl = crate::quad::GaussLegendre::new(40);
        let s = w.sqrt();
        let lo = strike.max(f - 14.0 * s);
        let hi = f + 14.0 * s;
        gl.composite(
            |x| (x - strike) * (-(x - f) * (x - f) / (2.0 * w)).exp() / (TWO_PI * w).sqrt(),
            lo,
            hi,
            64,
        )
    }

    #[test]
    fn atm_price_is_vol_sqrt_t_over_sqrt_2pi() {
        let p = bh_price(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!((p - FRAC_1_SQRT_2PI).abs() < 1e-16);
        assert_eq!(bh_price(0.02, 0.05, 1.0, 0.0).unwrap(), 0.0);
        assert!((bh_price(0.05, 0.02, 1.0, 0.0).unwrap() - 0.03).abs() < 1e-17);
    }

    #[test]
    fn price_matches_quadrature_oracle() {
        // frozen from the Gauss-Legendre oracle below (agrees with an arbitrary-precision quadrature)
        const EXPECTED: f64 = 0.012_590_720_206_318_995;
        let oracle = call_by_quadrature(0.01, 0.0, 0.008 * 0.008 * 4.0);
        assert!((oracle - EXPECTED).abs() < 1e-15, "oracle {oracle}");
        let p = bh_price(0.01, 0.0, 4.0, 0.008).unwrap();
        assert!((p - EXPECTED).abs() < 1e-15, "{p}");
    }

    #[test]
    fn price_from_variance_depends_on_w_only() {
        let w: f64 = 3.7e-4;
        assert!((bh_price_from_variance(0.0, w).unwrap() - (w / TWO_PI).sqrt()).abs() < 1e-18);
        assert_eq!(bh_price_from_variance(0.01, 0.0).unwrap(), 0.0);
        assert_eq!(bh_price_from_variance(-0.01, 0.0).unwrap(), 0.01);
        // T = 1, sigma = 0.02
        const EXPECTED: f64 = 0.003_955_931_148_026_121;
        let v = bh_price_from_variance(0.01, 0.0004).unwrap();
        assert!((v - EXPECTED).abs() < 1e-17, "{v}");
        for t in [0.25, 1.0, 7.0] {
            let vol = (0.0004f64 / t).sqrt();
            assert!((bh_price(0.0, 0.01, t, vol).unwrap() - v).abs() < 1e-17);
        }
        assert!(bh_price_from_variance(0.0, -1e-9).is_err());
        assert!(bh_price(0.0, f64::NAN, 1.0, 0.01).is_err());
    }

    #[test]
    fn implied_variance_atm_and_derived_root() {
        let w = 2.5e-4;
        let p = (w / TWO_PI).sqrt();
        assert!((implied_total_variance(p, 0.0).unwrap() - w).abs() < 1e-18);

        // bisection oracle on the monotone map w -> BH(k, w)
        let (price, k) = (0.004, 0.005);
        let (mut lo, mut hi) = (1e-12_f64, 1.0_f64);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if bh_price_from_variance(k, mid).unwrap() < price {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        const EXPECTED: f64 = 2.400_395_183_989_732e-4;
        assert!(((lo - EXPECTED) / EXPECTED).abs() < 1e-12, "oracle {lo}");
        let got = implied_total_variance(price, k).unwrap();
        assert!(((got - EXPECTED) / EXPECTED).abs() < 1e-12, "{got}");
    }

    #[test]
    fn implied_variance_errors() {
        assert!(matches!(implied_total_variance(0.01, -0.01), Err(Error::BelowIntrinsic { .. })));
        assert!(matches!(implied_total_variance(0.0, 0.01), Err(Error::BelowIntrinsic { .. })));
        assert!(matches!(implied_total_variance(f64::INFINITY, 0.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn density_value_and_mass() {
        let w = 1e-4;
        assert!((gaussian_density_p(0.0, w).unwrap() - 1.0 / (TWO_PI * w).sqrt()).abs() < 1e-12);
        const EXPECTED: f64 = 24.197_072_451_914_335;
        assert!((gaussian_density_p(0.01, w).unwrap() - EXPECTED).abs() < 1e-12);
        let s = w.sqrt();
        let mass = crate::quad::integrate(
            |k| gaussian_density_p(k, w).unwrap(),
            -10.0 * s,
            10.0 * s,
            crate::quad::Tolerance::default(),
        );
        assert!((mass.value - 1.0).abs() < 1e-10);
        assert!(gaussian_density_p(0.0, 0.0).is_err());
    }

    fn linear_point(k: f64, a: f64, b: f64) -> SmilePoint {
        SmilePoint { k, w: a + b * k, dw_dk: b, d2w_dk2: 0.0, dw_dt: 0.0 }
    }

    fn fd_second(f: impl Fn(f64) -> f64, k: f64, h: f64) -> f64 {
        (f(k + h) - 2.0 * f(k) + f(k - h)) / (h * h)
    }

    #[test]
    fn density_ratio_cases() {
        assert_eq!(density_ratio(&SmilePoint::flat(0.003, 1e-4, 0.0)), 1.0);
        // k = 0: 1 - b^2 / 4w, checked against finite differences along w(k) = w + b k
        let (w0, b) = (4e-4, 0.02);
        let r0 = density_ratio(&linear_point(0.0, w0, b));
        assert!((r0 - (1.0 - b * b / (4.0 * w0))).abs() < 1e-15);
        let c = |k: f64| bh_price_from_variance(k, w0 + b * k).unwrap();
        let fd = fd_second(c, 0.0, 1e-5) / gaussian_density_p(0.0, w0).unwrap();
        assert!((fd - r0).abs() / r0 < 1e-6, "{fd} {r0}");

        // k = 0.01 on the smile through w = 4e-4 with slope 0.02 at that strike
        let (k, w) = (0.01, 4e-4);
        let pt = SmilePoint { k, w, dw_dk: b, d2w_dk2: 0.0, dw_dt: 0.0 };
        assert!((density_ratio(&pt) - 0.3125).abs() < 1e-15);
        let c = |x: f64| bh_price_from_variance(x, w + b * (x - k)).unwrap();
        let fd = fd_second(c, k, 1e-5) / gaussian_density_p(k, w).unwrap();
        assert!((fd - 0.3125).abs() / 0.3125 < 1e-6, "{fd}");
    }

    #[test]
    fn c_minus_k_dkc_cases() {
        let w: f64 = 3e-4;
        let atm = c_minus_k_dkc(&SmilePoint::flat(0.0, w, 0.0));
        assert!((atm - (w / TWO_PI).sqrt()).abs() < 1e-17);

        let (a, b, k) = (4e-4, 0.02, 0.005);
        let pt = linear_point(k, a, b);
        const EXPECTED: f64 = 7.830_332_706_476_637e-3;
        assert!((c_minus_k_dkc(&pt) - EXPECTED).abs() < 1e-16, "{}", c_minus_k_dkc(&pt));
        let c = |x: f64| bh_price_from_variance(x, a + b * x).unwrap();
        let h = 1e-6;
        let fd = c(k) - k * (c(k + h) - c(k - h)) / (2.0 * h);
        assert!((fd - EXPECTED).abs() / EXPECTED < 1e-8);
    }

    #[test]
    fn dt_price_cases() {
        assert_eq!(dt_price(&SmilePoint::flat(0.01, 1e-4, 0.0)), 0.0);
        let sigma: f64 = 0.012;
        let (t, k) = (3.0, 0.004);
        let pt = SmilePoint::flat(k, sigma * sigma * t, sigma * sigma);
        let h = 1e-5;
        let fd = (bh_price(0.0, k, t + h, sigma).unwrap() - bh_price(0.0, k, t - h, sigma).unwrap())
            / (2.0 * h);
        assert!((dt_price(&pt) - fd).abs() / fd < 1e-8);
        assert!((dt_price(&pt) - 0.5 * pt.density() * sigma * sigma).abs() < 1e-18);
    }

    #[test]
    fn flat_smile_dupire_identity() {
        for &(sigma, t, k) in &[(0.01, 1.0, 0.0), (0.008, 5.0, 0.012), (0.015, 0.5, -0.02)] {
            let pt = SmilePoint::flat(k, sigma * sigma * t, sigma * sigma);
            let recovered = 2.0 * dt_price(&pt) / (pt.density() * density_ratio(&pt));
            assert!((recovered - sigma * sigma).abs() <= 1e-14 * sigma * sigma);
        }
    }

    #[test]
    fn deep_strikes_are_accurate() {
        // |k| / sqrt(w) = 12: the OTM time value is far below the ITM price's resolution, so
        // the ITM price is exactly intrinsic and only the OTM side can be inverted
        let w: f64 = 1e-4;
        let k = 12.0 * w.sqrt();
        let otm = bh_price_from_variance(k, w).unwrap();
        let itm = bh_price_from_variance(-k, w).unwrap();
        assert!(otm > 0.0);
        assert!((itm - k - otm).abs() < 1e-18);
        let back = implied_total_variance(otm, k).unwrap();
        assert!(((back - w) / w).abs() < 1e-12);
        assert!(matches!(implied_total_variance(itm, -k), Err(Error::BelowIntrinsic { .. })));
    }

    proptest! {
        #[test]
        fn inversion_round_trip_otm(lw in -8.0f64..-2.0, z in 0.0f64..8.0) {
            let w = 10f64.powf(lw);
            let k = z * w.sqrt();
            let p = bh_price_from_variance(k, w).unwrap();
            let back = implied_total_variance(p, k).unwrap();
            prop_assert!(((back - w) / w).abs() < 1e-12, "w {} k {} back {}", w, k, back);
        }

        // in the money the time value is only resolved to eps * |k|, which limits accuracy
        #[test]
        fn inversion_round_trip_itm(lw in -8.0f64..-2.0, z in -3.0f64..0.0) {
            let w = 10f64.powf(lw);
            let k = z * w.sqrt();
            let p = bh_price_from_variance(k, w).unwrap();
            let back = implied_total_variance(p, k).unwrap();
            prop_assert!(((back - w) / w).abs() < 1e-11, "w {} k {} back {}", w, k, back);
        }

        #[test]
        fn density_symmetric_and_unimodal(lw in -8.0f64..-2.0, z in 0.0f64..6.0) {
            let w = 10f64.powf(lw);
            let k = z * w.sqrt();
            let p = gaussian_density_p(k, w).unwrap();
            prop_assert_eq!(p, gaussian_density_p(-k, w).unwrap());
            prop_assert!(p <= gaussian_density_p(0.0, w).unwrap());
            prop_assert!(gaussian_density_p(1.1 * k + 1e-12, w).unwrap() <= p);
        }

        #[test]
        fn calculus_matches_finite_differences(
            z in -2.5f64..2.5, t in 0.5f64..10.0, skew in -0.3f64..0.3, curv in 0.0f64..0.3
        ) {
            // smooth surface w(T, k) = a(T) (1 + skew k/sqrt(a) + curv k^2/a), a = sigma^2 T
            let sigma2 = 1e-4;
            let w_of = |t: f64, k: f64| {
                let a = sigma2 * t;
                a + skew * a.sqrt() * k + curv * k * k
            };
            let a = sigma2 * t;
            let k = z * a.sqrt();
            let pt = SmilePoint {
                k,
                w: w_of(t, k),
                dw_dk: skew * a.sqrt() + 2.0 * curv * k,
                d2w_dk2: 2.0 * curv,
                dw_dt: sigma2 + 0.5 * skew * k * sigma2 / a.sqrt(),
            };
            prop_assume!(pt.w > 0.2 * a && density_ratio(&pt) > 0.05);
            let c = |t: f64, x: f64| bh_price_from_variance(x, w_of(t, x)).unwrap();
            let hk = 2e-3 * a.sqrt();
            let h1 = 2e-4 * a.sqrt();
            let ht = 1e-4 * t;
            let c_k = (c(t, k + h1) - c(t, k - h1)) / (2.0 * h1);
            let second = |h: f64| (c(t, k + h) - 2.0 * c(t, k) + c(t, k - h)) / (h * h);
            // Richardson extrapolation removes the h^2 term, which is large in the wings
            let c_kk = (4.0 * second(0.5 * hk) - second(hk)) / 3.0;
            let c_t = (c(t + ht, k) - c(t - ht, k)) / (2.0 * ht);
            let p = pt.density();
            prop_assert!((c_kk / p - density_ratio(&pt)).abs() < 1e-6 * density_ratio(&pt).max(1.0) + 1e-5);
            let cm = c(t, k) - k * c_k;
            prop_assert!((cm - c_minus_k_dkc(&pt)).abs() < 1e-6 * c_minus_k_dkc(&pt).abs() + 1e-12);
            prop_assert!((c_t - dt_price(&pt)).abs() < 1e-6 * dt_price(&pt).abs() + 1e-12);
        }
    }

    extern crate std;
}
