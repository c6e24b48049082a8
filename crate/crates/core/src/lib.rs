//! Explicit local volatility for Cheyette-type (quasi-Gaussian HJM) interest-rate models.
//!
//! The crate is `no_std` and only needs `alloc`. It covers:
//!
//! * [`bachelier`]: normal-model pricing, implied total variance and the strike/maturity
//!   calculus of `C(T, k) = BH(k, w(T, k))`.
//! * [`surface`]: total implied variance surfaces `w(T, k)` with analytic derivatives.
//! * [`localvol`]: the explicit local-variance formulas (first order, third-order adjusted,
//!   multi-factor with an effective mean reversion) and the implicit-formula residual.
//! * [`ig`]: inverse-Gaussian truncated moments and the exact `A` term for linear smiles.
//! * [`mc`]: Euler Monte Carlo for the one- and two-factor models under the T-forward measure.
//! * [`twofactor`]: closed forms of the two-factor Gaussian model and `mu_eff(T)`.
//! * [`swaption`]: swap functions of the state, swaption pricing from `w` and calibration of
//!   `w` to a swaption smile.
//!
//! Strikes are always shifted strikes `k = K - f0(T)`, i.e. the forward curve is normalized to
//! zero for the short-rate options.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
pub mod math;
pub mod quad;
pub mod spline;

pub mod bachelier;
pub mod ig;
pub mod localvol;
pub mod mc;
pub mod rng;
pub mod surface;
pub mod swaption;
pub mod twofactor;

pub use error::{Error, Result};

pub use bachelier::{OptionQuote, SmilePoint};
pub use localvol::{LocalVolSurface, Order};
pub use mc::{CheyetteParams1F, CheyetteParams2F, McConfig, PathEnsemble1F, PathEnsemble2F};
pub use surface::{GridSurface, SurfaceGrid, SyntheticSurface, VarianceSurface};
pub use swaption::{DiscountCurve, FlatCurve, SwapInstrument, SwaptionSmile};
pub use twofactor::{AtmTermStructure, TwoFactorConstants};
