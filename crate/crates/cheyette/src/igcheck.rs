//! Inverse-Gaussian checks: closed-form truncated moments against adaptive quadrature, and the
//! convergence order of the expansion of `A / p` for linear smiles.

use cheyette_core::ig::{expansion_error, expansion_error_variant, ig_pdf, ig_trunc_m1, ig_trunc_m2, IgParams};
use cheyette_core::quad::{integrate, integrate_to_infinity, Tolerance};
use cheyette_core::Result;
use serde_json::{json, Value};

use crate::io::num;

pub const GRID_A: [f64; 3] = [0.25, 1.0, 4.0];
pub const GRID_B: [f64; 3] = [0.05, 0.1, 0.2];
/// Thresholds as multiples of `a`.
pub const GRID_R: [f64; 4] = [0.5, 1.0, 1.5, 3.0];

pub const ORDER_A: f64 = 1.0;
pub const ORDER_K: f64 = 0.5;
pub const ORDER_B: [f64; 3] = [0.2, 0.1, 0.05];
pub const ORDER_RANGE: (f64, f64) = (8.0, 32.0);

/// `E[tau^power 1{tau > x}]` by Gauss-Kronrod, split past the bulk of the density.
pub fn quad_moment(x: f64, params: IgParams, power: i32) -> f64 {
    let tol = Tolerance { abs: 0.0, rel: 1e-13, max_intervals: 20_000 };
    let f = |u: f64| u.powi(power) * ig_pdf(u, params).unwrap_or(0.0);
    let split = x.max(params.a) + 10.0 * params.b.abs() * params.a.sqrt();
    integrate(f, x, split, tol).value + integrate_to_infinity(f, split, tol).value
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    pub points: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderRow {
    pub b: f64,
    pub error: f64,
    pub variant_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IgReport {
    pub moments: MomentCheck,
    pub order: Vec<OrderRow>,
}

fn in_range(r: f64) -> bool {
    (ORDER_RANGE.0..=ORDER_RANGE.1).contains(&r)
}

impl IgReport {
    /// Error ratio between successive halvings of `b`.
    pub fn ratios(&self, variant: bool) -> Vec<f64> {
        self.order
            .windows(2)
            .map(|p| if variant { p[0].variant_error / p[1].variant_error } else { p[0].error / p[1].error })
            .collect()
    }

    pub fn expansion_in_range(&self) -> bool {
        self.ratios(false).into_iter().all(in_range)
    }

    pub fn variant_in_range(&self) -> bool {
        self.ratios(true).into_iter().all(in_range)
    }

    pub fn table(&self) -> Vec<String> {
        let mut lines = vec![
            format!("truncated moments vs quadrature: {} values, max relative error {:.3e}", self.moments.points, self.moments.max_rel_error),
            format!("expansion error at a = {ORDER_A}, k = {ORDER_K}"),
            format!("{:>8} {:>14} {:>8} {:>14} {:>8}", "b", "error", "ratio", "variant", "ratio"),
        ];
        let (r, v) = (self.ratios(false), self.ratios(true));
        for (i, row) in self.order.iter().enumerate() {
            let fmt = |x: Option<&f64>| x.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
            let (ri, vi) = if i == 0 { (None, None) } else { (r.get(i - 1), v.get(i - 1)) };
            lines.push(format!("{:>8} {:>14.6e} {:>8} {:>14.6e} {:>8}", row.b, row.error, fmt(ri), row.variant_error, fmt(vi)));
        }
        lines
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .order
            .iter()
            .map(|r| json!({ "b": num(r.b), "error": num(r.error), "variant_error": num(r.variant_error) }))
            .collect();
        let ratios = |v: bool| Value::Array(self.ratios(v).into_iter().map(num).collect());
        json!({
            "moments": { "points": self.moments.points, "max_rel_error": num(self.moments.max_rel_error) },
            "order": {
                "a": num(ORDER_A),
                "k": num(ORDER_K),
                "rows": rows,
                "ratios": ratios(false),
                "variant_ratios": ratios(true),
                "expansion_in_range": self.expansion_in_range(),
                "variant_in_range": self.variant_in_range(),
            },
        })
    }
}

pub fn moment_check() -> Result<MomentCheck> {
    let mut worst = 0.0f64;
    let mut points = 0;
    for a in GRID_A {
        for b in GRID_B {
            for r in GRID_R {
                let p = IgParams::new(a, b)?;
                let x = r * a;
                for (power, closed) in [(1, ig_trunc_m1(x, p)?), (2, ig_trunc_m2(x, p)?)] {
                    let q = quad_moment(x, p, power);
                    worst = worst.max(((closed - q) / q).abs());
                    points += 1;
                }
            }
        }
    }
    Ok(MomentCheck { points, max_rel_error: worst })
}

pub fn run() -> Result<IgReport> {
    let moments = moment_check()?;
    let order = ORDER_B
        .iter()
        .map(|&b| {
            Ok(OrderRow {
                b,
                error: expansion_error(ORDER_K, ORDER_A, b)?,
                variant_error: expansion_error_variant(ORDER_K, ORDER_A, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IgReport { moments, order })
}
