use cheyette_core::quad::{integrate, Tolerance};
use cheyette_core::surface::{synthetic_flat, synthetic_smile, GridSurface, VarianceSurface};
use cheyette_core::swaption::{
    calibrate_w_from_swaptions, curve_consistency, implied_swaption_variance, initial_guess, model_forward_rate,
    swaption_density_residual, CalibrationConfig, FlatCurve, SwapFunctions, SwapInstrument, SwaptionSmile,
};

const MU: f64 = 0.03;
const T0: f64 = 5.0;

fn setup() -> (FlatCurve, SwapInstrument) {
    (FlatCurve::new(0.02).unwrap(), SwapInstrument::regular(T0, 1.0, 5).unwrap())
}

fn smile_from<S: VarianceSurface>(curve: &FlatCurve, swap: &SwapInstrument, s: &S, n: usize, width_sd: f64) -> SwaptionSmile {
    let fwd = model_forward_rate(curve, swap, s, MU).unwrap();
    let sd = implied_swaption_variance(curve, swap, s, MU, fwd, fwd).unwrap().sqrt();
    let strikes: Vec<f64> = (0..n).map(|i| fwd + width_sd * sd * (2.0 * i as f64 / (n - 1) as f64 - 1.0)).collect();
    let z: Vec<f64> = strikes
        .iter()
        .map(|&k| implied_swaption_variance(curve, swap, s, MU, fwd, k).unwrap())
        .collect();
    SwaptionSmile::from_variances(swap.fixing, fwd, &strikes, &z).unwrap()
}

// Mild skew on a wide node grid, so the slice is exactly representable by the calibration
// grid and the quoted strikes see essentially all of the mass.
const ATM: f64 = 5e-4;

fn target() -> GridSurface {
    let sd = ATM.sqrt();
    let xs: Vec<f64> = (0..61).map(|j| sd * (-10.0 + 20.0 * f64::from(j) / 60.0)).collect();
    let ws: Vec<f64> = xs.iter().map(|x| ATM + 0.05 * sd * x + 0.002 * x * x).collect();
    GridSurface::from_slice(T0, &xs, &ws).unwrap()
}

fn wide_config() -> CalibrationConfig {
    CalibrationConfig { nodes: 61, width_sd: 10.0, ..CalibrationConfig::default() }
}

#[test]
fn density_identity_holds_for_generated_smile() {
    let (curve, swap) = setup();
    let s = synthetic_smile(0.0108, MU, 0.1, 0.005).unwrap();
    let smile = smile_from(&curve, &swap, &s, 81, 4.0);
    let fwd = smile.forward();
    let sd = smile.point(fwd).w.sqrt();
    for z in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let r = swaption_density_residual(&curve, &swap, &s, MU, &smile, fwd + z * sd).unwrap();
        assert!(r.relative.abs() < 1e-4, "{r:?}");
    }
}

#[test]
fn self_generated_smile_has_no_residual_at_quotes() {
    let (curve, swap) = setup();
    let s = target();
    let smile = smile_from(&curve, &swap, &s, 141, 7.0);
    let fwd = smile.forward();
    let sd = smile.point(fwd).w.sqrt();
    let mut checked = 0;
    for &k in smile.strikes().iter().filter(|k| (**k - fwd).abs() <= 2.0 * sd) {
        let r = swaption_density_residual(&curve, &swap, &s, MU, &smile, k).unwrap();
        assert!(r.relative.abs() < 1e-8, "{r:?}");
        checked += 1;
    }
    assert!(checked > 30);
}

#[test]
fn calibration_round_trip() {
    let (curve, swap) = setup();
    let target = target();
    let smile = smile_from(&curve, &swap, &target, 71, 7.0);
    let sd = ATM.sqrt();
    let init = GridSurface::from_slice(T0, &[-sd, 0.0, sd], &[ATM; 3]).unwrap();
    let cfg = wide_config();
    let cal = calibrate_w_from_swaptions(&curve, &swap, MU, &smile, &init, &cfg).unwrap();
    assert!(cal.converged && cal.iterations < 20, "{:?}", cal.trace);
    assert!(cal.max_vol_error() < 0.5e-4, "{:e}", cal.max_vol_error());
    assert!(cal.max_scaled_density_residual() < 1e-4);
    assert!(cal.succeeded(&cfg));
    let mut worst: f64 = 0.0;
    for i in 0..=80 {
        let x = sd * (-2.0 + 4.0 * f64::from(i) / 80.0);
        let a = cal.surface.w(T0, x).unwrap();
        let b = target.w(T0, x).unwrap();
        worst = worst.max(((a - b) / b).abs());
    }
    assert!(worst < 1e-3, "{worst:e}");
}

#[test]
fn calibration_from_default_guess() {
    let (curve, swap) = setup();
    let target = target();
    let smile = smile_from(&curve, &swap, &target, 71, 7.0);
    let init = initial_guess(&curve, &swap, MU, &smile).unwrap();
    let cfg = wide_config();
    let cal = calibrate_w_from_swaptions(&curve, &swap, MU, &smile, &init, &cfg).unwrap();
    assert!(cal.succeeded(&cfg), "{:e} {:?}", cal.max_vol_error(), cal.trace);
}

#[test]
fn forward_consistency() {
    let (curve, swap) = setup();
    let s0 = swap.forward_rate(&curve);
    let flat = synthetic_flat(0.0108, MU).unwrap();
    let (mass, fwd) = curve_consistency(&curve, &swap, &flat, MU).unwrap();
    assert!((mass - 1.0).abs() < 1e-10 && (fwd - s0).abs() < 1e-10, "{mass} {fwd}");
    let (_, fwd) = curve_consistency(&curve, &swap, &target(), MU).unwrap();
    assert!((fwd - s0).abs() < 1e-6, "{fwd} {s0}");
    let skewed = synthetic_smile(0.0108, MU, 0.15, 0.01).unwrap();
    let (_, fwd) = curve_consistency(&curve, &swap, &skewed, MU).unwrap();
    assert!((fwd - s0).abs() < 1e-6, "{fwd} {s0}");
}

#[test]
fn smile_density_is_normalized() {
    let (curve, swap) = setup();
    // quoted wide enough that the kinks of flat extrapolation at the ends carry no mass
    let smile = smile_from(&curve, &swap, &target(), 71, 7.0);
    let ks = smile.strikes();
    let sd = smile.point(smile.forward()).w.sqrt();
    let (lo, hi) = (ks[0] - 6.0 * sd, ks[ks.len() - 1] + 6.0 * sd);
    let tol = Tolerance { abs: 1e-14, rel: 1e-12, max_intervals: 2000 };
    let mass = integrate(|k| smile.density(k), lo, hi, tol).value;
    assert!((mass - 1.0).abs() < 1e-6, "{mass}");
}

#[test]
fn flat_swaption_vols_give_w_slope_from_rate_curvature() {
    let (curve, swap) = setup();
    let fwd = swap.forward_rate(&curve);
    let vol = 0.0095;
    let sd = vol * T0.sqrt();
    let strikes: Vec<f64> = (0..41).map(|i| fwd + 5.0 * sd * (f64::from(i) / 20.0 - 1.0)).collect();
    let smile = SwaptionSmile::from_vols(T0, fwd, &strikes, &[vol; 41]).unwrap();
    let init = initial_guess(&curve, &swap, MU, &smile).unwrap();
    let cfg = CalibrationConfig::default();
    let cal = calibrate_w_from_swaptions(&curve, &swap, MU, &smile, &init, &cfg).unwrap();
    assert!(cal.converged);
    let level = cal.surface.w(T0, 0.0).unwrap();
    let h = 0.1 * level.sqrt();
    let slope = (cal.surface.w(T0, h).unwrap() - cal.surface.w(T0, -h).unwrap()) / (2.0 * h * level);
    // A Gaussian rate seen through x = S^{-1}(S) with S = F + a x + b x^2 / 2 has local normal
    // vol proportional to 1 - (b / a) x, and implied variance slope -(b / a) w.
    let fx = SwapFunctions::new(&curve, &swap, &cal.surface, MU);
    let d = |x: f64| fx.at_state(x, level, 0.0).unwrap().d_rate;
    let predicted = -(d(h) - d(-h)) / (2.0 * h) / d(0.0);
    assert!((slope - predicted).abs() < 0.01 * predicted.abs(), "{slope:e} {predicted:e}");
}

#[test]
fn three_strike_smile_converges() {
    let (curve, swap) = setup();
    let s = target();
    let fwd = model_forward_rate(&curve, &swap, &s, MU).unwrap();
    let sd = implied_swaption_variance(&curve, &swap, &s, MU, fwd, fwd).unwrap().sqrt();
    let strikes = [fwd - 0.5 * sd, fwd, fwd + 0.5 * sd];
    let z: Vec<f64> = strikes.iter().map(|&k| implied_swaption_variance(&curve, &swap, &s, MU, fwd, k).unwrap()).collect();
    let smile = SwaptionSmile::from_variances(T0, fwd, &strikes, &z).unwrap();
    let init = initial_guess(&curve, &swap, MU, &smile).unwrap();
    let cal = calibrate_w_from_swaptions(&curve, &swap, MU, &smile, &init, &CalibrationConfig::default()).unwrap();
    assert!(cal.converged, "{:?}", cal.trace);
    assert!(cal.w_nodes.iter().all(|w| w.is_finite() && *w > 0.0));
    // beyond the quotes the smile is flat, so the recovered wings carry no strong slope
    let n = cal.w_nodes.len();
    let edge = (cal.w_nodes[n - 1] - cal.w_nodes[0]).abs() / cal.w_nodes[n / 2];
    assert!(edge < 0.5, "{edge}");
}

#[test]
fn bumped_vol_moves_residual_with_density() {
    let (curve, swap) = setup();
    let s = target();
    let smile = smile_from(&curve, &swap, &s, 41, 4.0);
    let strikes = smile.strikes().to_vec();
    let j = 25;
    let mut vols = smile.vols();
    vols[j] += 1e-4;
    let bumped = SwaptionSmile::from_vols(T0, smile.forward(), &strikes, &vols).unwrap();
    for i in [j - 1, j, j + 1] {
        let k = strikes[i];
        let base = swaption_density_residual(&curve, &swap, &s, MU, &smile, k).unwrap();
        let moved = swaption_density_residual(&curve, &swap, &s, MU, &bumped, k).unwrap();
        let d_res = moved.residual - base.residual;
        let d_dens = bumped.density(k) - smile.density(k);
        assert!(d_res.abs() > 1e-6, "{d_res:e}");
        assert_eq!(d_res.signum(), d_dens.signum());
        assert!((d_res - d_dens).abs() < 1e-9 * d_dens.abs().max(1.0));
    }
}

#[test]
fn single_period_swap_has_small_residual() {
    let curve = FlatCurve::new(0.02).unwrap();
    let swap = SwapInstrument::regular(T0, 0.25, 1).unwrap();
    let flat = synthetic_flat(0.0108, MU).unwrap();
    let smile = smile_from(&curve, &swap, &flat, 81, 5.0);
    let fwd = smile.forward();
    let sd = smile.point(fwd).w.sqrt();
    for z in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let r = swaption_density_residual(&curve, &swap, &flat, MU, &smile, fwd + z * sd).unwrap();
        assert!(r.relative.abs() < 1e-5, "{r:?}");
    }
}
