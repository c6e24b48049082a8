//! The five batch commands. Each writes its files into the output directory and returns the
//! lines to print; failures that still produce a report write it before returning the error.

use std::path::Path;

use cheyette_core::bachelier::{bh_price_from_variance, gaussian_density_p, implied_total_variance};
use cheyette_core::localvol::{implicit_residual, MeanReversionSource};
use cheyette_core::mc::{estimate_a, mc_implied_smile, price_short_rate_option, price_short_rate_put, Estimate};
use cheyette_core::surface::{check_arbitrage, synthetic_flat, synthetic_linear, synthetic_smile, GridSurface};
use cheyette_core::swaption::{
    calibrate_w_from_swaptions, initial_guess, mc_swaption_price_kind, Calibration, CalibrationConfig, SwaptionKind,
};
use cheyette_core::twofactor::{constants, mu_eff, SurfaceAtm};
use cheyette_core::{
    CheyetteParams1F, CheyetteParams2F, FlatCurve, LocalVolSurface, Order, PathEnsemble1F, SwapInstrument,
    SwaptionSmile, VarianceSurface,
};
use serde_json::{json, Value};

use crate::config::{RunConfig, SurfaceKind};
use crate::error::{CliError, Result};
use crate::io::{self, num, nums};
use crate::{igcheck, parallel};

pub type Surface = Box<dyn VarianceSurface>;

/// The configured surface: a file when one is given, otherwise the synthetic surface.
pub fn load_surface(cfg: &RunConfig) -> Result<Surface> {
    let s = &cfg.surface;
    if let Some(path) = &s.file {
        let grid = io::read_surface(path)?;
        let surface = GridSurface::build(&grid).map_err(|e| CliError::parse(path, e))?;
        return Ok(Box::new(surface));
    }
    let mu = s.mu.unwrap_or(cfg.mu);
    let synthetic = match s.kind {
        SurfaceKind::Flat => synthetic_flat(s.sigma0, mu),
        SurfaceKind::Linear => synthetic_linear(s.a, s.b, s.linear_maturity),
        SurfaceKind::Smile => synthetic_smile(s.sigma0, mu, s.skew, s.curvature),
    };
    Ok(Box::new(synthetic.map_err(|e| CliError::Config(format!("surface: {e}")))?))
}

fn build_lv<S: VarianceSurface + ?Sized>(surface: &S, cfg: &RunConfig, mu: f64, horizon: f64, order: Order) -> Result<LocalVolSurface> {
    LocalVolSurface::build(surface, |_| mu, MeanReversionSource::Constant(mu), horizon, order, cfg.grid_spec())
        .map_err(CliError::domain("local vol grid"))
}

fn params_1f(mu: f64) -> Result<CheyetteParams1F> {
    CheyetteParams1F::new(mu).map_err(CliError::domain("mu"))
}

fn order_name(order: Order) -> &'static str {
    match order {
        Order::First => "first",
        Order::Third => "third",
    }
}

fn lv_meta(lv: &LocalVolSurface) -> Value {
    let m = lv.metadata();
    json!({ "floored": m.floored, "rejected": m.rejected })
}

pub fn localvol(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let surface = load_surface(cfg)?;
    let order: Order = cfg.order.into();
    let lv = build_lv(&surface, cfg, cfg.mu, cfg.maturity, order)?;
    let nodes = lv.nodes();
    let rows: Vec<Vec<f64>> = nodes.iter().map(|&(t, x, v)| vec![t, x, v.sqrt()]).collect();
    let csv_path = out.join("localvol.csv");
    io::write_csv(&csv_path, &["t", "x", "sigma_loc"], &rows)?;

    let (mut w_fail, mut butterfly_fail, mut calendar_fail) = (0usize, 0usize, 0usize);
    for &(t, x, _) in &nodes {
        let r = check_arbitrage(&surface, t, x, cfg.mu);
        w_fail += usize::from(!r.w_positive);
        butterfly_fail += usize::from(r.w_positive && !r.butterfly);
        calendar_fail += usize::from(r.w_positive && !r.calendar);
    }
    let meta = lv.metadata();
    let rejected_fraction = meta.rejected as f64 / nodes.len() as f64;
    let diag = json!({
        "order": order_name(order),
        "mu": num(cfg.mu),
        "horizon": num(cfg.maturity),
        "time_nodes": cfg.grid.time_nodes,
        "space_nodes": cfg.grid.space_nodes,
        "floored": meta.floored,
        "rejected": meta.rejected,
        "rejected_fraction": num(rejected_fraction),
        "max_rejected_fraction": num(cfg.tolerances.max_rejected_fraction),
        "arbitrage": {
            "checked": nodes.len(),
            "w_nonpositive": w_fail,
            "butterfly": butterfly_fail,
            "calendar": calendar_fail,
        },
    });
    let diag_path = out.join("localvol_diagnostics.json");
    io::write_json(&diag_path, &diag)?;
    if rejected_fraction > cfg.tolerances.max_rejected_fraction {
        return Err(CliError::Arbitrage(format!(
            "{} of {} local vol nodes rejected (limit {})",
            meta.rejected,
            nodes.len(),
            cfg.tolerances.max_rejected_fraction
        )));
    }
    Ok(vec![
        format!("wrote {}", csv_path.display()),
        format!("wrote {}", diag_path.display()),
        format!("floored {} rejected {} of {} nodes", meta.floored, meta.rejected, nodes.len()),
    ])
}

struct McPoint {
    price: Estimate,
    vol: f64,
    band: f64,
}

fn mc_point(ens: &PathEnsemble1F, k: f64) -> McPoint {
    let smile = mc_implied_smile(ens, &[k]);
    match smile.points.first() {
        Some(p) => McPoint { price: p.price, vol: p.vol, band: p.band },
        None => {
            let price = if k >= 0.0 { price_short_rate_option(ens, k) } else { price_short_rate_put(ens, k) };
            McPoint { price, vol: f64::NAN, band: f64::NAN }
        }
    }
}

fn max_finite(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x) })
}

/// Input smile against the smiles recovered by simulation with first- and third-order local vol.
pub fn roundtrip(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let surface = load_surface(cfg)?;
    let t = cfg.maturity;
    let mu = cfg.mu;
    let params = params_1f(mu)?;
    let mc = cfg.mc();
    let atm = surface.w(t, 0.0).map_err(CliError::domain("ATM variance"))?;
    let strikes = cfg.strikes.strikes(atm.sqrt());

    let mut runs = Vec::new();
    for order in [Order::First, Order::Third] {
        let lv = build_lv(&surface, cfg, mu, t, order)?;
        let ens = parallel::simulate_1f(&params, &lv, t, &mc, cfg.workers)?;
        runs.push((lv, ens));
    }

    let tol = &cfg.tolerances;
    let mut rows = Vec::new();
    let mut price_rows = Vec::new();
    let mut dev = [Vec::new(), Vec::new()];
    let mut ok = [true, true];
    let mut se = [Vec::new(), Vec::new()];
    for &k in &strikes {
        let w = surface.w(t, k).unwrap_or(f64::NAN);
        let vol_in = (w / t).sqrt();
        // out-of-the-money prices, as simulated: calls at k >= 0, puts below
        let price_in = bh_price_from_variance(k.abs(), w).unwrap_or(f64::NAN);
        let pts: Vec<McPoint> = runs.iter().map(|(_, ens)| mc_point(ens, k)).collect();
        for m in 0..2 {
            let d = (pts[m].vol - vol_in).abs();
            let limit = tol.roundtrip_vol.max(tol.roundtrip_se * pts[m].band);
            ok[m] &= d <= limit;
            dev[m].push(d);
            se[m].push(pts[m].band);
        }
        rows.push(vec![k, vol_in, pts[0].vol, pts[1].vol, pts[1].band]);
        price_rows.push(vec![k, price_in, pts[0].price.value, pts[1].price.value, pts[0].price.stderr, pts[1].price.stderr]);
    }
    let csv_path = out.join("roundtrip.csv");
    io::write_csv(&csv_path, &["k", "vol_in", "vol_mc_first_order", "vol_mc_third_order", "se"], &rows)?;
    let prices_path = out.join("roundtrip_prices.csv");
    io::write_csv(
        &prices_path,
        &["k", "price_in", "price_mc_first_order", "price_mc_third_order", "se_first_order", "se_third_order"],
        &price_rows,
    )?;

    let (lv3, ens3) = &runs[1];
    let sd = atm.sqrt();
    let mut residuals = Vec::new();
    for k in [-sd, 0.0, sd] {
        let a = estimate_a(ens3, k);
        let r = implicit_residual(lv3, &a, &surface, mu, t, k).map_err(CliError::domain("implicit residual"))?;
        residuals.push(json!({
            "k": num(k),
            "local_var": num(r.local_var),
            "implied": num(r.implied),
            "residual": num(r.residual),
            "stderr": num(r.stderr),
            "a": num(a.a),
            "a_stderr": num(a.a_stderr),
        }));
    }
    let max_dev = [max_finite(dev[0].iter().copied()), max_finite(dev[1].iter().copied())];
    let summary = json!({
        "maturity": num(t),
        "mu": num(mu),
        "n_paths": mc.n_paths,
        "steps_per_year": mc.steps_per_year,
        "seed": mc.seed,
        "antithetic": mc.antithetic,
        "strikes": nums(&strikes),
        "max_abs_deviation": { "first_order": num(max_dev[0]), "third_order": num(max_dev[1]) },
        "max_se": { "first_order": num(max_finite(se[0].iter().copied())), "third_order": num(max_finite(se[1].iter().copied())) },
        "tolerance": { "vol": num(tol.roundtrip_vol), "se_multiple": num(tol.roundtrip_se) },
        "within_tolerance": { "first_order": ok[0], "third_order": ok[1] },
        "first_order_deviation_not_smaller": max_dev[0] >= max_dev[1],
        "mean_x": { "first_order": num(runs[0].1.mean_x().value), "third_order": num(ens3.mean_x().value) },
        "localvol": { "first_order": lv_meta(&runs[0].0), "third_order": lv_meta(lv3) },
        "implicit_residual": residuals,
    });
    let summary_path = out.join("roundtrip_summary.json");
    io::write_json(&summary_path, &summary)?;
    Ok(vec![
        format!("wrote {}", csv_path.display()),
        format!("wrote {}", prices_path.display()),
        format!("wrote {}", summary_path.display()),
        format!("max |vol_mc - vol_in|: first order {:.3e}, third order {:.3e}", max_dev[0], max_dev[1]),
    ])
}

fn params_2f(cfg: &RunConfig) -> Result<CheyetteParams2F> {
    let p = &cfg.two_factor;
    let params = match p.beta {
        Some(beta) => CheyetteParams2F::with_beta(p.mu1, p.mu2, p.alpha, beta, p.rho),
        None => CheyetteParams2F::new(p.mu1, p.mu2, p.alpha, p.rho),
    };
    params.map_err(CliError::domain("two-factor parameters"))
}

pub fn mueff(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let params = params_2f(cfg)?;
    constants(&params).map_err(CliError::domain("two-factor constants"))?;
    let surface = load_surface(cfg)?;
    let ts = SurfaceAtm(&surface);
    let mut rows = Vec::new();
    for t in cfg.mueff.grid() {
        let m = mu_eff(&params, &ts, t).map_err(CliError::domain(format!("mu_eff at T = {t}")))?;
        rows.push(vec![t, m]);
    }
    let path = out.join("mueff.csv");
    io::write_csv(&path, &["T", "mu_eff"], &rows)?;
    Ok(vec![format!("wrote {}", path.display()), format!("{} maturities, beta = {}", rows.len(), params.beta)])
}

fn swap_of(cfg: &RunConfig) -> Result<SwapInstrument> {
    let s = &cfg.swaption;
    match &s.schedule_file {
        Some(path) => io::read_schedule(path),
        None => SwapInstrument::regular(s.fixing, s.period, s.periods).map_err(|e| CliError::Config(format!("swaption schedule: {e}"))),
    }
}

fn calibration_report(cal: &Calibration, config: &CalibrationConfig, smile: &SwaptionSmile) -> Value {
    let residuals: Vec<Value> = cal
        .density_residuals
        .iter()
        .map(|r| {
            json!({
                "k": num(r.strike),
                "x": num(r.x),
                "swaption_density": num(r.swaption_density),
                "model_density": num(r.model_density),
                "residual": num(r.residual),
            })
        })
        .collect();
    let repricing: Vec<Value> = cal
        .repricing
        .iter()
        .map(|r| json!({ "k": num(r.strike), "market_vol": num(r.market_vol), "model_vol": num(r.model_vol) }))
        .collect();
    json!({
        "converged": cal.converged,
        "succeeded": cal.succeeded(config),
        "iterations": cal.iterations,
        "trace": nums(&cal.trace),
        "forward": num(smile.forward()),
        "max_vol_error": num(cal.max_vol_error()),
        "max_scaled_density_residual": num(cal.max_scaled_density_residual()),
        "max_relative_density_residual": num(cal.max_density_residual()),
        "tolerance": {
            "vol": num(config.vol_tolerance),
            "density": num(config.density_tolerance),
            "step": num(config.tolerance),
        },
        "nodes": { "x": nums(&cal.x_nodes), "w": nums(&cal.w_nodes) },
        "density_residuals": residuals,
        "repricing": repricing,
    })
}

/// Calibrates the short-rate variance slice at the fixing to a swaption smile.
pub fn calibrate_swaption(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let s = &cfg.swaption;
    let curve = FlatCurve::new(s.curve_rate).map_err(|e| CliError::Config(format!("swaption.curve_rate: {e}")))?;
    let swap = swap_of(cfg)?;
    let smile_path = s.smile_file.as_ref().ok_or_else(|| CliError::Config("swaption.smile_file is required".into()))?;
    let quotes = io::read_smile(smile_path)?;
    if (quotes.maturity - swap.fixing).abs() > 1e-9 {
        return Err(CliError::parse(smile_path, format!("smile expiry {} differs from the fixing {}", quotes.maturity, swap.fixing)));
    }
    let forward = s.forward.unwrap_or_else(|| swap.forward_rate(&curve));
    let smile = SwaptionSmile::from_vols(quotes.maturity, forward, &quotes.strikes, &quotes.vols)
        .map_err(|e| CliError::parse(smile_path, e))?;
    let config: CalibrationConfig = s.calibration.into();
    let mu = cfg.mu;
    let init = initial_guess(&curve, &swap, mu, &smile).map_err(|e| CliError::Calibration(e.to_string()))?;
    let cal = calibrate_w_from_swaptions(&curve, &swap, mu, &smile, &init, &config)
        .map_err(|e| CliError::Calibration(e.to_string()))?;

    let w_path = out.join("swaption_w.csv");
    let rows: Vec<Vec<f64>> = cal.x_nodes.iter().zip(&cal.w_nodes).map(|(&x, &w)| vec![x, w]).collect();
    io::write_csv(&w_path, &["x", "w"], &rows)?;
    let mut report = calibration_report(&cal, &config, &smile);
    let mut lines = vec![format!("wrote {}", w_path.display())];

    let succeeded = cal.succeeded(&config);
    if s.mc_check && succeeded {
        let (check, path) = swaption_mc_check(cfg, &curve, &swap, &cal, &smile, out)?;
        report["mc_check"] = check;
        lines.push(format!("wrote {}", path.display()));
    }
    let report_path = out.join("swaption_report.json");
    io::write_json(&report_path, &report)?;
    lines.push(format!("wrote {}", report_path.display()));
    if !succeeded {
        let trace: Vec<String> = cal.trace.iter().map(|r| format!("{r:.3e}")).collect();
        return Err(CliError::Calibration(format!(
            "not within tolerance after {} iterations (converged {}, vol error {:.3e}, density residual {:.3e}); step trace [{}]",
            cal.iterations,
            cal.converged,
            cal.max_vol_error(),
            cal.max_scaled_density_residual(),
            trace.join(", ")
        )));
    }
    lines.push(format!(
        "converged in {} iterations, max vol error {:.3e}, density residual {:.3e}",
        cal.iterations,
        cal.max_vol_error(),
        cal.max_scaled_density_residual()
    ));
    Ok(lines)
}

/// Out-of-the-money swaption prices by simulation with the calibrated local vol, as normal vols.
fn swaption_mc_check(
    cfg: &RunConfig,
    curve: &FlatCurve,
    swap: &SwapInstrument,
    cal: &Calibration,
    smile: &SwaptionSmile,
    out: &Path,
) -> Result<(Value, std::path::PathBuf)> {
    let t0 = swap.fixing;
    let mu = cfg.mu;
    let lv = build_lv(&cal.surface, cfg, mu, t0, Order::Third)?;
    let mc = cfg.mc();
    let ens = parallel::simulate_1f(&params_1f(mu)?, &lv, t0, &mc, cfg.workers)?;
    let fwd = smile.forward();
    let tol = &cfg.tolerances;
    let mut rows = Vec::new();
    let (mut max_dev, mut max_se, mut ok, mut skipped) = (0.0f64, 0.0f64, true, 0usize);
    let band_width = cfg.swaption.mc_width_sd * smile.point(fwd).w.sqrt();
    for (&k, vol_in) in smile.strikes().iter().zip(smile.vols()) {
        if (k - fwd).abs() > band_width {
            continue;
        }
        let kind = if k >= fwd { SwaptionKind::Payer } else { SwaptionKind::Receiver };
        let price = mc_swaption_price_kind(curve, swap, mu, &ens, k, kind);
        let shifted = (k - fwd).abs();
        let (vol, band) = match implied_total_variance(price.value, shifted) {
            Ok(w) => {
                let vol = (w / t0).sqrt();
                let vega = gaussian_density_p(shifted, w).map_or(0.0, |p| p * vol * t0);
                (vol, if vega > 0.0 { price.stderr / vega } else { f64::INFINITY })
            }
            Err(_) => {
                skipped += 1;
                (f64::NAN, f64::NAN)
            }
        };
        if vol.is_finite() {
            let d = (vol - vol_in).abs();
            ok &= d <= tol.swaption_mc_vol.max(tol.swaption_mc_se * band);
            max_dev = max_dev.max(d);
            max_se = max_se.max(band);
        }
        rows.push(vec![k, vol_in, vol, band]);
    }
    let path = out.join("swaption_mc.csv");
    io::write_csv(&path, &["k", "vol_in", "vol_mc", "se"], &rows)?;
    let check = json!({
        "n_paths": mc.n_paths,
        "steps_per_year": mc.steps_per_year,
        "seed": mc.seed,
        "width_sd": num(cfg.swaption.mc_width_sd),
        "strikes": rows.len(),
        "max_abs_deviation": num(max_dev),
        "max_se": num(max_se),
        "skipped": skipped,
        "tolerance": { "vol": num(tol.swaption_mc_vol), "se_multiple": num(tol.swaption_mc_se) },
        "within_tolerance": ok && skipped == 0,
        "localvol": lv_meta(&lv),
    });
    Ok((check, path))
}

pub fn ig_check(out: &Path) -> Result<Vec<String>> {
    let report = igcheck::run().map_err(CliError::domain("ig check"))?;
    let path = out.join("ig_check.json");
    io::write_json(&path, &report.to_json())?;
    let mut lines = report.table();
    lines.push(format!("wrote {}", path.display()));
    Ok(lines)
}
