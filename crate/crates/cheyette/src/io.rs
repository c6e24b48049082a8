//! File formats. Every number written goes out with 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cheyette_core::{SurfaceGrid, SwapInstrument};
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, Result};

/// `{:.16e}` for finite values, `NaN` / `inf` / `-inf` otherwise.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A JSON number carrying the same 17-digit text as [`fmt_num`]; `null` when not finite.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    Value::Number(fmt_num(x).parse().expect("formatted float is a JSON number"))
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| CliError::Io { path: path.into(), source: e.into() };
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row.iter().map(|&x| fmt_num(x))).map_err(err)?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io { path: path.into(), source: e.into() })?;
    w.write_all(b"\n").map_err(CliError::io(path))?;
    w.flush().map_err(CliError::io(path))
}

#[derive(Deserialize)]
struct SurfaceRow {
    #[serde(rename = "T")]
    t: f64,
    k: f64,
    sigma_imp: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceArrays {
    #[serde(rename = "T")]
    t: Vec<f64>,
    k: Vec<f64>,
    sigma_imp: Vec<f64>,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| CliError::parse(path, e))
}

/// Implied vol grid from a `T,k,sigma_imp` CSV, or JSON with the same fields as arrays.
pub fn read_surface(path: &Path) -> Result<SurfaceGrid> {
    let rows: Vec<(f64, f64, f64)> = if is_json(path) {
        let a: SurfaceArrays = serde_json::from_str(&read_text(path)?).map_err(|e| CliError::parse(path, e))?;
        if a.t.len() != a.k.len() || a.t.len() != a.sigma_imp.len() {
            return Err(CliError::parse(path, "T, k and sigma_imp must have equal lengths"));
        }
        a.t.iter().zip(&a.k).zip(&a.sigma_imp).map(|((&t, &k), &v)| (t, k, v)).collect()
    } else {
        read_csv_rows::<SurfaceRow>(path)?.into_iter().map(|r| (r.t, r.k, r.sigma_imp)).collect()
    };
    SurfaceGrid::from_rows(&rows).map_err(|e| CliError::parse(path, e))
}

pub fn write_surface(path: &Path, grid: &SurfaceGrid) -> Result<()> {
    let rows: Vec<Vec<f64>> = grid.rows().into_iter().map(|(t, k, v)| vec![t, k, v]).collect();
    write_csv(path, &["T", "k", "sigma_imp"], &rows)
}

#[derive(Deserialize)]
struct SmileRow {
    #[serde(rename = "T")]
    t: f64,
    k: f64,
    normal_vol: f64,
}

/// A single-expiry swaption smile.
#[derive(Debug, Clone, PartialEq)]
pub struct SmileQuotes {
    pub maturity: f64,
    pub strikes: Vec<f64>,
    pub vols: Vec<f64>,
}

/// Swaption smile from a `T,k,normal_vol` CSV with absolute strikes and one expiry.
pub fn read_smile(path: &Path) -> Result<SmileQuotes> {
    let rows = read_csv_rows::<SmileRow>(path)?;
    let Some(first) = rows.first() else {
        return Err(CliError::parse(path, "no quotes"));
    };
    let maturity = first.t;
    if rows.iter().any(|r| r.t != maturity) {
        return Err(CliError::parse(path, "all quotes must share one expiry"));
    }
    Ok(SmileQuotes {
        maturity,
        strikes: rows.iter().map(|r| r.k).collect(),
        vols: rows.iter().map(|r| r.normal_vol).collect(),
    })
}

pub fn write_smile(path: &Path, smile: &SmileQuotes) -> Result<()> {
    let rows: Vec<Vec<f64>> = smile.strikes.iter().zip(&smile.vols).map(|(&k, &v)| vec![smile.maturity, k, v]).collect();
    write_csv(path, &["T", "k", "normal_vol"], &rows)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Schedule {
    fixing: f64,
    payments: Vec<f64>,
    accruals: Vec<f64>,
}

/// Swap schedule JSON: `fixing`, `payments` (year fractions) and `accruals`.
pub fn read_schedule(path: &Path) -> Result<SwapInstrument> {
    let s: Schedule = serde_json::from_str(&read_text(path)?).map_err(|e| CliError::parse(path, e))?;
    SwapInstrument::new(s.fixing, s.payments, s.accruals).map_err(|e| CliError::parse(path, e))
}
