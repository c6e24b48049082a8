//! Run configuration: one JSON document, with command-line flags as dotted-path overrides.

use std::path::{Path, PathBuf};

use cheyette_core::localvol::LvGridSpec;
use cheyette_core::swaption::CalibrationConfig;
use cheyette_core::{McConfig, Order};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Environment variable naming the output directory when the config leaves it unset.
pub const OUT_DIR_ENV: &str = "CHEYETTE_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: Option<PathBuf>,
    /// Monte Carlo worker threads; 0 uses all cores.
    pub workers: usize,
    pub mu: f64,
    pub maturity: f64,
    pub order: OrderName,
    pub surface: SurfaceConfig,
    pub grid: GridConfig,
    pub mc: McSection,
    pub strikes: StrikeConfig,
    pub two_factor: TwoFactorConfig,
    pub mueff: MuEffConfig,
    pub swaption: SwaptionConfig,
    pub tolerances: ToleranceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: None,
            workers: 0,
            mu: 0.03,
            maturity: 10.0,
            order: OrderName::Third,
            surface: SurfaceConfig::default(),
            grid: GridConfig::default(),
            mc: McSection::default(),
            strikes: StrikeConfig::default(),
            two_factor: TwoFactorConfig::default(),
            mueff: MuEffConfig::default(),
            swaption: SwaptionConfig::default(),
            tolerances: ToleranceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderName {
    First,
    Third,
}

impl From<OrderName> for Order {
    fn from(o: OrderName) -> Self {
        match o {
            OrderName::First => Order::First,
            OrderName::Third => Order::Third,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Flat,
    Linear,
    Smile,
}

/// Either a surface file (`T,k,sigma_imp` CSV or JSON arrays) or a synthetic surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    pub file: Option<PathBuf>,
    pub kind: SurfaceKind,
    pub sigma0: f64,
    /// Mean reversion of the synthetic ATM term structure; the model `mu` when unset.
    pub mu: Option<f64>,
    pub skew: f64,
    pub curvature: f64,
    pub a: f64,
    pub b: f64,
    pub linear_maturity: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            file: None,
            kind: SurfaceKind::Smile,
            sigma0: 0.01,
            mu: None,
            skew: 0.2,
            curvature: 0.0,
            a: 1e-3,
            b: 0.0,
            linear_maturity: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub time_nodes: usize,
    pub space_nodes: usize,
    pub width_sd: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let d = LvGridSpec::default();
        Self { time_nodes: d.time_nodes, space_nodes: d.space_nodes, width_sd: d.width_sd }
    }
}

impl From<GridConfig> for LvGridSpec {
    fn from(g: GridConfig) -> Self {
        LvGridSpec { time_nodes: g.time_nodes, space_nodes: g.space_nodes, width_sd: g.width_sd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub n_paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for McSection {
    fn default() -> Self {
        let d = McConfig::default();
        Self { n_paths: d.n_paths, steps_per_year: d.steps_per_year, seed: d.seed, antithetic: d.antithetic }
    }
}

impl From<McSection> for McConfig {
    fn from(m: McSection) -> Self {
        McConfig { n_paths: m.n_paths, steps_per_year: m.steps_per_year, seed: m.seed, antithetic: m.antithetic }
    }
}

/// Strikes `k_i` spread evenly over `+-width_sd sqrt(w(T, 0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrikeConfig {
    pub count: usize,
    pub width_sd: f64,
}

impl Default for StrikeConfig {
    fn default() -> Self {
        Self { count: 21, width_sd: 2.0 }
    }
}

impl StrikeConfig {
    pub fn strikes(&self, sd: f64) -> Vec<f64> {
        if self.count <= 1 {
            return vec![0.0];
        }
        let n = (self.count - 1) as f64;
        (0..self.count).map(|i| self.width_sd * sd * (2.0 * i as f64 / n - 1.0)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoFactorConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub alpha: f64,
    pub rho: f64,
    /// Explicit second loading; derived from the normalization when unset.
    pub beta: Option<f64>,
}

impl Default for TwoFactorConfig {
    fn default() -> Self {
        Self { mu1: 0.0005, mu2: 0.5, alpha: 0.7, rho: 0.5, beta: None }
    }
}

/// Maturities of the `mu_eff` curve: the explicit list, or `t_max (i + 1) / count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuEffConfig {
    pub maturities: Vec<f64>,
    pub t_max: f64,
    pub count: usize,
}

impl Default for MuEffConfig {
    fn default() -> Self {
        Self { maturities: Vec::new(), t_max: 20.0, count: 80 }
    }
}

impl MuEffConfig {
    pub fn grid(&self) -> Vec<f64> {
        if !self.maturities.is_empty() {
            return self.maturities.clone();
        }
        (0..self.count).map(|i| self.t_max * (i + 1) as f64 / self.count as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwaptionConfig {
    /// Continuously compounded rate of the flat discount curve.
    pub curve_rate: f64,
    /// Schedule JSON (`fixing`, `payments`, `accruals`); a regular schedule when unset.
    pub schedule_file: Option<PathBuf>,
    pub fixing: f64,
    pub period: f64,
    pub periods: usize,
    /// Smile CSV with header `T,k,normal_vol`.
    pub smile_file: Option<PathBuf>,
    /// Forward the smile is quoted against; the curve forward swap rate when unset.
    pub forward: Option<f64>,
    pub calibration: CalibrationSection,
    /// Reprice the quoted strikes by simulation with the calibrated local vol.
    pub mc_check: bool,
    /// Only strikes within this many ATM standard deviations of the forward are simulated.
    pub mc_width_sd: f64,
}

impl Default for SwaptionConfig {
    fn default() -> Self {
        Self {
            curve_rate: 0.02,
            schedule_file: None,
            fixing: 5.0,
            period: 1.0,
            periods: 5,
            smile_file: None,
            forward: None,
            calibration: CalibrationSection::default(),
            mc_check: false,
            mc_width_sd: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub nodes: usize,
    pub width_sd: f64,
    pub damping: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub vol_tolerance: f64,
    pub density_tolerance: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let d = CalibrationConfig::default();
        Self {
            nodes: d.nodes,
            width_sd: d.width_sd,
            damping: d.damping,
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
            vol_tolerance: d.vol_tolerance,
            density_tolerance: d.density_tolerance,
        }
    }
}

impl From<CalibrationSection> for CalibrationConfig {
    fn from(c: CalibrationSection) -> Self {
        CalibrationConfig {
            nodes: c.nodes,
            width_sd: c.width_sd,
            damping: c.damping,
            max_iterations: c.max_iterations,
            tolerance: c.tolerance,
            vol_tolerance: c.vol_tolerance,
            density_tolerance: c.density_tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    /// Largest share of local-vol grid nodes that may be rejected before `localvol` fails.
    pub max_rejected_fraction: f64,
    /// Smile round trip: allowed deviation in normal vol ...
    pub roundtrip_vol: f64,
    /// ... or this many standard errors, whichever is larger.
    pub roundtrip_se: f64,
    pub swaption_mc_vol: f64,
    pub swaption_mc_se: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self { max_rejected_fraction: 0.1, roundtrip_vol: 1.5e-4, roundtrip_se: 3.0, swaption_mc_vol: 2e-4, swaption_mc_se: 3.0 }
    }
}

impl RunConfig {
    /// Defaults, then the config file if any, then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("default config serializes");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?;
            if !doc.is_object() {
                return Err(CliError::parse(path, "config must be a JSON object"));
            }
            merge(&mut value, doc);
        }
        for (key, raw) in overrides {
            set_path(&mut value, key, parse_scalar(raw))?;
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn mc(&self) -> McConfig {
        self.mc.into()
    }

    pub fn grid_spec(&self) -> LvGridSpec {
        self.grid.into()
    }

    /// Output directory: the config value, else `$CHEYETTE_OUT_DIR`, else the working directory.
    pub fn resolve_out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from("."),
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// A flag value is read as JSON when it parses, otherwise as a plain string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let unknown = || CliError::Config(format!("unknown key `{key}`"));
    let mut parts = key.split('.').peekable();
    let mut node = root;
    while let Some(part) = parts.next() {
        let map: &mut Map<String, Value> = node.as_object_mut().ok_or_else(unknown)?;
        let slot = map.get_mut(part).ok_or_else(unknown)?;
        if parts.peek().is_none() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(unknown())
}

/// Splits `--a.b value` and `--a.b=value` flags into `(key, value)` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(CliError::Usage(format!("unexpected argument `{arg}`; overrides look like --key.path value")));
        };
        if flag.is_empty() {
            return Err(CliError::Usage("empty flag `--`".into()));
        }
        match flag.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| CliError::Usage(format!("flag `--{flag}` needs a value")))?;
                out.push((flag.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}
